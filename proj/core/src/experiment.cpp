#include "kdcode/experiment.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace kdc {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::unique_ptr<Task> make_task(const Dataset& data) {
    if (data.task == "classification") {
        return std::make_unique<ClassificationTask>(*data.train, *data.validation, data.dim, data.test);
    }
    if (!data.embeddings) throw Error("reconstruction needs target embeddings");
    return std::make_unique<ReconstructionTask>(*data.embeddings);
}

ConfigEcho run_echo(const ExperimentConfig& cfg, const Dataset& data, const std::string& method,
                    const std::string& layer) {
    ConfigEcho e{{"method", method},
                 {"layer", layer},
                 {"vocab", std::to_string(data.vocab.size())},
                 {"dim", std::to_string(data.dim)}};
    for (auto& kv : cfg.echo()) e.push_back(std::move(kv));
    return e;
}

// Fills the metric fields of `out.report` from the inference embeddings.
void score(const ExperimentConfig& cfg, const Dataset& data, const Task& task, RunArtifacts& out,
           bool compare_to_reference) {
    const auto m = task.test(out.head, out.embeddings);
    out.report.task_loss = m.loss;
    out.report.accuracy = m.accuracy;
    if (data.embeddings && (data.task == "reconstruction" || compare_to_reference)) {
        out.report.reconstruction_error = reconstruction_mse(out.embeddings, *data.embeddings);
        if (cfg.nn_k < data.vocab.size()) out.report.nn_overlap = nn_overlap(*data.embeddings, out.embeddings, cfg.nn_k);
    }
}

diff::ParamStore head_params(const diff::ParamStore& all) {
    diff::ParamStore head;
    for (const auto& [k, v] : all) {
        if (k.rfind("task/", 0) == 0) head.emplace(k, v);
    }
    return head;
}

// Trains `layer` on the task and scores the best checkpoint.
RunArtifacts train_layer(const ExperimentConfig& cfg, const Dataset& data, EmbeddingLayer& layer,
                         const std::string& method, const std::string& family, bool compare_to_reference) {
    const auto t0 = Clock::now();
    auto task = make_task(data);
    Trainer trainer(cfg.train_config(), layer, *task);
    auto fit = trainer.fit();

    RunArtifacts out;
    out.report.method = method;
    out.report.config = run_echo(cfg, data, method, family);
    apply_accounting(out.report);
    if (out.report.bits != layer.bits() || out.report.params != layer.param_count()) {
        throw Error("run '" + method + "': layer size disagrees with the configuration accounting");
    }
    out.history = fit.history;
    out.head = head_params(fit.best);
    out.embeddings = layer.infer(fit.best);
    if (auto* kd = dynamic_cast<KdEmbeddingLayer*>(&layer)) {
        out.codes = kd->codes(fit.best);
        out.codebook = kd->codebook(fit.best);
    }
    score(cfg, data, *task, out, compare_to_reference);
    out.report.wall_seconds = seconds_since(t0);
    return out;
}

KdLayerConfig kd_layer_config(const ExperimentConfig& cfg, Dataset& data) {
    KdLayerConfig l;
    l.codes = cfg.code_config(data.vocab.size());
    l.composer = cfg.composer_spec();
    l.out_dim = data.dim;
    l.relaxation = cfg.relaxation;
    l.guidance = cfg.train_config().guidance;
    if (cfg.guidance == GuidanceMode::Pretrained) l.pretrained = reference_embeddings(cfg, data);
    return l;
}

std::string kd_method(const ExperimentConfig& cfg) {
    std::string m = "kd-K" + std::to_string(cfg.way) + "-D" + std::to_string(cfg.dims);
    if (cfg.guidance != GuidanceMode::None) m += std::string("-") + guidance_name(cfg.guidance);
    return m;
}

}  // namespace

Dataset load_dataset(const ExperimentConfig& cfg) {
    cfg.validate();
    Dataset d;
    d.task = cfg.task;
    if (!cfg.embeddings.empty()) {
        auto [vocab, emb] = load_embeddings(cfg.embeddings);
        d.vocab = std::move(vocab);
        d.dim = emb.vectors.cols();
        d.embeddings = std::move(emb.vectors);
    }
    if (cfg.task == "reconstruction") {
        if (!d.embeddings) {
            auto ce = make_clustered_embeddings(cfg.synthetic_vocab, cfg.synthetic_dim, cfg.synthetic_clusters,
                                                cfg.synthetic_spread, cfg.synthetic_seed);
            d.vocab = VocabTable::numbered(cfg.synthetic_vocab);
            d.dim = cfg.synthetic_dim;
            d.embeddings = std::move(ce.vectors);
        }
        return d;
    }
    MarkerCorpusSpec spec{cfg.corpus_vocab,     cfg.corpus_classes, cfg.corpus_markers,
                          cfg.corpus_documents, cfg.corpus_length,  cfg.corpus_markers_per_doc};
    auto all = make_marker_corpus(spec, cfg.corpus_seed);
    auto [rest, test] = split_corpus(all, cfg.corpus_test, cfg.corpus_seed + 1);
    auto [train, val] = split_corpus(rest, cfg.corpus_validation / (1.0 - cfg.corpus_test), cfg.corpus_seed + 2);
    if (d.embeddings) {
        if (d.vocab.size() != cfg.corpus_vocab) throw Error("embedding file size does not match corpus.vocab");
    } else {
        d.vocab = VocabTable::numbered(cfg.corpus_vocab);
        d.dim = cfg.corpus_dim;
    }
    d.train = std::move(train);
    d.validation = std::move(val);
    d.test = std::move(test);
    return d;
}

const Tensor& reference_embeddings(const ExperimentConfig& cfg, Dataset& data) {
    if (!data.embeddings) {
        FullEmbeddingLayer layer(data.vocab.size(), data.dim);
        auto task = make_task(data);
        Trainer trainer(cfg.train_config(), layer, *task);
        data.embeddings = layer.infer(trainer.fit().best);
    }
    return *data.embeddings;
}

RunArtifacts run_kd(const ExperimentConfig& cfg, Dataset& data) {
    KdEmbeddingLayer layer(kd_layer_config(cfg, data));
    return train_layer(cfg, data, layer, kd_method(cfg), "kd", false);
}

const std::vector<std::string>& baseline_methods() {
    static const std::vector<std::string> m{"full", "low-rank", "pq", "scalar", "random-codes", "pretrained-codes"};
    return m;
}

RunArtifacts run_baseline(const ExperimentConfig& cfg, Dataset& data, const std::string& method) {
    const bool classify = data.task == "classification";
    if (method == "full") {
        if (!classify) {
            const auto t0 = Clock::now();
            RunArtifacts out;
            out.report.method = "full";
            out.report.config = run_echo(cfg, data, "full", "full");
            apply_accounting(out.report);
            out.embeddings = *data.embeddings;
            auto task = make_task(data);
            score(cfg, data, *task, out, true);
            out.report.wall_seconds = seconds_since(t0);
            return out;
        }
        FullEmbeddingLayer layer(data.vocab.size(), data.dim);
        auto out = train_layer(cfg, data, layer, "full", "full", false);
        if (!data.embeddings) data.embeddings = out.embeddings;
        return out;
    }
    if (method == "low-rank" || method == "pq" || method == "scalar") {
        const auto t0 = Clock::now();
        const Tensor& u = reference_embeddings(cfg, data);
        QuantizationResult q;
        std::string family = method;
        if (method == "low-rank") {
            LowRankOptions opts;
            opts.seed = cfg.seed;
            q = low_rank_baseline(u, cfg.lowrank_rank, opts);
        } else if (method == "pq") {
            q = product_quantization_baseline(u, cfg.pq_subspaces, cfg.pq_centroids, cfg.seed);
        } else {
            q = scalar_quantization_baseline(u, cfg.scalar_bits);
        }
        if (classify) {
            FrozenEmbeddingLayer layer(q.method, q.reconstruction, q.params, q.bits);
            auto out = train_layer(cfg, data, layer, q.method, family, true);
            out.report.wall_seconds = seconds_since(t0);
            return out;
        }
        RunArtifacts out;
        out.report.method = q.method;
        out.report.config = run_echo(cfg, data, q.method, family);
        apply_accounting(out.report);
        if (out.report.bits != q.bits || out.report.params != q.params) {
            throw Error("run '" + q.method + "': baseline size disagrees with the configuration accounting");
        }
        out.embeddings = q.reconstruction;
        auto task = make_task(data);
        score(cfg, data, *task, out, true);
        out.report.wall_seconds = seconds_since(t0);
        return out;
    }
    if (method == "random-codes" || method == "pretrained-codes") {
        auto l = kd_layer_config(cfg, data);
        l.guidance = {};
        l.pretrained.reset();
        if (method == "random-codes") {
            l.frozen_codes = random_codes(data.vocab.size(), cfg.way, cfg.dims, cfg.seed + 1000);
        } else {
            auto tc = cfg.train_config();
            if (tc.guidance.mode == GuidanceMode::Online) tc.guidance.mode = GuidanceMode::None;
            l.frozen_codes = pretrained_codes(reference_embeddings(cfg, data), l.codes, l.composer, tc);
        }
        ExperimentConfig plain = cfg;
        plain.guidance = GuidanceMode::None;
        KdEmbeddingLayer layer(l);
        return train_layer(plain, data, layer, method, "kd", false);
    }
    throw Error("unknown baseline method '" + method + "'");
}

RunReport evaluate_artifacts(const ExperimentConfig& cfg, Dataset& data, const DiscreteCodeTable& codes,
                             const CodeBook& book, const diff::ParamStore& head) {
    if (codes.vocab() != data.vocab.size()) throw Error("eval: code table and dataset disagree on N");
    if (book.out_dim != data.dim) throw Error("eval: codebook width and dataset disagree");
    ExperimentConfig c = cfg;
    c.way = codes.way();
    c.dims = codes.dims();
    c.code_dim = book.code_dim;
    c.composer = book.spec.kind;
    c.hidden = book.spec.hidden;
    c.lstm_tied_gate = book.spec.lstm_tied_output_gate;
    RunArtifacts out;
    out.report.method = kd_method(c);
    out.report.config = run_echo(c, data, out.report.method, "kd");
    apply_accounting(out.report);
    out.head = head;
    out.embeddings = compose_batch(codes, book);
    auto task = make_task(data);
    score(c, data, *task, out, false);
    return out.report;
}

SweepResult sweep(const ExperimentConfig& base, const std::string& axis, const std::vector<std::string>& values) {
    if (axis != "K" && axis != "D" && axis != "code_dim" && axis != "composer") {
        throw Error("sweep: axis must be K, D, code_dim or composer");
    }
    SweepResult r;
    Dataset data = load_dataset(base);
    for (const auto& v : values) {
        try {
            ExperimentConfig cfg = base;
            cfg.set(axis, v);
            auto run = run_kd(cfg, data);
            run.report.method += " " + axis + "=" + v;
            r.reports.push_back(std::move(run.report));
        } catch (const Error& e) {
            r.error = axis + "=" + v + ": " + e.what();
            break;
        }
    }
    return r;
}

const std::vector<std::string>& ablation_labels() {
    static const std::vector<std::string> l{"cr", "cr+ste", "+schedule", "+entropy", "+pdg-ae", "+pdg+ae"};
    return l;
}

std::vector<ExperimentConfig> ablation_configs(const ExperimentConfig& base) {
    std::vector<ExperimentConfig> rows;
    ExperimentConfig c = base;
    c.relaxation = Relaxation::Continuous;
    c.schedule = ScheduleKind::Constant;
    c.entropy_weight = 0;
    c.guidance = GuidanceMode::None;
    rows.push_back(c);
    c.relaxation = Relaxation::StraightThrough;
    rows.push_back(c);
    c.schedule = ScheduleKind::Exponential;
    rows.push_back(c);
    c.entropy_weight = base.entropy_weight > 0 ? base.entropy_weight : 0.01;
    rows.push_back(c);
    c.guidance = GuidanceMode::Pretrained;
    c.autoencoder = false;
    rows.push_back(c);
    c.autoencoder = true;
    rows.push_back(c);
    return rows;
}

std::vector<RunReport> ablation(const ExperimentConfig& base) {
    Dataset data = load_dataset(base);
    const auto cfgs = ablation_configs(base);
    std::vector<RunReport> out;
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
        auto run = run_kd(cfgs[i], data);
        run.report.method = ablation_labels()[i];
        out.push_back(std::move(run.report));
    }
    return out;
}

double primary_metric(const RunReport& r) {
    if (r.accuracy) return 1.0 - *r.accuracy;
    if (r.reconstruction_error) return *r.reconstruction_error;
    if (r.task_loss) return *r.task_loss;
    throw Error("report '" + r.method + "' carries no metric");
}

// ---------------------------------------------------------------------------

void save_params(const std::string& path, const diff::ParamStore& params) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [name, t] : params) {
        j[name] = {{"shape", t.shape()}, {"values", t.storage()}};
    }
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    os << j.dump() << '\n';
}

diff::ParamStore load_params(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read " + path);
    diff::ParamStore out;
    try {
        auto j = nlohmann::json::parse(is);
        for (const auto& [name, v] : j.items()) {
            out.emplace(name, Tensor(v.at("shape").get<Shape>(), v.at("values").get<std::vector<double>>()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("cannot parse " + path + ": " + e.what());
    }
    return out;
}

RunArtifacts fit_codes_to_dir(const ExperimentConfig& cfg, const std::string& dir, bool timing) {
    Dataset data = load_dataset(cfg);
    auto run = run_kd(cfg, data);
    std::filesystem::create_directories(dir);
    const std::filesystem::path base(dir);
    auto codes = *run.codes;
    codes.set_symbols(data.vocab.symbols());
    save_code_table((base / "codes.txt").string(), codes);
    save_codebook((base / "codebook.kdcb").string(), *run.codebook);
    save_params((base / "head.json").string(), run.head);
    {
        std::ofstream os(base / "metrics.jsonl");
        if (!os) throw Error("cannot write " + (base / "metrics.jsonl").string());
        write_metrics(os, run.history);
    }
    RunReport rep = run.report;
    if (!timing) rep.wall_seconds.reset();
    save_reports((base / "report.jsonl").string(), {rep});
    return run;
}

}  // namespace kdc
