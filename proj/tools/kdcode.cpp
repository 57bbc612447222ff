#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kdcode/experiment.hpp"

using namespace kdc;
namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd, bool required = true) {
        auto* opt = cmd->add_option("-c,--config", path, "Experiment config file")->check(CLI::ExistingFile);
        if (required) opt->required();
        cmd->add_option("-s,--set", overrides, "Override a config key, key=value (repeatable)");
    }

    ExperimentConfig load() const {
        ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        cfg.validate();
        return cfg;
    }
};

void emit(const std::vector<RunReport>& reports, const std::string& report_path) {
    write_table(std::cout, reports);
    if (!report_path.empty()) save_reports(report_path, reports);
}

std::vector<std::string> split_values(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != ' ') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kdcode: learn K-way D-dimensional discrete codes for embedding layers"};
    app.require_subcommand(1);

    auto* config_cmd = app.add_subcommand("config", "Print the documented default configuration");
    std::string config_out;
    config_cmd->add_option("-o,--out", config_out, "Write to a file instead of stdout");

    auto* fit = app.add_subcommand("fit-codes", "Learn codes and write the code table, codebook and reports");
    ConfigArgs fit_cfg;
    fit_cfg.attach(fit);
    std::string fit_out;
    bool fit_timing = false;
    fit->add_option("-o,--out", fit_out, "Artifact directory")->required();
    fit->add_flag("--timing", fit_timing, "Record wall time in report.jsonl");

    auto* eval = app.add_subcommand("eval", "Score stored artifacts without training");
    ConfigArgs eval_cfg;
    eval_cfg.attach(eval);
    std::string eval_dir, eval_report;
    eval->add_option("-a,--artifacts", eval_dir, "Directory written by fit-codes")->required()->check(CLI::ExistingDirectory);
    eval->add_option("-r,--report", eval_report, "Write the report as JSON lines");

    auto* base = app.add_subcommand("baseline", "Run a baseline method");
    ConfigArgs base_cfg;
    base_cfg.attach(base);
    std::string base_method, base_report;
    base->add_option("-m,--method", base_method, "Baseline method")
        ->required()
        ->check(CLI::IsMember(baseline_methods()));
    base->add_option("-r,--report", base_report, "Write the report as JSON lines");

    auto* sweep_cmd = app.add_subcommand("sweep", "One fit per value of a config axis");
    ConfigArgs sweep_cfg;
    sweep_cfg.attach(sweep_cmd);
    std::string sweep_axis, sweep_values, sweep_report;
    sweep_cmd->add_option("--axis", sweep_axis, "K, D, code_dim or composer")
        ->required()
        ->check(CLI::IsMember({"K", "D", "code_dim", "composer"}));
    sweep_cmd->add_option("--values", sweep_values, "Comma-separated values, e.g. 2,4,8")->required();
    sweep_cmd->add_option("-r,--report", sweep_report, "Write the reports as JSON lines");

    auto* abl = app.add_subcommand("ablation", "The six optimization-trick ablation rows");
    ConfigArgs abl_cfg;
    abl_cfg.attach(abl);
    std::string abl_report;
    abl->add_option("-r,--report", abl_report, "Write the reports as JSON lines");

    auto* probe = app.add_subcommand("probe-codes", "List symbols grouped by code");
    std::string probe_codes, probe_embeddings;
    std::size_t probe_groups = 0;
    probe->add_option("--codes", probe_codes, "Code table (codes.txt)")->required()->check(CLI::ExistingFile);
    probe->add_option("--embeddings", probe_embeddings, "Embedding file for cosine statistics")
        ->check(CLI::ExistingFile);
    probe->add_option("-n,--max-groups", probe_groups, "Print at most this many groups (0 = all)");

    auto* synth = app.add_subcommand("synth", "Write clustered synthetic embeddings as a text file");
    std::string synth_out;
    std::size_t synth_vocab = 1000, synth_dim = 32, synth_clusters = 20;
    double synth_spread = 0.3;
    std::uint64_t synth_seed = 1;
    synth->add_option("-o,--out", synth_out, "Output file")->required();
    synth->add_option("--vocab", synth_vocab, "Number of symbols");
    synth->add_option("--dim", synth_dim, "Embedding width");
    synth->add_option("--clusters", synth_clusters, "Number of clusters");
    synth->add_option("--spread", synth_spread, "Within-cluster standard deviation");
    synth->add_option("--seed", synth_seed, "Generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*config_cmd) {
            if (config_out.empty()) {
                write_config(std::cout, ExperimentConfig{});
            } else {
                std::ofstream os(config_out);
                if (!os) throw Error("cannot write " + config_out);
                write_config(os, ExperimentConfig{});
            }
        } else if (*fit) {
            const auto run = fit_codes_to_dir(fit_cfg.load(), fit_out, fit_timing);
            write_table(std::cout, {run.report});
            const auto stats = code_space_stats(*run.codes);
            std::cout << "codes: " << stats.unique_codes << " distinct of " << run.codes->vocab() << " symbols, "
                      << stats.collisions << " collisions\n";
        } else if (*eval) {
            const auto cfg = eval_cfg.load();
            const fs::path dir(eval_dir);
            Dataset data = load_dataset(cfg);
            auto report = evaluate_artifacts(cfg, data, load_code_table((dir / "codes.txt").string()),
                                             load_codebook((dir / "codebook.kdcb").string()),
                                             load_params((dir / "head.json").string()));
            emit({report}, eval_report);
        } else if (*base) {
            const auto cfg = base_cfg.load();
            Dataset data = load_dataset(cfg);
            emit({run_baseline(cfg, data, base_method).report}, base_report);
        } else if (*sweep_cmd) {
            auto result = sweep(sweep_cfg.load(), sweep_axis, split_values(sweep_values));
            if (!result.reports.empty()) emit(result.reports, sweep_report);
            if (result.error) throw Error("sweep stopped at " + *result.error);
        } else if (*abl) {
            emit(ablation(abl_cfg.load()), abl_report);
        } else if (*probe) {
            const auto table = load_code_table(probe_codes);
            write_code_groups(std::cout, table, probe_groups);
            if (!probe_embeddings.empty()) {
                auto [vocab, emb] = load_embeddings(probe_embeddings);
                if (vocab.size() != table.vocab()) throw Error("embedding file and code table disagree on N");
                const auto s = code_semantics_probe(table, emb.vectors);
                if (!s.available) {
                    std::cout << "no two symbols share a code\n";
                } else {
                    std::cout << "intra-code cosine " << s.intra << " (" << s.intra_pairs << " pairs, stderr "
                              << s.intra_stderr << "), global " << s.global << '\n';
                }
            }
        } else if (*synth) {
            auto ce = make_clustered_embeddings(synth_vocab, synth_dim, synth_clusters, synth_spread, synth_seed);
            save_embeddings(synth_out, VocabTable::numbered(synth_vocab), ce.vectors);
        }
    } catch (const std::exception& e) {
        std::cerr << "kdcode: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
