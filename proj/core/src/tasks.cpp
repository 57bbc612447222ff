#include "kdcode/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace kdc {

VocabTable::VocabTable(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
        if (!index_.emplace(symbols_[i], i).second) throw Error("vocabulary: duplicate symbol '" + symbols_[i] + "'");
    }
}

VocabTable VocabTable::numbered(std::size_t n, const std::string& prefix) {
    std::vector<std::string> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = prefix + std::to_string(i);
    return VocabTable(std::move(s));
}

std::optional<std::size_t> VocabTable::find(const std::string& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::pair<VocabTable, PretrainedEmbeddings> read_embeddings(std::istream& is) {
    std::vector<std::string> symbols;
    std::vector<double> values;
    std::size_t dim = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::istringstream ls(line);
        std::string token, field;
        ls >> token;
        std::size_t count = 0;
        while (ls >> field) {
            std::size_t used = 0;
            double v = 0;
            try {
                v = std::stod(field, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != field.size()) {
                throw Error("embeddings: line " + std::to_string(lineno) + ": non-numeric field '" + field + "'");
            }
            values.push_back(v);
            ++count;
        }
        if (count == 0) throw Error("embeddings: line " + std::to_string(lineno) + " has no vector");
        if (dim == 0) dim = count;
        if (count != dim) {
            throw Error("embeddings: line " + std::to_string(lineno) + " has " + std::to_string(count) +
                        " values, expected " + std::to_string(dim));
        }
        symbols.push_back(token);
    }
    if (symbols.empty()) throw Error("embeddings: empty vocabulary");
    VocabTable vocab(symbols);
    PretrainedEmbeddings emb{symbols, Tensor({symbols.size(), dim}, std::move(values))};
    return {std::move(vocab), std::move(emb)};
}

std::pair<VocabTable, PretrainedEmbeddings> load_embeddings(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read " + path);
    return read_embeddings(is);
}

void write_embeddings(std::ostream& os, const VocabTable& vocab, const Tensor& vectors, int precision) {
    if (vocab.size() != vectors.rows()) throw Error("embeddings: vocabulary and matrix sizes differ");
    os << std::setprecision(precision);
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        os << vocab[i];
        for (double v : vectors.row(i)) os << ' ' << v;
        os << '\n';
    }
}

void save_embeddings(const std::string& path, const VocabTable& vocab, const Tensor& vectors, int precision) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    write_embeddings(os, vocab, vectors, precision);
}

// ---------------------------------------------------------------------------

ClusteredEmbeddings make_clustered_embeddings(std::size_t vocab, std::size_t dim, std::size_t clusters,
                                              double spread, std::uint64_t seed) {
    if (clusters == 0 || clusters > vocab) throw Error("clustered embeddings: need 1 <= clusters <= N");
    Rng rng(seed);
    const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
    ClusteredEmbeddings out;
    out.centers = normal_tensor({clusters, dim}, 0.0, sd, rng);
    out.cluster.resize(vocab);
    for (std::size_t i = 0; i < vocab; ++i) out.cluster[i] = i % clusters;
    std::shuffle(out.cluster.begin(), out.cluster.end(), rng);
    out.vectors = normal_tensor({vocab, dim}, 0.0, spread * sd, rng);
    for (std::size_t i = 0; i < vocab; ++i) {
        auto c = out.centers.row(out.cluster[i]);
        auto r = out.vectors.row(i);
        for (std::size_t j = 0; j < dim; ++j) r[j] += c[j];
    }
    return out;
}

void LabeledCorpus::validate() const {
    if (documents.size() != labels.size()) throw Error("corpus: documents and labels differ in count");
    for (const auto& d : documents) {
        for (auto t : d) {
            if (t >= vocab) throw Error("corpus: token " + std::to_string(t) + " outside vocabulary");
        }
    }
    for (auto l : labels) {
        if (l >= classes) throw Error("corpus: label " + std::to_string(l) + " outside class range");
    }
}

LabeledCorpus make_marker_corpus(const MarkerCorpusSpec& spec, std::uint64_t seed) {
    const std::size_t markers = spec.classes * spec.markers_per_class;
    if (markers >= spec.vocab) throw Error("marker corpus: vocabulary too small for the markers");
    if (spec.markers_per_doc > spec.doc_length) throw Error("marker corpus: more markers than tokens per document");
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> cls(0, spec.classes - 1);
    std::uniform_int_distribution<std::size_t> mark(0, spec.markers_per_class - 1);
    std::uniform_int_distribution<std::size_t> distractor(markers, spec.vocab - 1);
    LabeledCorpus c;
    c.classes = spec.classes;
    c.vocab = spec.vocab;
    for (std::size_t d = 0; d < spec.documents; ++d) {
        const std::size_t label = cls(rng);
        std::vector<std::size_t> doc;
        for (std::size_t m = 0; m < spec.markers_per_doc; ++m) doc.push_back(label * spec.markers_per_class + mark(rng));
        while (doc.size() < spec.doc_length) doc.push_back(distractor(rng));
        std::shuffle(doc.begin(), doc.end(), rng);
        c.documents.push_back(std::move(doc));
        c.labels.push_back(label);
    }
    return c;
}

std::pair<LabeledCorpus, LabeledCorpus> split_corpus(const LabeledCorpus& corpus, double fraction, std::uint64_t seed) {
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(corpus.size())));
    LabeledCorpus keep{{}, {}, corpus.classes, corpus.vocab}, out{{}, {}, corpus.classes, corpus.vocab};
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto& dst = i < held ? out : keep;
        dst.documents.push_back(corpus.documents[order[i]]);
        dst.labels.push_back(corpus.labels[order[i]]);
    }
    return {std::move(keep), std::move(out)};
}

// ---------------------------------------------------------------------------

double reconstruction_mse(const Tensor& composed, const Tensor& target) {
    if (composed.shape() != target.shape()) throw Error("reconstruction_mse: shape mismatch");
    if (target.rows() == 0) return 0.0;
    double s = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = composed[i] - target[i];
        s += d * d;
    }
    return s / static_cast<double>(target.rows());
}

namespace {

// Sorted unique symbols covering `items`, plus the position of each symbol.
std::vector<std::size_t> sorted_unique(std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

}  // namespace

ReconstructionTask::ReconstructionTask(Tensor target, double validation_fraction, std::uint64_t seed)
    : target_(std::move(target)) {
    if (target_.rank() != 2 || target_.rows() == 0) throw Error("reconstruction: target must be a non-empty matrix");
    std::vector<std::size_t> all(target_.rows());
    std::iota(all.begin(), all.end(), 0);
    Rng rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    auto n = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(all.size())));
    n = std::clamp<std::size_t>(n, 1, all.size());
    validation_.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(validation_.begin(), validation_.end());
}

diff::Node ReconstructionTask::build_loss(diff::Graph& g, diff::Node embeddings, Rng&) {
    auto target = g.input("recon_target", {0, target_.cols()});
    auto w = g.input("recon_w", {1});
    return g.multiply(g.squared_error(embeddings, target), w);
}

std::vector<Batch> ReconstructionTask::epoch_batches(std::size_t batch_size, Rng& rng) const {
    std::vector<std::size_t> order(target_.rows());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Batch> out;
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
        const auto e = std::min(order.size(), b + batch_size);
        Batch batch;
        batch.symbols = sorted_unique({order.begin() + static_cast<std::ptrdiff_t>(b),
                                       order.begin() + static_cast<std::ptrdiff_t>(e)});
        batch.feed.set("recon_target", kernels::gather_rows(target_, batch.symbols));
        batch.feed.set("recon_w", Tensor::scalar(1.0 / static_cast<double>(batch.symbols.size())));
        out.push_back(std::move(batch));
    }
    return out;
}

TaskMetrics ReconstructionTask::validate(const diff::ParamStore&, const Tensor& embeddings) const {
    return {reconstruction_mse(kernels::gather_rows(embeddings, validation_), kernels::gather_rows(target_, validation_)),
            std::nullopt};
}

TaskMetrics ReconstructionTask::test(const diff::ParamStore&, const Tensor& embeddings) const {
    return {reconstruction_mse(embeddings, target_), std::nullopt};
}

// ---------------------------------------------------------------------------

ClassificationTask::ClassificationTask(LabeledCorpus train, LabeledCorpus validation, std::size_t dim,
                                       std::optional<LabeledCorpus> test)
    : train_(std::move(train)), validation_(std::move(validation)), test_(std::move(test)), dim_(dim) {
    train_.validate();
    validation_.validate();
    if (test_) test_->validate();
    if (validation_.vocab != train_.vocab || validation_.classes != train_.classes) {
        throw Error("classification: train and validation corpora disagree on vocabulary or classes");
    }
    for (std::size_t i = 0; i < train_.size(); ++i) {
        if (train_.documents[i].empty())
            ++skipped_;
        else
            usable_.push_back(i);
    }
    if (usable_.empty()) throw Error("classification: no non-empty training documents");
}

diff::Node ClassificationTask::build_loss(diff::Graph& g, diff::Node embeddings, Rng& rng) {
    const double lim = 1.0 / std::sqrt(static_cast<double>(dim_));
    auto w = g.parameter("task/W", uniform_tensor({dim_, train_.classes}, -lim, lim, rng));
    auto b = g.parameter("task/b", Tensor({train_.classes}));
    auto avg = g.input("doc_avg", {0, 0});
    auto labels = g.index_input("labels");
    auto docs = g.matmul(avg, embeddings);
    return g.softmax_cross_entropy(g.add(g.matmul(docs, w), b), labels);
}

std::vector<Batch> ClassificationTask::epoch_batches(std::size_t batch_size, Rng& rng) const {
    std::vector<std::size_t> order = usable_;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Batch> out;
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
        const auto e = std::min(order.size(), b + batch_size);
        std::vector<std::size_t> tokens;
        for (std::size_t i = b; i < e; ++i) {
            const auto& d = train_.documents[order[i]];
            tokens.insert(tokens.end(), d.begin(), d.end());
        }
        Batch batch;
        batch.symbols = sorted_unique(std::move(tokens));
        Tensor avg({e - b, batch.symbols.size()});
        std::vector<std::size_t> labels;
        for (std::size_t i = b; i < e; ++i) {
            const auto& d = train_.documents[order[i]];
            const double w = 1.0 / static_cast<double>(d.size());
            for (auto t : d) {
                auto pos = std::lower_bound(batch.symbols.begin(), batch.symbols.end(), t) - batch.symbols.begin();
                avg.at(i - b, static_cast<std::size_t>(pos)) += w;
            }
            labels.push_back(train_.labels[order[i]]);
        }
        batch.feed.set("doc_avg", std::move(avg));
        batch.feed.set_index("labels", std::move(labels));
        out.push_back(std::move(batch));
    }
    return out;
}

Tensor ClassificationTask::logits(const diff::ParamStore& params, const Tensor& embeddings,
                                  std::span<const std::size_t> doc) const {
    // per-token weights summed in sorted-token order, so token order is irrelevant
    std::vector<std::size_t> toks(doc.begin(), doc.end());
    std::sort(toks.begin(), toks.end());
    Tensor v({1, dim_});
    const double w = 1.0 / static_cast<double>(doc.size());
    for (std::size_t i = 0; i < toks.size();) {
        std::size_t j = i;
        double weight = 0;
        while (j < toks.size() && toks[j] == toks[i]) {
            weight += w;
            ++j;
        }
        auto e = embeddings.row(toks[i]);
        for (std::size_t c = 0; c < dim_; ++c) v[c] += weight * e[c];
        i = j;
    }
    Tensor z = kernels::matmul(v, params.at("task/W"));
    kernels::add_row_bias(z, params.at("task/b"));
    return z;
}

std::size_t ClassificationTask::predict(const diff::ParamStore& params, const Tensor& embeddings,
                                        std::span<const std::size_t> document) const {
    if (document.empty()) throw Error("classification: cannot predict an empty document");
    return kernels::argmax(logits(params, embeddings, document).row(0));
}

TaskMetrics ClassificationTask::evaluate(const diff::ParamStore& params, const Tensor& embeddings,
                                         const LabeledCorpus& corpus) const {
    double loss = 0;
    std::size_t correct = 0, counted = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& doc = corpus.documents[i];
        if (doc.empty()) continue;
        const Tensor z = logits(params, embeddings, doc);
        const Tensor p = kernels::softmax(z, 1.0);
        loss -= std::log(std::max(p[corpus.labels[i]], 1e-300));
        if (kernels::argmax(z.row(0)) == corpus.labels[i]) ++correct;
        ++counted;
    }
    if (counted == 0) return {0.0, std::nullopt};
    return {loss / static_cast<double>(counted), static_cast<double>(correct) / static_cast<double>(counted)};
}

TaskMetrics ClassificationTask::validate(const diff::ParamStore& params, const Tensor& embeddings) const {
    return evaluate(params, embeddings, validation_);
}

TaskMetrics ClassificationTask::test(const diff::ParamStore& params, const Tensor& embeddings) const {
    return evaluate(params, embeddings, test_ ? *test_ : validation_);
}

// ---------------------------------------------------------------------------

double cosine(std::span<const double> a, std::span<const double> b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0 || bb == 0) return 0.0;
    return ab / std::sqrt(aa * bb);
}

namespace {

Tensor normalized_rows(const Tensor& m) {
    Tensor out = m;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        double n = 0;
        for (double v : row) n += v * v;
        n = std::sqrt(n);
        if (n > 0) {
            for (double& v : row) v /= n;
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> top_k_neighbours(const Tensor& m, std::size_t k) {
    const Tensor unit = normalized_rows(m);
    const Tensor sims = kernels::matmul_nt(unit, unit);
    const std::size_t n = m.rows();
    std::vector<std::vector<std::size_t>> out(n);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
        idx.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) idx.push_back(j);
        }
        auto row = sims.row(i);
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                          [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
        out[i].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
        std::sort(out[i].begin(), out[i].end());
    }
    return out;
}

}  // namespace

double nn_overlap(const Tensor& reference, const Tensor& candidate, std::size_t k) {
    if (reference.rows() != candidate.rows()) throw Error("nn_overlap: matrices have different row counts");
    if (k == 0 || k >= reference.rows()) throw Error("nn_overlap: k must be in [1, N)");
    const auto a = top_k_neighbours(reference, k);
    const auto b = top_k_neighbours(candidate, k);
    double total = 0;
    std::vector<std::size_t> common;
    for (std::size_t i = 0; i < a.size(); ++i) {
        common.clear();
        std::set_intersection(a[i].begin(), a[i].end(), b[i].begin(), b[i].end(), std::back_inserter(common));
        total += static_cast<double>(common.size()) / static_cast<double>(k);
    }
    return total / static_cast<double>(a.size());
}

CodeSemantics code_semantics_probe(const DiscreteCodeTable& table, const Tensor& embeddings) {
    if (table.vocab() != embeddings.rows()) throw Error("code_semantics_probe: table and embeddings differ in N");
    const std::size_t n = table.vocab();
    CodeSemantics out;
    if (n < 2) return out;
    const Tensor unit = normalized_rows(embeddings);
    auto dot = [&](std::size_t a, std::size_t b) {
        double s = 0;
        auto ra = unit.row(a), rb = unit.row(b);
        for (std::size_t c = 0; c < ra.size(); ++c) s += ra[c] * rb[c];
        return s;
    };

    std::map<std::vector<std::uint32_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) {
        auto c = table.code(i);
        groups[{c.begin(), c.end()}].push_back(i);
    }
    double s = 0, s2 = 0;
    std::size_t pairs = 0;
    for (const auto& [code, members] : groups) {
        for (std::size_t a = 0; a < members.size(); ++a) {
            for (std::size_t b = a + 1; b < members.size(); ++b) {
                const double c = dot(members[a], members[b]);
                s += c;
                s2 += c * c;
                ++pairs;
            }
        }
    }
    // global mean over all pairs: sum_{i<j} u_i.u_j = (|sum u|^2 - sum |u_i|^2) / 2
    std::vector<double> total(unit.cols(), 0.0);
    double self = 0;
    for (std::size_t i = 0; i < n; ++i) {
        auto r = unit.row(i);
        for (std::size_t c = 0; c < r.size(); ++c) {
            total[c] += r[c];
            self += r[c] * r[c];
        }
    }
    double tt = 0;
    for (double v : total) tt += v * v;
    out.global = (tt - self) / 2.0 / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
    if (pairs == 0) return out;
    out.available = true;
    out.intra_pairs = pairs;
    out.intra = s / static_cast<double>(pairs);
    const double var = pairs > 1 ? std::max(0.0, (s2 - s * s / static_cast<double>(pairs)) / static_cast<double>(pairs - 1)) : 0.0;
    out.intra_stderr = std::sqrt(var / static_cast<double>(pairs));
    return out;
}

void write_code_groups(std::ostream& os, const DiscreteCodeTable& table, std::size_t max_groups) {
    std::map<std::vector<std::uint32_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < table.vocab(); ++i) {
        auto c = table.code(i);
        groups[{c.begin(), c.end()}].push_back(i);
    }
    std::vector<const std::pair<const std::vector<std::uint32_t>, std::vector<std::size_t>>*> order;
    for (const auto& g : groups) order.push_back(&g);
    std::stable_sort(order.begin(), order.end(), [](auto a, auto b) { return a->second.size() > b->second.size(); });
    std::size_t shown = 0;
    for (const auto* g : order) {
        if (max_groups && shown++ >= max_groups) break;
        os << table.render(g->second.front()) << ':';
        for (auto i : g->second) os << ' ' << table.symbol(i);
        os << '\n';
    }
}

}  // namespace kdc
