#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kdcode/codes.hpp"
#include "kdcode/guidance.hpp"
#include "kdcode/trainer.hpp"

namespace kdc {

/// Ordered vocabulary with a reverse index.
class VocabTable {
public:
    VocabTable() = default;
    explicit VocabTable(std::vector<std::string> symbols);
    /// s0, s1, ... s{n-1}
    static VocabTable numbered(std::size_t n, const std::string& prefix = "w");

    std::size_t size() const noexcept { return symbols_.size(); }
    const std::string& operator[](std::size_t i) const { return symbols_.at(i); }
    std::optional<std::size_t> find(const std::string& s) const;
    const std::vector<std::string>& symbols() const noexcept { return symbols_; }

private:
    std::vector<std::string> symbols_;
    std::map<std::string, std::size_t> index_;
};

/// GloVe-style text: `token v1 v2 ... vd` per line.
std::pair<VocabTable, PretrainedEmbeddings> load_embeddings(const std::string& path);
std::pair<VocabTable, PretrainedEmbeddings> read_embeddings(std::istream& is);
/// Writes with `precision` significant digits (17 round-trips doubles exactly).
void write_embeddings(std::ostream& os, const VocabTable& vocab, const Tensor& vectors, int precision = 17);
void save_embeddings(const std::string& path, const VocabTable& vocab, const Tensor& vectors, int precision = 17);

// ---------------------------------------------------------------------------
// synthetic data

struct ClusteredEmbeddings {
    Tensor vectors;                   // [N, d]
    std::vector<std::size_t> cluster; // cluster id of each row
    Tensor centers;                   // [C, d]
};

/// Centers ~ N(0, 1/d) per coordinate (unit expected norm), rows = center +
/// N(0, spread^2/d) noise, cluster ids assigned round-robin then shuffled.
ClusteredEmbeddings make_clustered_embeddings(std::size_t vocab, std::size_t dim, std::size_t clusters,
                                              double spread, std::uint64_t seed);

struct LabeledCorpus {
    std::vector<std::vector<std::size_t>> documents;
    std::vector<std::size_t> labels;
    std::size_t classes = 0;
    std::size_t vocab = 0;

    void validate() const;
    std::size_t size() const noexcept { return documents.size(); }
};

struct MarkerCorpusSpec {
    std::size_t vocab = 2000;
    std::size_t classes = 4;
    std::size_t markers_per_class = 5;
    std::size_t documents = 2000;
    std::size_t doc_length = 20;
    std::size_t markers_per_doc = 2;
};

/// Each class owns `markers_per_class` exclusive marker tokens (ids
/// 0 .. classes*markers-1); every document carries `markers_per_doc` markers
/// of its class among uniformly drawn distractor tokens.
LabeledCorpus make_marker_corpus(const MarkerCorpusSpec& spec, std::uint64_t seed);

/// Splits off `fraction` of the documents with a seeded shuffle.
std::pair<LabeledCorpus, LabeledCorpus> split_corpus(const LabeledCorpus& corpus, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// tasks

/// Mean over symbols of |v_i - u_i|^2.
double reconstruction_mse(const Tensor& composed, const Tensor& target);

/// Fit composed embeddings to a target matrix. Every symbol is trained (its
/// code can only be learned from its own row); a seeded 10% sample is
/// monitored as the validation set, and test() reports the full-vocabulary MSE.
class ReconstructionTask final : public Task {
public:
    explicit ReconstructionTask(Tensor target, double validation_fraction = 0.1, std::uint64_t seed = 7);

    std::string name() const override { return "reconstruction"; }
    std::size_t vocab_size() const override { return target_.rows(); }
    std::size_t embedding_dim() const override { return target_.cols(); }
    diff::Node build_loss(diff::Graph& g, diff::Node embeddings, Rng& rng) override;
    std::vector<Batch> epoch_batches(std::size_t batch_size, Rng& rng) const override;
    TaskMetrics validate(const diff::ParamStore& params, const Tensor& embeddings) const override;
    TaskMetrics test(const diff::ParamStore& params, const Tensor& embeddings) const override;

    const Tensor& target() const noexcept { return target_; }
    const std::vector<std::size_t>& validation_symbols() const noexcept { return validation_; }

private:
    Tensor target_;
    std::vector<std::size_t> validation_;
};

/// Averaged bag of embeddings -> affine -> softmax over classes.
class ClassificationTask final : public Task {
public:
    ClassificationTask(LabeledCorpus train, LabeledCorpus validation, std::size_t dim,
                       std::optional<LabeledCorpus> test = std::nullopt);

    std::string name() const override { return "classification"; }
    std::size_t vocab_size() const override { return train_.vocab; }
    std::size_t embedding_dim() const override { return dim_; }
    diff::Node build_loss(diff::Graph& g, diff::Node embeddings, Rng& rng) override;
    std::vector<Batch> epoch_batches(std::size_t batch_size, Rng& rng) const override;
    TaskMetrics validate(const diff::ParamStore& params, const Tensor& embeddings) const override;
    TaskMetrics test(const diff::ParamStore& params, const Tensor& embeddings) const override;

    /// Class prediction for one document. Token order does not matter.
    std::size_t predict(const diff::ParamStore& params, const Tensor& embeddings,
                        std::span<const std::size_t> document) const;
    TaskMetrics evaluate(const diff::ParamStore& params, const Tensor& embeddings, const LabeledCorpus& corpus) const;
    std::size_t skipped_documents() const noexcept { return skipped_; }

private:
    Tensor logits(const diff::ParamStore& params, const Tensor& embeddings, std::span<const std::size_t> doc) const;

    LabeledCorpus train_, validation_;
    std::optional<LabeledCorpus> test_;
    std::size_t dim_;
    std::vector<std::size_t> usable_;  // non-empty training documents
    std::size_t skipped_ = 0;
};

// ---------------------------------------------------------------------------
// metrics

/// Mean over symbols of |topk_ref(i) ∩ topk_v(i)| / k under cosine
/// similarity, excluding i itself, ties broken by lower index.
double nn_overlap(const Tensor& reference, const Tensor& candidate, std::size_t k);

struct CodeSemantics {
    bool available = false;       // false when no two symbols share a code
    double intra = 0;             // mean cosine over pairs sharing a code
    double global = 0;            // mean cosine over all pairs
    std::size_t intra_pairs = 0;
    double intra_stderr = 0;      // standard error of `intra`
};

CodeSemantics code_semantics_probe(const DiscreteCodeTable& table, const Tensor& embeddings);

/// Symbols grouped by code, most populated codes first, rendered as
/// `d1-d2-...-dD: sym sym sym`.
void write_code_groups(std::ostream& os, const DiscreteCodeTable& table, std::size_t max_groups = 0);

double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace kdc
