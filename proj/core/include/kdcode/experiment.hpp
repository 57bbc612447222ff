#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kdcode/baselines.hpp"
#include "kdcode/config.hpp"
#include "kdcode/report.hpp"
#include "kdcode/tasks.hpp"

namespace kdc {

/// Data of one experiment: embeddings for reconstruction, or a labeled
/// corpus split three ways for classification.
struct Dataset {
    std::string task;
    VocabTable vocab;
    std::size_t dim = 0;
    /// Target or pre-trained embeddings [N, d]. For classification this is
    /// filled by a full-embedding reference run when a method needs it.
    std::optional<Tensor> embeddings;
    std::optional<LabeledCorpus> train, validation, test;
};

Dataset load_dataset(const ExperimentConfig& cfg);

/// Ensures `data.embeddings` is present, training a full embedding layer on
/// the classification task when needed.
const Tensor& reference_embeddings(const ExperimentConfig& cfg, Dataset& data);

struct RunArtifacts {
    RunReport report;
    std::optional<DiscreteCodeTable> codes;
    std::optional<CodeBook> codebook;
    std::vector<EpochRecord> history;
    /// Task head parameters ("task/..."), empty for reconstruction.
    diff::ParamStore head;
    /// Inference embeddings [N, d].
    Tensor embeddings;
};

/// Learns codes end to end on the configured task.
RunArtifacts run_kd(const ExperimentConfig& cfg, Dataset& data);

/// Baseline methods: full, low-rank, pq, scalar, random-codes, pretrained-codes.
const std::vector<std::string>& baseline_methods();
RunArtifacts run_baseline(const ExperimentConfig& cfg, Dataset& data, const std::string& method);

/// Scores stored artifacts without training.
RunReport evaluate_artifacts(const ExperimentConfig& cfg, Dataset& data, const DiscreteCodeTable& codes,
                             const CodeBook& book, const diff::ParamStore& head);

struct SweepResult {
    std::vector<RunReport> reports;
    /// Set when a run failed; reports of the runs before it are kept.
    std::optional<std::string> error;
};

/// One KD fit per value of `axis` (K, D, code_dim or composer).
SweepResult sweep(const ExperimentConfig& base, const std::string& axis, const std::vector<std::string>& values);

/// The six ablation rows: cr, cr+ste, +schedule, +entropy, +pdg-ae, +pdg+ae.
std::vector<ExperimentConfig> ablation_configs(const ExperimentConfig& base);
const std::vector<std::string>& ablation_labels();
std::vector<RunReport> ablation(const ExperimentConfig& base);

/// Lower is better: reconstruction error, or 1 - accuracy for classification.
double primary_metric(const RunReport& report);

/// Writes codes.txt, codebook.kdcb, head.json, metrics.jsonl and report.jsonl
/// into `dir`. Wall time is left out of report.jsonl unless `timing` is set,
/// so repeated runs produce identical files.
RunArtifacts fit_codes_to_dir(const ExperimentConfig& cfg, const std::string& dir, bool timing = false);

void save_params(const std::string& path, const diff::ParamStore& params);
diff::ParamStore load_params(const std::string& path);

}  // namespace kdc
