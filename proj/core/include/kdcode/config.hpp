#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "kdcode/codes.hpp"
#include "kdcode/composer.hpp"
#include "kdcode/report.hpp"
#include "kdcode/trainer.hpp"

namespace kdc {

/// Every knob of an experiment, read from a flat `key = value` text file.
/// Blank lines and text after `#` are ignored; unknown keys are errors.
struct ExperimentConfig {
    // data
    std::string task = "reconstruction";  // reconstruction | classification
    std::string embeddings;               // GloVe-style text file; synthetic when empty
    std::size_t synthetic_vocab = 1000;
    std::size_t synthetic_dim = 32;
    std::size_t synthetic_clusters = 20;
    double synthetic_spread = 0.3;
    std::uint64_t synthetic_seed = 1;
    std::size_t corpus_vocab = 2000;
    std::size_t corpus_classes = 4;
    std::size_t corpus_markers = 5;
    std::size_t corpus_documents = 2000;
    std::size_t corpus_length = 20;
    std::size_t corpus_markers_per_doc = 2;
    std::uint64_t corpus_seed = 1;
    std::size_t corpus_dim = 32;
    double corpus_validation = 0.1;
    double corpus_test = 0.2;

    // codes and composer
    std::size_t way = 16;
    std::size_t dims = 4;
    std::size_t code_dim = 32;
    bool lossy = false;
    ComposerKind composer = ComposerKind::LinearSum;
    std::size_t hidden = 300;
    bool lstm_tied_gate = false;

    // training
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    ScheduleKind schedule = ScheduleKind::Exponential;
    double tau_init = 1.0;
    double tau_min = 0.1;
    std::size_t tau_horizon = 0;
    double entropy_weight = 0.01;
    double entropy_ramp = 0.1;
    double lambda_ramp = 0.2;
    Relaxation relaxation = Relaxation::StraightThrough;
    double clip_norm = 5.0;
    std::uint64_t seed = 1;

    // guidance
    GuidanceMode guidance = GuidanceMode::None;
    double keep_prob = 0.7;
    double lambda = 1.0;
    double alpha = 1.0;
    double beta = 1.0;
    bool per_symbol_mask = false;
    bool autoencoder = true;
    std::size_t encoder_hidden = 256;

    // baselines and evaluation
    std::size_t pq_subspaces = 4;
    std::size_t pq_centroids = 16;
    unsigned scalar_bits = 8;
    std::size_t lowrank_rank = 4;
    std::size_t nn_k = 10;
    FullBitsConvention full_bits = FullBitsConvention::Table;

    /// Sets one key from its text form.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    /// Every key with its current value, in documentation order.
    ConfigEcho echo() const;
    void validate() const;

    TrainConfig train_config() const;
    ComposerSpec composer_spec() const;
    CodeConfig code_config(std::size_t vocab) const;
};

/// All keys, in documentation order.
const std::vector<std::string>& config_keys();
/// One-line description of a key.
const std::string& config_key_doc(const std::string& key);

ExperimentConfig read_config(std::istream& is);
ExperimentConfig load_config(const std::string& path);
/// The documented file form: `# doc` line then `key = value` for every key.
void write_config(std::ostream& os, const ExperimentConfig& cfg);

}  // namespace kdc
