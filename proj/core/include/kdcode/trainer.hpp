#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kdcode/codes.hpp"
#include "kdcode/composer.hpp"
#include "kdcode/graph.hpp"
#include "kdcode/guidance.hpp"

namespace kdc {

// ---------------------------------------------------------------------------
// schedules and optimizers

enum class ScheduleKind { Constant, Exponential };

struct TemperatureSchedule {
    ScheduleKind kind = ScheduleKind::Exponential;
    double tau_init = 1.0;
    double tau_min = 0.1;
    /// Step at which tau_min is reached; 0 means half of the total steps.
    std::size_t horizon = 0;

    void validate() const;
};

/// max(tau_min, tau_init * r^step) with r = (tau_min / tau_init)^(1 / horizon).
double temperature(std::size_t step, const TemperatureSchedule& schedule);

/// Linear ramp from 0 to `target` over the first `fraction` of `total` steps.
double ramp(std::size_t step, std::size_t total, double fraction, double target);

enum class OptimizerKind { Sgd, Adam };

/// Plain SGD or Adam. Parameters whose gradient carries a touched-row list
/// are updated lazily: rows outside the list (and their moments) are left
/// untouched.
class Optimizer {
public:
    explicit Optimizer(OptimizerKind kind, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                       double eps = 1e-8);

    /// Applies one update scaled by `grad_scale` (used for norm clipping).
    void step(diff::ParamStore& params, const diff::Gradients& grads, double grad_scale = 1.0);
    std::size_t steps() const noexcept { return t_; }
    void set_learning_rate(double lr) noexcept { lr_ = lr; }
    double learning_rate() const noexcept { return lr_; }

private:
    OptimizerKind kind_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

/// Global L2 norm over all gradient entries (touched rows only where listed).
double gradient_norm(const diff::Gradients& grads);

// ---------------------------------------------------------------------------
// configuration

enum class Relaxation {
    /// Relaxed softmax codes in the forward pass.
    Continuous,
    /// Hard one-hot forward, relaxed backward.
    StraightThrough,
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    TemperatureSchedule schedule;
    double entropy_weight = 0.01;
    /// Fraction of steps over which the entropy weight ramps up from 0.
    double entropy_ramp = 0.1;
    /// Fraction of steps over which the online tether weight ramps up.
    double lambda_ramp = 0.2;
    double clip_norm = 5.0;
    Relaxation relaxation = Relaxation::StraightThrough;
    GuidanceConfig guidance;
    std::uint64_t seed = 1;

    void validate() const;
};

struct StepContext {
    std::size_t step = 0;
    std::size_t total_steps = 0;
    double tau = 1.0;
    double entropy_weight = 0.0;
    double lambda = 0.0;
};

// ---------------------------------------------------------------------------
// tasks and embedding layers

struct Batch {
    std::vector<std::size_t> symbols;  // sorted, unique
    diff::Feed feed;                   // task inputs
};

struct TaskMetrics {
    double loss = 0;
    std::optional<double> accuracy;
};

/// A downstream objective over symbol embeddings.
class Task {
public:
    virtual ~Task() = default;
    virtual std::string name() const = 0;
    virtual std::size_t vocab_size() const = 0;
    virtual std::size_t embedding_dim() const = 0;
    /// Registers head parameters (prefix "task/") and returns the scalar loss
    /// for `embeddings` [S, d], the rows of the batch symbols.
    virtual diff::Node build_loss(diff::Graph& g, diff::Node embeddings, Rng& rng) = 0;
    virtual std::vector<Batch> epoch_batches(std::size_t batch_size, Rng& rng) const = 0;
    /// Validation metric given head parameters and inference embeddings [N, d].
    virtual TaskMetrics validate(const diff::ParamStore& params, const Tensor& embeddings) const = 0;
    /// Held-out metric; defaults to validation.
    virtual TaskMetrics test(const diff::ParamStore& params, const Tensor& embeddings) const {
        return validate(params, embeddings);
    }
};

struct LayerNodes {
    diff::Node embeddings;
    /// Weighted auxiliary loss (entropy, guidance), if any.
    diff::Node aux_loss;
    /// Unweighted terms recorded in the metrics stream.
    std::vector<std::pair<std::string, diff::Node>> monitors;
};

/// Maps symbol indices to embedding vectors inside a training graph.
class EmbeddingLayer {
public:
    virtual ~EmbeddingLayer() = default;
    virtual std::string tag() const = 0;
    virtual std::size_t vocab_size() const = 0;
    virtual std::size_t dim() const = 0;
    virtual LayerNodes build(diff::Graph& g, diff::Node symbols, Rng& rng) = 0;
    /// Per-step inputs for the symbols of a batch.
    virtual void feed(diff::Feed& feed, std::span<const std::size_t> symbols, const StepContext& ctx,
                      Rng& rng) const;
    virtual std::vector<std::string> trainable() const = 0;
    /// Inference-mode embeddings for the whole vocabulary.
    virtual Tensor infer(const diff::ParamStore& params) const = 0;
    virtual std::uint64_t param_count() const = 0;
    virtual std::uint64_t bits() const = 0;
};

/// A conventional N x d lookup table.
class FullEmbeddingLayer final : public EmbeddingLayer {
public:
    FullEmbeddingLayer(std::size_t vocab, std::size_t dim, double init_std = 0.1);
    explicit FullEmbeddingLayer(Tensor init);

    std::string tag() const override { return "full"; }
    std::size_t vocab_size() const override { return vocab_; }
    std::size_t dim() const override { return dim_; }
    LayerNodes build(diff::Graph& g, diff::Node symbols, Rng& rng) override;
    std::vector<std::string> trainable() const override { return {"E"}; }
    Tensor infer(const diff::ParamStore& params) const override { return params.at("E"); }
    std::uint64_t param_count() const override { return static_cast<std::uint64_t>(vocab_) * dim_; }
    std::uint64_t bits() const override { return full_layer_bits(vocab_, dim_); }

private:
    std::size_t vocab_, dim_;
    double init_std_;
    std::optional<Tensor> init_;
};

/// A fixed embedding matrix (a compressed baseline); only the task head trains.
class FrozenEmbeddingLayer final : public EmbeddingLayer {
public:
    FrozenEmbeddingLayer(std::string tag, Tensor matrix, std::uint64_t params, std::uint64_t bits);

    std::string tag() const override { return tag_; }
    std::size_t vocab_size() const override { return matrix_.rows(); }
    std::size_t dim() const override { return matrix_.cols(); }
    LayerNodes build(diff::Graph& g, diff::Node symbols, Rng& rng) override;
    std::vector<std::string> trainable() const override { return {}; }
    Tensor infer(const diff::ParamStore&) const override { return matrix_; }
    std::uint64_t param_count() const override { return params_; }
    std::uint64_t bits() const override { return bits_; }

private:
    std::string tag_;
    Tensor matrix_;
    std::uint64_t params_, bits_;
};

struct KdLayerConfig {
    CodeConfig codes;
    ComposerSpec composer;
    std::size_t out_dim = 0;
    Relaxation relaxation = Relaxation::StraightThrough;
    GuidanceConfig guidance;
    /// Pre-trained rows for distillation guidance, [N, d].
    std::optional<Tensor> pretrained;
    /// Fixed code table: codes are not learned, only the composer.
    std::optional<DiscreteCodeTable> frozen_codes;
    /// Initial codebook; drawn from the RNG when absent.
    std::optional<CodeBook> codebook;
};

/// End-to-end learned K-way D-dimensional codes.
///
/// Training graph per batch of symbols S:
///   relaxed = softmax(pi[S] / tau)
///   select  = straight_through(relaxed)      (or relaxed itself)
///   v       = f(select)                      (mixed with u under online guidance)
///   aux     = gamma * H(relaxed) + guidance terms, all divided by |S|
class KdEmbeddingLayer final : public EmbeddingLayer {
public:
    explicit KdEmbeddingLayer(KdLayerConfig cfg);

    std::string tag() const override;
    std::size_t vocab_size() const override { return cfg_.codes.vocab; }
    std::size_t dim() const override { return cfg_.out_dim; }
    LayerNodes build(diff::Graph& g, diff::Node symbols, Rng& rng) override;
    void feed(diff::Feed& feed, std::span<const std::size_t> symbols, const StepContext& ctx,
              Rng& rng) const override;
    std::vector<std::string> trainable() const override;
    Tensor infer(const diff::ParamStore& params) const override;
    std::uint64_t param_count() const override;
    std::uint64_t bits() const override;

    const KdLayerConfig& config() const noexcept { return cfg_; }
    DiscreteCodeTable codes(const diff::ParamStore& params) const;
    CodeBook codebook(const diff::ParamStore& params) const;
    std::optional<Encoder> encoder(const diff::ParamStore& params) const;

private:
    KdLayerConfig cfg_;
    CodeBook init_book_;
    std::unique_ptr<ComposerNet> composer_;
    std::unique_ptr<EncoderNet> encoder_;
    std::optional<Encoder> init_encoder_;
    bool built_ = false;
};

// ---------------------------------------------------------------------------
// training loop

struct EpochRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double tau = 0;
    double task_loss = 0;
    double entropy = 0;
    std::map<std::string, double> guidance;
    double validation = 0;
    std::optional<double> accuracy;
};

/// One JSON object per line.
void write_metrics(std::ostream& os, const std::vector<EpochRecord>& history);
std::string metrics_line(const EpochRecord& rec);

class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& what, diff::ParamStore last_good)
        : Error(what), last_good_(std::move(last_good)) {}
    const diff::ParamStore& last_good() const noexcept { return last_good_; }

private:
    diff::ParamStore last_good_;
};

struct TrainState {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double tau = 0;
    std::vector<double> batch_losses;
};

struct FitResult {
    diff::ParamStore best;
    std::size_t best_epoch = 0;
    TaskMetrics best_validation;
    std::vector<EpochRecord> history;
    std::vector<double> batch_losses;
};

/// Minimizes task loss + auxiliary losses over every trainable parameter of
/// the layer and the task head.
class Trainer {
public:
    Trainer(TrainConfig cfg, EmbeddingLayer& layer, Task& task);

    /// One seeded-shuffled pass over the task's batches.
    EpochRecord train_epoch();
    /// Runs cfg.epochs epochs and keeps the parameters with the lowest
    /// inference-mode validation loss (epoch 0 = initialization).
    FitResult fit();

    TaskMetrics validate() const;
    const TrainState& state() const noexcept { return state_; }
    const diff::Graph& graph() const noexcept { return graph_; }
    diff::Graph& graph() noexcept { return graph_; }
    const std::vector<std::string>& trainable() const noexcept { return trainable_; }
    std::size_t total_steps() const noexcept { return total_steps_; }
    StepContext context(std::size_t step) const;

    /// Runs one update on an explicit batch; returns the gradients applied.
    diff::Gradients train_step(const Batch& batch);

private:
    TrainConfig cfg_;
    EmbeddingLayer& layer_;
    Task& task_;
    Rng rng_;
    diff::Graph graph_;
    diff::Node symbols_, loss_, task_loss_;
    LayerNodes layer_nodes_;
    std::vector<std::string> trainable_;
    Optimizer opt_;
    TrainState state_;
    std::size_t total_steps_ = 0;
    std::size_t batches_per_epoch_ = 0;
    double last_task_loss_ = 0;
    std::map<std::string, double> last_monitors_;
};

struct KdFitResult {
    DiscreteCodeTable codes;
    CodeBook codebook;
    FitResult fit;
};

/// Trains a KD layer on `task` and extracts the codes at the best checkpoint.
KdFitResult fit_codes(const TrainConfig& cfg, const KdLayerConfig& layer, Task& task);

}  // namespace kdc
