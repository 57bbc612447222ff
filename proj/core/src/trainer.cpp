#include "kdcode/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "json.hpp"

namespace kdc {

// ---------------------------------------------------------------------------
// schedules

void TemperatureSchedule::validate() const {
    if (!(tau_min > 0)) throw Error("schedule: tau_min must be positive");
    if (tau_init < tau_min) throw Error("schedule: tau_init must be at least tau_min");
}

double temperature(std::size_t step, const TemperatureSchedule& s) {
    if (s.kind == ScheduleKind::Constant) return s.tau_init;
    if (s.horizon == 0 || step >= s.horizon) return step == 0 ? s.tau_init : s.tau_min;
    const double frac = static_cast<double>(step) / static_cast<double>(s.horizon);
    return std::max(s.tau_min, s.tau_init * std::pow(s.tau_min / s.tau_init, frac));
}

double ramp(std::size_t step, std::size_t total, double fraction, double target) {
    if (fraction <= 0 || total == 0) return target;
    const double span = fraction * static_cast<double>(total);
    return target * std::min(1.0, static_cast<double>(step) / span);
}

// ---------------------------------------------------------------------------
// optimizer

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double beta1, double beta2, double eps)
    : kind_(kind), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (learning_rate < 0) throw Error("optimizer: learning rate must be non-negative");
}

namespace {

// Calls fn(flat index) for every entry the update should touch.
template <class Fn>
void for_each_entry(const Tensor& grad, const std::vector<std::size_t>* rows, Fn fn) {
    if (!rows) {
        for (std::size_t i = 0; i < grad.size(); ++i) fn(i);
        return;
    }
    const std::size_t stride = grad.size() / grad.shape()[0];
    for (auto r : *rows) {
        for (std::size_t c = 0; c < stride; ++c) fn(r * stride + c);
    }
}

const std::vector<std::size_t>* rows_of(const diff::Gradients& grads, const std::string& name) {
    auto it = grads.touched_rows.find(name);
    return it == grads.touched_rows.end() ? nullptr : &it->second;
}

}  // namespace

void Optimizer::step(diff::ParamStore& params, const diff::Gradients& grads, double grad_scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, grad] : grads.dense) {
        Tensor& p = params.at(name);
        const auto* rows = rows_of(grads, name);
        if (kind_ == OptimizerKind::Sgd) {
            for_each_entry(grad, rows, [&](std::size_t i) { p[i] -= lr_ * grad_scale * grad[i]; });
            continue;
        }
        auto [mit, fresh] = m_.try_emplace(name, Tensor(p.shape()));
        if (fresh) v_.emplace(name, Tensor(p.shape()));
        Tensor& m = mit->second;
        Tensor& v = v_.at(name);
        for_each_entry(grad, rows, [&](std::size_t i) {
            const double g = grad[i] * grad_scale;
            m[i] = beta1_ * m[i] + (1 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1 - beta2_) * g * g;
            p[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        });
    }
}

double gradient_norm(const diff::Gradients& grads) {
    double s = 0;
    for (const auto& [name, grad] : grads.dense) {
        for_each_entry(grad, rows_of(grads, name), [&](std::size_t i) { s += grad[i] * grad[i]; });
    }
    return std::sqrt(s);
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw Error("train config: batch size must be positive");
    if (!(learning_rate > 0) && learning_rate != 0) throw Error("train config: learning rate must be non-negative");
    if (entropy_weight < 0) throw Error("train config: entropy weight must be non-negative");
    if (clip_norm <= 0) throw Error("train config: clip norm must be positive");
    schedule.validate();
    guidance.validate();
}

// ---------------------------------------------------------------------------
// layers

void EmbeddingLayer::feed(diff::Feed&, std::span<const std::size_t>, const StepContext&, Rng&) const {}

FullEmbeddingLayer::FullEmbeddingLayer(std::size_t vocab, std::size_t dim, double init_std)
    : vocab_(vocab), dim_(dim), init_std_(init_std) {}

FullEmbeddingLayer::FullEmbeddingLayer(Tensor init)
    : vocab_(init.rows()), dim_(init.cols()), init_std_(0), init_(std::move(init)) {}

LayerNodes FullEmbeddingLayer::build(diff::Graph& g, diff::Node symbols, Rng& rng) {
    Tensor e = init_ ? *init_ : normal_tensor({vocab_, dim_}, 0.0, init_std_, rng);
    return {g.gather(g.parameter("E", std::move(e)), symbols), {}, {}};
}

FrozenEmbeddingLayer::FrozenEmbeddingLayer(std::string tag, Tensor matrix, std::uint64_t params, std::uint64_t bits)
    : tag_(std::move(tag)), matrix_(std::move(matrix)), params_(params), bits_(bits) {}

LayerNodes FrozenEmbeddingLayer::build(diff::Graph& g, diff::Node symbols, Rng&) {
    return {g.gather(g.constant(matrix_), symbols), {}, {}};
}

KdEmbeddingLayer::KdEmbeddingLayer(KdLayerConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.codes.validate();
    cfg_.guidance.validate();
    if (cfg_.out_dim == 0) throw Error("kd layer: output width must be positive");
    if (cfg_.frozen_codes) {
        const auto& t = *cfg_.frozen_codes;
        if (t.vocab() != cfg_.codes.vocab || t.way() != cfg_.codes.way || t.dims() != cfg_.codes.dims) {
            throw Error("kd layer: frozen code table does not match the code configuration");
        }
    }
    if (cfg_.guidance.mode == GuidanceMode::Pretrained) {
        if (!cfg_.pretrained) throw Error("kd layer: pre-trained guidance needs pre-trained embeddings");
        if (cfg_.pretrained->rows() != cfg_.codes.vocab || cfg_.pretrained->cols() != cfg_.out_dim) {
            throw Error("kd layer: pre-trained embeddings must be [N, d]");
        }
    }
}

std::string KdEmbeddingLayer::tag() const { return cfg_.frozen_codes ? "kd-frozen" : "kd"; }

LayerNodes KdEmbeddingLayer::build(diff::Graph& g, diff::Node symbols, Rng& rng) {
    if (built_) throw Error("kd layer: already bound to a graph");
    built_ = true;
    const auto& cc = cfg_.codes;
    const bool learn = !cfg_.frozen_codes.has_value();

    LayerNodes out;
    std::vector<diff::Node> aux;
    auto tau = g.input("tau", {1});
    diff::Node logits, relaxed, select;
    if (learn) {
        auto pi = g.parameter("pi", CodeLogits::initialize(cc, rng).values);
        logits = g.gather(pi, symbols);
        relaxed = g.softmax(logits, tau);
        select = cfg_.relaxation == Relaxation::StraightThrough ? g.straight_through(relaxed) : relaxed;
    } else {
        select = g.gather(g.constant(cfg_.frozen_codes->one_hot()), symbols);
    }

    init_book_ = cfg_.codebook ? *cfg_.codebook
                               : CodeBook::initialize(cc.way, cc.dims, cc.code_dim, cfg_.out_dim, cfg_.composer, rng);
    composer_ = std::make_unique<ComposerNet>(g, init_book_);
    auto composed = composer_->apply(g, select);
    g.name(composed, "kd/composed");
    out.embeddings = composed;

    if (learn) {
        auto h = g.entropy(relaxed);
        aux.push_back(g.multiply(h, g.input("entropy_w", {1})));
        out.monitors.emplace_back("entropy", h);
    }

    const auto& gc = cfg_.guidance;
    if (gc.mode == GuidanceMode::Online) {
        auto u = g.parameter("u", normal_tensor({cc.vocab, cfg_.out_dim}, 0.0, 0.1, rng));
        auto ug = g.gather(u, symbols);
        out.embeddings = guidance::mix(g, ug, composed, g.input("odg_mask", {0, cfg_.out_dim}),
                                       g.input("odg_inv", {0, cfg_.out_dim}));
        auto reg = guidance::online_regularizer(g, ug, composed);
        aux.push_back(g.multiply(reg, g.input("odg_w", {1})));
        out.monitors.emplace_back("odg", reg);
    } else if (gc.mode == GuidanceMode::Pretrained && learn) {
        auto upre = g.input("u_pre", {0, cfg_.out_dim});
        if (gc.autoencoder) {
            init_encoder_ = Encoder::initialize(cfg_.out_dim, cc.dims, cc.way, gc.encoder_hidden, rng);
            encoder_ = std::make_unique<EncoderNet>(g, *init_encoder_);
        }
        auto terms = guidance::distillation_terms(g, *composer_, encoder_.get(), logits, upre, tau);
        aux.push_back(g.multiply(terms.composed, g.input("alpha_w", {1})));
        out.monitors.emplace_back("distill_composed", terms.composed);
        if (encoder_) {
            aux.push_back(g.multiply(terms.logits, g.input("beta_w", {1})));
            out.monitors.emplace_back("distill_logits", terms.logits);
            auto ae = guidance::autoencoder_loss(g, *encoder_, *composer_, upre, tau);
            aux.push_back(g.multiply(ae, g.input("ae_w", {1})));
            out.monitors.emplace_back("autoencoder", ae);
        }
    }
    if (!aux.empty()) {
        out.aux_loss = aux[0];
        for (std::size_t i = 1; i < aux.size(); ++i) out.aux_loss = g.add(out.aux_loss, aux[i]);
    }
    return out;
}

void KdEmbeddingLayer::feed(diff::Feed& feed, std::span<const std::size_t> symbols, const StepContext& ctx,
                            Rng& rng) const {
    const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(symbols.size(), 1));
    feed.set("tau", Tensor::scalar(ctx.tau));
    if (!cfg_.frozen_codes) feed.set("entropy_w", Tensor::scalar(ctx.entropy_weight * inv));
    const auto& gc = cfg_.guidance;
    if (gc.mode == GuidanceMode::Online) {
        Tensor mask = draw_mask(symbols.size(), cfg_.out_dim, gc.keep_prob, gc.per_symbol_mask, rng);
        Tensor inv_mask = mask;
        for (double& v : inv_mask.values()) v = 1.0 - v;
        feed.set("odg_mask", std::move(mask)).set("odg_inv", std::move(inv_mask));
        feed.set("odg_w", Tensor::scalar(ctx.lambda * inv));
    } else if (gc.mode == GuidanceMode::Pretrained && !cfg_.frozen_codes) {
        feed.set("u_pre", kernels::gather_rows(*cfg_.pretrained, symbols));
        feed.set("alpha_w", Tensor::scalar(gc.alpha * inv));
        if (gc.autoencoder) {
            feed.set("beta_w", Tensor::scalar(gc.beta * inv));
            feed.set("ae_w", Tensor::scalar(inv));
        }
    }
}

std::vector<std::string> KdEmbeddingLayer::trainable() const {
    if (!composer_) throw Error("kd layer: not built");
    std::vector<std::string> names;
    if (!cfg_.frozen_codes) names.push_back("pi");
    for (auto& n : composer_->param_names()) names.push_back(n);
    if (cfg_.guidance.mode == GuidanceMode::Online) names.push_back("u");
    if (encoder_) {
        for (auto& n : encoder_->param_names()) names.push_back(n);
    }
    return names;
}

DiscreteCodeTable KdEmbeddingLayer::codes(const diff::ParamStore& params) const {
    if (cfg_.frozen_codes) return *cfg_.frozen_codes;
    return extract_codes(CodeLogits{params.at("pi")});
}

CodeBook KdEmbeddingLayer::codebook(const diff::ParamStore& params) const {
    if (!composer_) throw Error("kd layer: not built");
    CodeBook b = init_book_;
    composer_->read_back(params, b);
    return b;
}

std::optional<Encoder> KdEmbeddingLayer::encoder(const diff::ParamStore& params) const {
    if (!encoder_) return std::nullopt;
    Encoder e = *init_encoder_;
    encoder_->read_back(params, e);
    return e;
}

Tensor KdEmbeddingLayer::infer(const diff::ParamStore& params) const {
    return compose_batch(codes(params), codebook(params));
}

std::uint64_t KdEmbeddingLayer::param_count() const {
    if (!composer_) throw Error("kd layer: not built");
    return init_book_.param_count();
}

std::uint64_t KdEmbeddingLayer::bits() const {
    if (!composer_) throw Error("kd layer: not built");
    const auto& cc = cfg_.codes;
    return kd_layer_bits(cc.vocab, cc.way, cc.dims, cc.code_dim, init_book_.composer_params());
}

// ---------------------------------------------------------------------------
// metrics

std::string metrics_line(const EpochRecord& r) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["step"] = r.step;
    j["tau"] = r.tau;
    j["task_loss"] = r.task_loss;
    j["entropy"] = r.entropy;
    for (const auto& [k, v] : r.guidance) j[k] = v;
    j["validation"] = r.validation;
    if (r.accuracy) j["accuracy"] = *r.accuracy;
    return j.dump();
}

void write_metrics(std::ostream& os, const std::vector<EpochRecord>& history) {
    for (const auto& r : history) os << metrics_line(r) << '\n';
}

// ---------------------------------------------------------------------------
// trainer

Trainer::Trainer(TrainConfig cfg, EmbeddingLayer& layer, Task& task)
    : cfg_(std::move(cfg)), layer_(layer), task_(task), rng_(cfg_.seed),
      opt_(cfg_.optimizer, cfg_.learning_rate) {
    cfg_.validate();
    if (layer.vocab_size() != task.vocab_size()) throw Error("trainer: layer and task vocabulary sizes differ");
    if (layer.dim() != task.embedding_dim()) throw Error("trainer: layer and task embedding widths differ");

    symbols_ = graph_.index_input("symbols");
    layer_nodes_ = layer_.build(graph_, symbols_, rng_);
    task_loss_ = task_.build_loss(graph_, layer_nodes_.embeddings, rng_);
    loss_ = layer_nodes_.aux_loss.valid() ? graph_.add(task_loss_, layer_nodes_.aux_loss) : task_loss_;
    for (const auto& [name, t] : graph_.params()) trainable_.push_back(name);

    Rng probe = rng_;
    batches_per_epoch_ = task_.epoch_batches(cfg_.batch_size, probe).size();
    total_steps_ = cfg_.epochs * batches_per_epoch_;
    if (cfg_.schedule.horizon == 0) cfg_.schedule.horizon = std::max<std::size_t>(total_steps_ / 2, 1);
    state_.tau = temperature(0, cfg_.schedule);
}

StepContext Trainer::context(std::size_t step) const {
    StepContext c;
    c.step = step;
    c.total_steps = total_steps_;
    c.tau = temperature(step, cfg_.schedule);
    c.entropy_weight = ramp(step, total_steps_, cfg_.entropy_ramp, cfg_.entropy_weight);
    c.lambda = ramp(step, total_steps_, cfg_.lambda_ramp, cfg_.guidance.lambda);
    return c;
}

diff::Gradients Trainer::train_step(const Batch& batch) {
    const auto ctx = context(state_.step);
    diff::Feed feed = batch.feed;
    feed.set_index("symbols", batch.symbols);
    layer_.feed(feed, batch.symbols, ctx, rng_);

    std::vector<diff::Node> targets{loss_, task_loss_};
    for (const auto& [name, n] : layer_nodes_.monitors) targets.push_back(n);

    diff::Gradients grads;
    try {
        auto ev = graph_.evaluate(feed, targets);
        grads = graph_.gradient(ev, loss_, trainable_);
        last_task_loss_ = ev.scalar(task_loss_);
        for (const auto& [name, n] : layer_nodes_.monitors) last_monitors_[name] = ev.scalar(n);
        state_.batch_losses.push_back(ev.scalar(loss_));
    } catch (const Error& e) {
        throw TrainingDiverged(std::string("training diverged at step ") + std::to_string(state_.step) + ": " +
                                   e.what(),
                               graph_.params());
    }
    const double norm = gradient_norm(grads);
    if (!std::isfinite(norm)) {
        throw TrainingDiverged("training diverged at step " + std::to_string(state_.step) + ": non-finite gradient",
                               graph_.params());
    }
    const double scale = norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    opt_.step(graph_.params(), grads, scale);
    ++state_.step;
    state_.tau = ctx.tau;
    return grads;
}

TaskMetrics Trainer::validate() const { return task_.validate(graph_.params(), layer_.infer(graph_.params())); }

EpochRecord Trainer::train_epoch() {
    const auto batches = task_.epoch_batches(cfg_.batch_size, rng_);
    EpochRecord rec;
    std::map<std::string, double> sums;
    double task_sum = 0;
    for (const auto& b : batches) {
        train_step(b);
        task_sum += last_task_loss_;
        for (const auto& [k, v] : last_monitors_) sums[k] += v;
    }
    ++state_.epoch;
    const double n = static_cast<double>(std::max<std::size_t>(batches.size(), 1));
    rec.epoch = state_.epoch;
    rec.step = state_.step;
    rec.tau = state_.tau;
    rec.task_loss = task_sum / n;
    for (const auto& [k, v] : sums) {
        if (k == "entropy")
            rec.entropy = v / n;
        else
            rec.guidance[k] = v / n;
    }
    const auto val = validate();
    rec.validation = val.loss;
    rec.accuracy = val.accuracy;
    return rec;
}

FitResult Trainer::fit() {
    FitResult out;
    out.best = graph_.params();
    out.best_validation = validate();
    out.best_epoch = 0;
    {
        EpochRecord r0;
        r0.tau = state_.tau;
        r0.validation = out.best_validation.loss;
        r0.accuracy = out.best_validation.accuracy;
        out.history.push_back(r0);
    }
    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
        auto rec = train_epoch();
        out.history.push_back(rec);
        if (rec.validation < out.best_validation.loss) {
            out.best_validation = {rec.validation, rec.accuracy};
            out.best_epoch = rec.epoch;
            out.best = graph_.params();
        }
    }
    out.batch_losses = state_.batch_losses;
    return out;
}

KdFitResult fit_codes(const TrainConfig& cfg, const KdLayerConfig& layer_cfg, Task& task) {
    KdEmbeddingLayer layer(layer_cfg);
    Trainer trainer(cfg, layer, task);
    auto fit = trainer.fit();
    KdFitResult r{layer.codes(fit.best), layer.codebook(fit.best), std::move(fit)};
    return r;
}

}  // namespace kdc
