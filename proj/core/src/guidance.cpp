#include "kdcode/guidance.hpp"

#include <cmath>

namespace kdc {

const char* guidance_name(GuidanceMode mode) noexcept {
    switch (mode) {
        case GuidanceMode::None: return "none";
        case GuidanceMode::Online: return "odg";
        case GuidanceMode::Pretrained: return "pdg";
    }
    return "?";
}

GuidanceMode parse_guidance(const std::string& name) {
    if (name == "none") return GuidanceMode::None;
    if (name == "odg" || name == "online") return GuidanceMode::Online;
    if (name == "pdg" || name == "pretrained") return GuidanceMode::Pretrained;
    throw Error("unknown guidance mode '" + name + "'");
}

void GuidanceConfig::validate() const {
    if (!(keep_prob >= 0 && keep_prob <= 1)) throw Error("guidance: keep probability must be in [0, 1]");
    if (lambda < 0 || alpha < 0 || beta < 0) throw Error("guidance: loss weights must be non-negative");
    if (encoder_hidden == 0) throw Error("guidance: encoder hidden width must be positive");
}

Encoder Encoder::initialize(std::size_t in_dim, std::size_t dims, std::size_t way, std::size_t hidden, Rng& rng) {
    Encoder e;
    e.dims = dims;
    e.way = way;
    const double l1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
    const double l2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    e.w1 = uniform_tensor({in_dim, hidden}, -l1, l1, rng);
    e.b1 = Tensor({hidden});
    e.w2 = uniform_tensor({hidden, dims * way}, -l2, l2, rng);
    e.b2 = Tensor({dims * way});
    return e;
}

EncoderNet::EncoderNet(diff::Graph& g, const Encoder& enc, std::string prefix)
    : prefix_(std::move(prefix)), dims_(enc.dims), way_(enc.way) {
    w1_ = g.parameter(prefix_ + "w1", enc.w1);
    b1_ = g.parameter(prefix_ + "b1", enc.b1);
    w2_ = g.parameter(prefix_ + "w2", enc.w2);
    b2_ = g.parameter(prefix_ + "b2", enc.b2);
}

diff::Node EncoderNet::apply(diff::Graph& g, diff::Node u) const {
    auto hidden = g.tanh(g.add(g.matmul(u, w1_), b1_));
    auto flat = g.add(g.matmul(hidden, w2_), b2_);
    return g.reshape(flat, {0, dims_, way_});
}

std::vector<std::string> EncoderNet::param_names() const {
    return {prefix_ + "w1", prefix_ + "b1", prefix_ + "w2", prefix_ + "b2"};
}

void EncoderNet::read_back(const diff::ParamStore& params, Encoder& enc) const {
    enc.w1 = params.at(prefix_ + "w1");
    enc.b1 = params.at(prefix_ + "b1");
    enc.w2 = params.at(prefix_ + "w2");
    enc.b2 = params.at(prefix_ + "b2");
}

Tensor odg_mix(const Tensor& u, const Tensor& fc, const Tensor& mask) {
    if (u.shape() != fc.shape() || u.shape() != mask.shape()) throw Error("odg_mix: operand shapes differ");
    Tensor v(u.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = mask[i] * u[i] + (1.0 - mask[i]) * fc[i];
    return v;
}

Tensor draw_mask(std::size_t rows, std::size_t cols, double keep_prob, bool per_symbol, Rng& rng) {
    std::bernoulli_distribution keep(keep_prob);
    Tensor m({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        if (per_symbol) {
            const double v = keep(rng) ? 1.0 : 0.0;
            for (double& x : m.row(r)) x = v;
        } else {
            for (double& x : m.row(r)) x = keep(rng) ? 1.0 : 0.0;
        }
    }
    return m;
}

namespace guidance {

diff::Node mix(diff::Graph& g, diff::Node u, diff::Node fc, diff::Node mask, diff::Node inv_mask) {
    return g.add(g.multiply(u, mask), g.multiply(fc, inv_mask));
}

diff::Node online_regularizer(diff::Graph& g, diff::Node u, diff::Node fc) {
    return g.squared_error(g.stop_gradient(u), fc);
}

diff::Node autoencoder_loss(diff::Graph& g, const EncoderNet& enc, const ComposerNet& f, diff::Node u,
                            diff::Node tau) {
    auto relaxed = g.softmax(enc.apply(g, u), tau);
    return g.squared_error(f.apply(g, relaxed), u);
}

DistillationTerms distillation_terms(diff::Graph& g, const ComposerNet& f, const EncoderNet* encoder,
                                     diff::Node logits, diff::Node u, diff::Node tau) {
    DistillationTerms t;
    t.composed = g.squared_error(f.apply(g, g.softmax(logits, tau)), u);
    if (encoder) t.logits = g.squared_error(logits, encoder->apply(g, u));
    return t;
}

}  // namespace guidance

namespace {

void check_tau(double tau) {
    if (!(tau > 0)) throw Error("guidance: temperature must be positive");
}

}  // namespace

double autoencoder_loss(const Tensor& u, const Encoder& enc, const CodeBook& book, double tau) {
    check_tau(tau);
    diff::Graph g;
    ComposerNet f(g, book);
    EncoderNet e(g, enc);
    auto un = g.input("u", {0, u.cols()});
    auto loss = guidance::autoencoder_loss(g, e, f, un, g.constant(Tensor::scalar(tau)));
    diff::Feed feed;
    feed.set("u", u);
    return g.evaluate(feed, loss).scalar(loss);
}

double distillation_loss(const CodeLogits& logits, const Tensor& u, const Encoder& enc, const CodeBook& book,
                         double tau, double alpha, double beta) {
    check_tau(tau);
    if (logits.vocab() != u.rows()) throw Error("distillation_loss: logits and embeddings disagree on N");
    diff::Graph g;
    ComposerNet f(g, book);
    EncoderNet e(g, enc);
    auto pi = g.input("pi", logits.values.shape());
    auto un = g.input("u", {0, u.cols()});
    auto terms = guidance::distillation_terms(g, f, &e, pi, un, g.constant(Tensor::scalar(tau)));
    diff::Feed feed;
    feed.set("pi", logits.values).set("u", u);
    const diff::Node targets[] = {terms.composed, terms.logits};
    auto ev = g.evaluate(feed, targets);
    return alpha * ev.scalar(terms.composed) + beta * ev.scalar(terms.logits);
}

}  // namespace kdc
