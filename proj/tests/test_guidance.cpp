#include <cmath>

#include "doctest.h"
#include "kdcode/guidance.hpp"
#include "oracles.hpp"

using namespace kdc;

namespace {

// Encoder forward by hand: tanh(u W1 + b1) W2 + b2, one row.
std::vector<double> encoder_row(const Encoder& e, std::span<const double> u) {
    const std::size_t h = e.b1.size(), o = e.b2.size();
    std::vector<double> hid(h), out(o);
    for (std::size_t j = 0; j < h; ++j) {
        double s = e.b1[j];
        for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * e.w1.at(i, j);
        hid[j] = std::tanh(s);
    }
    for (std::size_t j = 0; j < o; ++j) {
        double s = e.b2[j];
        for (std::size_t i = 0; i < h; ++i) s += hid[i] * e.w2.at(i, j);
        out[j] = s;
    }
    return out;
}

// softmax of each K-block of a flat D*K row, as a [D, K] tensor.
Tensor relax(const std::vector<double>& flat, std::size_t d, std::size_t k, double tau) {
    Tensor s({d, k});
    for (std::size_t j = 0; j < d; ++j) {
        auto p = oracle::softmax(std::vector<double>(flat.begin() + j * k, flat.begin() + (j + 1) * k), tau);
        for (std::size_t c = 0; c < k; ++c) s.at(j, c) = p[c];
    }
    return s;
}

double sq(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace

TEST_CASE("guidance mode names") {
    for (auto m : {GuidanceMode::None, GuidanceMode::Online, GuidanceMode::Pretrained})
        CHECK(parse_guidance(guidance_name(m)) == m);
    CHECK_THROWS_AS(parse_guidance("both"), Error);
    GuidanceConfig c;
    c.keep_prob = 1.5;
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("online mixing") {
    Tensor u = Tensor::matrix(1, 3, {1, 2, 3}), fc = Tensor::matrix(1, 3, {-1, -2, -3});
    CHECK(odg_mix(u, fc, Tensor({1, 3}, 1.0)) == u);
    CHECK(odg_mix(u, fc, Tensor({1, 3}, 0.0)) == fc);
    CHECK(odg_mix(u, fc, Tensor::matrix(1, 3, {1, 0, 1})) == Tensor::matrix(1, 3, {1, -2, 3}));
    CHECK_THROWS_AS(odg_mix(u, Tensor({1, 2}), u), Error);
}

TEST_CASE("mask draws") {
    Rng rng(1);
    auto m = draw_mask(2000, 50, 0.7, false, rng);
    double s = 0;
    std::size_t other = 0;
    for (double v : m.values()) {
        if (v != 0.0 && v != 1.0) ++other;
        s += v;
    }
    CHECK(other == 0);
    const double n = 2000 * 50;
    CHECK(std::abs(s / n - 0.7) < 4 * std::sqrt(0.21 / n));
    auto ps = draw_mask(100, 8, 0.5, true, rng);
    std::size_t mixed = 0;
    for (std::size_t r = 0; r < 100; ++r)
        for (std::size_t c = 1; c < 8; ++c) mixed += ps.at(r, c) != ps.at(r, 0);
    CHECK(mixed == 0);
    CHECK(draw_mask(3, 3, 1.0, false, rng) == Tensor({3, 3}, 1.0));
    CHECK(draw_mask(3, 3, 0.0, false, rng) == Tensor({3, 3}, 0.0));
}

TEST_CASE("autoencoder loss equals the hand computation") {
    Rng rng(2);
    const std::size_t d = 5, D = 3, K = 4;
    auto book = CodeBook::initialize(K, D, 6, d, {ComposerKind::LinearHidden, 7, false}, rng);
    auto enc = Encoder::initialize(d, D, K, 9, rng);
    auto u = normal_tensor({6, d}, 0, 1, rng);
    double expect = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        auto v = compose(relax(encoder_row(enc, u.row(i)), D, K, 0.6), book);
        expect += sq(v.values(), u.row(i));
    }
    CHECK(autoencoder_loss(u, enc, book, 0.6) == doctest::Approx(expect).epsilon(1e-12));
    CHECK_THROWS_AS(autoencoder_loss(u, enc, book, 0.0), Error);
}

TEST_CASE("distillation loss equals the hand computation") {
    Rng rng(3);
    const std::size_t d = 4, D = 2, K = 3, N = 5;
    auto book = CodeBook::initialize(K, D, 4, d, {}, rng);
    auto enc = Encoder::initialize(d, D, K, 6, rng);
    auto u = normal_tensor({N, d}, 0, 1, rng);
    CodeLogits pi{normal_tensor({N, D, K}, 0, 1, rng)};
    double composed = 0, logits = 0;
    for (std::size_t i = 0; i < N; ++i) {
        std::vector<double> row(pi.values.values().begin() + i * D * K, pi.values.values().begin() + (i + 1) * D * K);
        auto v = compose(relax(row, D, K, 0.8), book);
        composed += sq(v.values(), u.row(i));
        logits += sq(row, encoder_row(enc, u.row(i)));
    }
    CHECK(distillation_loss(pi, u, enc, book, 0.8, 1.0, 0.0) == doctest::Approx(composed).epsilon(1e-12));
    CHECK(distillation_loss(pi, u, enc, book, 0.8, 0.0, 1.0) == doctest::Approx(logits).epsilon(1e-12));
    CHECK(distillation_loss(pi, u, enc, book, 0.8, 2.0, 0.5) ==
          doctest::Approx(2 * composed + 0.5 * logits).epsilon(1e-12));
}

TEST_CASE("finite differences of the guidance losses, 20 instances each") {
    double odg = 0, ae = 0, distill = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 7);
        const std::size_t d = 4, D = 2, K = 3;
        auto book = CodeBook::initialize(K, D, 3, d, {static_cast<ComposerKind>(seed % 3), 5, false}, rng);
        auto enc = Encoder::initialize(d, D, K, 5, rng);
        {
            diff::Graph g;
            ComposerNet f(g, book);
            auto pi = g.parameter("pi", normal_tensor({3, D, K}, 0, 1, rng));
            auto u = g.parameter("u", normal_tensor({3, d}, 0, 1, rng));
            auto reg = guidance::online_regularizer(g, u, f.apply(g, g.softmax(pi, 0.7)));
            auto grads = g.gradient(g.evaluate({}, reg), reg, {"u"});
            CHECK(grads["u"] == Tensor({3, d}));
            odg = std::max(odg, g.finite_difference_check({}, reg, "pi", 1e-5));
            for (const auto& n : f.param_names()) odg = std::max(odg, g.finite_difference_check({}, reg, n, 1e-5));
        }
        {
            diff::Graph g;
            ComposerNet f(g, book);
            EncoderNet e(g, enc);
            auto u = g.constant(normal_tensor({3, d}, 0, 1, rng));
            auto loss = guidance::autoencoder_loss(g, e, f, u, g.constant(Tensor::scalar(0.9)));
            for (const auto& [n, t] : g.params()) ae = std::max(ae, g.finite_difference_check({}, loss, n, 1e-5));
        }
        {
            diff::Graph g;
            ComposerNet f(g, book);
            EncoderNet e(g, enc);
            auto pi = g.parameter("pi", normal_tensor({3, D, K}, 0, 1, rng));
            auto u = g.constant(normal_tensor({3, d}, 0, 1, rng));
            auto t = guidance::distillation_terms(g, f, &e, pi, u, g.constant(Tensor::scalar(0.9)));
            auto loss = g.add(t.composed, g.scale(t.logits, 0.5));
            for (const auto& [n, tt] : g.params()) distill = std::max(distill, g.finite_difference_check({}, loss, n, 1e-5));
        }
    }
    CHECK(odg < 1e-4);
    CHECK(ae < 1e-4);
    CHECK(distill < 1e-4);
}

TEST_CASE("distillation without an encoder has no logit term") {
    Rng rng(4);
    auto book = CodeBook::initialize(3, 2, 3, 4, {}, rng);
    diff::Graph g;
    ComposerNet f(g, book);
    auto pi = g.parameter("pi", normal_tensor({2, 2, 3}, 0, 1, rng));
    auto t = guidance::distillation_terms(g, f, nullptr, pi, g.constant(Tensor({2, 4})), g.constant(Tensor::scalar(1)));
    CHECK(t.composed.valid());
    CHECK_FALSE(t.logits.valid());
}
