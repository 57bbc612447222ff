#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "kdcode/baselines.hpp"
#include "kdcode/tasks.hpp"
#include "oracles.hpp"

using namespace kdc;

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
    Eigen::MatrixXd m(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
    return m;
}

// Best rank-r mean squared row error: trailing squared singular values over N.
double eckart_young(const Tensor& u, std::size_t r) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(u));
    const auto& s = svd.singularValues();
    double tail = 0;
    for (Eigen::Index i = static_cast<Eigen::Index>(r); i < s.size(); ++i) tail += s(i) * s(i);
    return tail / static_cast<double>(u.rows());
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace

TEST_CASE("low rank recovers an exactly low-rank matrix") {
    Rng rng(1);
    for (std::size_t r : {1u, 3u}) {
        auto u = oracle::matmul(normal_tensor({40, r}, 0, 1, rng), normal_tensor({r, 8}, 0, 1, rng));
        auto f = low_rank_fit(u, r);
        CHECK(f.a.shape() == Shape{40, r});
        CHECK(f.b.shape() == Shape{r, 8});
        CHECK(f.error < 1e-8);
        CHECK(f.error == doctest::Approx(reconstruction_mse(oracle::matmul(f.a, f.b), u)));
    }
}

TEST_CASE("low rank at full rank is exact and error falls with rank") {
    Rng rng(20);
    auto u = normal_tensor({50, 20}, 0, 1, rng);
    CHECK(low_rank_fit(u, 20).error < 1e-6);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t r : {1u, 5u, 10u, 15u}) {
        const double e = low_rank_fit(u, r).error;
        CHECK(e <= prev);
        prev = e;
    }
    CHECK_THROWS_AS(low_rank_fit(u, 0), Error);
    CHECK_THROWS_AS(low_rank_fit(u, 21), Error);
}

TEST_CASE("low rank reaches the SVD bound on a full-rank matrix") {
    Rng rng(2);
    auto u = normal_tensor({30, 6}, 0, 1, rng);
    for (std::size_t r : {2u, 4u}) {
        const double bound = eckart_young(u, r);
        auto res = low_rank_baseline(u, r);
        CHECK(res.error >= bound - 1e-12);
        CHECK(res.error - bound < 1e-6 * (1 + bound));
        CHECK(res.params == (30 + 6) * r);
        CHECK(res.bits == 32 * res.params);
    }
}

TEST_CASE("k-means inertia never increases and points go to their nearest centroid") {
    auto x = make_clustered_embeddings(300, 4, 6, 0.4, 3).vectors;
    Rng rng(4);
    auto km = kmeans(x, 6, rng, 50, 0.0);
    REQUIRE(km.inertia.size() >= 2);
    for (std::size_t i = 1; i < km.inertia.size(); ++i) CHECK(km.inertia[i] <= km.inertia[i - 1] + 1e-12);
    std::size_t misplaced = 0;
    double inertia = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double own = sq_dist(x.row(i), km.centroids.row(km.assignment[i]));
        inertia += own;
        for (std::size_t c = 0; c < 6; ++c) misplaced += sq_dist(x.row(i), km.centroids.row(c)) < own - 1e-12;
    }
    CHECK(misplaced == 0);
    CHECK(inertia == doctest::Approx(km.inertia.back()));
    CHECK_THROWS_AS(kmeans(x, 301, rng), Error);
}

TEST_CASE("k-means with one centroid per distinct point is exact") {
    Rng rng(5);
    auto x = normal_tensor({12, 3}, 0, 1, rng);
    auto km = kmeans(x, 12, rng);
    CHECK(km.inertia.back() == doctest::Approx(0.0));
    std::set<std::uint32_t> used(km.assignment.begin(), km.assignment.end());
    CHECK(used.size() == 12);
}

TEST_CASE("product quantization is a linear-sum composer over padded blocks") {
    auto u = make_clustered_embeddings(200, 12, 8, 0.3, 6).vectors;
    for (std::size_t m : {1u, 3u, 4u}) {
        auto pq = product_quantize(u, m, 8, 7);
        CHECK(pq.block() == 12 / m);
        CHECK(pq.codes.dims() == m);
        auto book = pq.as_codebook();
        CHECK(book.spec.kind == ComposerKind::LinearSum);
        CHECK_FALSE(book.projection.has_value());
        CHECK(oracle::max_abs_diff(compose_batch(pq.codes, book), pq.reconstruct()) < 1e-10);
        // block m' of row i is centroid c_{i,m'} of subspace m'
        auto rec = pq.reconstruct();
        double worst = 0;
        for (std::size_t i = 0; i < 200; ++i)
            for (std::size_t b = 0; b < m; ++b)
                for (std::size_t c = 0; c < pq.block(); ++c)
                    worst = std::max(worst, std::abs(rec.at(i, b * pq.block() + c) -
                                                     pq.codebooks[b].at(pq.codes.digit(i, b), c)));
        CHECK(worst == 0.0);
    }
}

TEST_CASE("product quantization is exact on repeated rows") {
    Rng rng(15);
    auto proto = normal_tensor({5, 6}, 0, 1, rng);
    Tensor u({60, 6});
    for (std::size_t i = 0; i < 60; ++i)
        std::copy(proto.row(i % 5).begin(), proto.row(i % 5).end(), u.row(i).begin());
    CHECK(product_quantization_baseline(u, 1, 5, 2).error == doctest::Approx(0.0));
    auto small = normal_tensor({9, 4}, 0, 1, rng);
    CHECK(product_quantization_baseline(small, 1, 9, 3).error == doctest::Approx(0.0));
}

TEST_CASE("product quantization bits for 64 centroids over two blocks of 325") {
    ProductQuantizer pq;
    pq.subspaces = 2;
    pq.centroids = 64;
    pq.codebooks = {Tensor({64, 325}), Tensor({64, 325})};
    pq.codes = DiscreteCodeTable(64, 2, std::vector<std::uint32_t>(10000 * 2, 0));
    CHECK(pq.bits() == 10000ull * 2 * 6 + 32ull * 64 * 650);
}

TEST_CASE("product quantization accounting") {
    auto u = make_clustered_embeddings(1000, 32, 10, 0.3, 8).vectors;
    auto r = product_quantization_baseline(u, 4, 16, 9);
    CHECK(r.bits == 1000ull * 4 * 4 + 32ull * 16 * 32);
    CHECK(r.params == 16 * 32);
    CHECK(r.method == "pq-16x8");
    CHECK(r.error == doctest::Approx(reconstruction_mse(r.reconstruction, u)));
    CHECK_THROWS_AS(product_quantize(u, 5, 16, 1), Error);
    CHECK_THROWS_AS(product_quantize(Tensor({4, 4}), 2, 5, 1), Error);
}

TEST_CASE("more centroids lower the product quantization error") {
    auto u = make_clustered_embeddings(400, 8, 16, 0.3, 10).vectors;
    const double coarse = product_quantization_baseline(u, 2, 4, 1).error;
    const double fine = product_quantization_baseline(u, 2, 64, 1).error;
    CHECK(fine < coarse);
}

TEST_CASE("scalar quantization stays on its grid") {
    Rng rng(11);
    auto u = normal_tensor({50, 7}, 0, 1, rng);
    for (unsigned b : {1u, 3u, 8u}) {
        auto q = scalar_quantize(u, b);
        const double levels = std::ldexp(1.0, static_cast<int>(b)) - 1;
        std::set<double> distinct;
        double worst = 0;
        std::size_t off_grid = 0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            const double k = (q.matrix[i] - q.offset) / q.scale;
            off_grid += std::abs(k - std::round(k)) > 1e-9 || k < -1e-9 || k > levels + 1e-9;
            distinct.insert(q.matrix[i]);
            worst = std::max(worst, std::abs(q.matrix[i] - u[i]));
        }
        CHECK(off_grid == 0);
        CHECK(distinct.size() <= static_cast<std::size_t>(levels) + 1);
        CHECK(worst <= q.scale / 2 + 1e-12);
    }
    for (unsigned b : {1u, 8u, 32u}) CHECK(scalar_quantize(Tensor({2, 2}, 3.0), b).matrix == Tensor({2, 2}, 3.0));
    auto flat = scalar_quantize(Tensor({2, 2}, 3.0), 4);
    CHECK(flat.matrix == Tensor({2, 2}, 3.0));
    CHECK_THROWS_AS(scalar_quantize(u, 0), Error);
    auto r = scalar_quantization_baseline(u, 8);
    CHECK(r.bits == 50ull * 7 * 8 + 64);
    CHECK(r.params == 2);
}

TEST_CASE("scalar quantization error bound on uniform data") {
    Rng rng(16);
    auto u = uniform_tensor({100, 100}, 0, 1, rng);
    auto q = scalar_quantize(u, 8);
    const auto [lo, hi] = std::minmax_element(u.values().begin(), u.values().end());
    double worst = 0;
    for (std::size_t i = 0; i < u.size(); ++i) worst = std::max(worst, std::abs(q.matrix[i] - u[i]));
    CHECK(worst <= (*hi - *lo) / 510 + 1e-15);
    CHECK(worst <= 1.0 / 510);
    auto fine = scalar_quantize(u, 32);
    double w32 = 0;
    for (std::size_t i = 0; i < u.size(); ++i) w32 = std::max(w32, std::abs(fine.matrix[i] - u[i]));
    CHECK(w32 < std::ldexp(1.0, -24));
}

TEST_CASE("random codes are uniform over digits") {
    const std::size_t n = 20000, k = 8, d = 3;
    auto t = random_codes(n, k, d, 12);
    std::vector<double> counts(k, 0);
    for (auto v : t.digits()) counts[v] += 1;
    const double expect = static_cast<double>(n * d) / k;
    double chi2 = 0;
    for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
    CHECK(chi2 < 24.3);  // chi-square, 7 degrees of freedom, p = 0.001
    CHECK(random_codes(10, 4, 2, 1) == random_codes(10, 4, 2, 1));
    CHECK_FALSE(random_codes(10, 4, 2, 1) == random_codes(10, 4, 2, 2));
    CHECK_THROWS_AS(random_codes(10, 1, 2, 1), Error);
}

TEST_CASE("pretrained codes group similar rows better than random codes") {
    auto data = make_clustered_embeddings(240, 8, 8, 0.2, 13);
    CodeConfig cc{240, 16, 2, 8, false};
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.01;
    auto learned = pretrained_codes(data.vectors, cc, {}, cfg);
    auto rand = random_codes(240, 16, 2, 14);
    auto fit_with = [&](const DiscreteCodeTable& codes) {
        ReconstructionTask task(data.vectors);
        KdLayerConfig l;
        l.codes = cc;
        l.out_dim = 8;
        l.frozen_codes = codes;
        auto r = fit_codes(cfg, l, task);
        return reconstruction_mse(compose_batch(r.codes, r.codebook), data.vectors);
    };
    CHECK(fit_with(learned) < fit_with(rand));
}
