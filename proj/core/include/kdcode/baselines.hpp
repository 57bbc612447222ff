#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kdcode/codes.hpp"
#include "kdcode/composer.hpp"
#include "kdcode/trainer.hpp"

namespace kdc {

struct QuantizationResult {
    std::string method;
    Tensor reconstruction;   // [N, d]
    std::uint64_t params = 0;
    std::uint64_t bits = 0;
    double error = 0;        // mean over rows of the squared row error
};

// ---------------------------------------------------------------------------
// low-rank factorization

struct LowRankOptions {
    std::size_t steps = 8000;
    double lr_start = 0.05;
    double lr_end = 1e-4;
    std::uint64_t seed = 1;
};

struct LowRankFactors {
    Tensor a;  // [N, r]
    Tensor b;  // [r, d]
    double error = 0;
};

/// U ~ A B by Adam on the squared reconstruction error, learning rate
/// decayed geometrically from lr_start to lr_end.
LowRankFactors low_rank_fit(const Tensor& u, std::size_t rank, const LowRankOptions& opts = {});
QuantizationResult low_rank_baseline(const Tensor& u, std::size_t rank, const LowRankOptions& opts = {});

// ---------------------------------------------------------------------------
// k-means and product quantization

struct KMeansResult {
    Tensor centroids;                       // [K, d]
    std::vector<std::uint32_t> assignment;  // per row
    std::vector<double> inertia;            // after each assignment step
};

/// Lloyd iterations from k-means++ seeding. An empty cluster keeps its
/// previous centroid.
KMeansResult kmeans(const Tensor& x, std::size_t k, Rng& rng, std::size_t max_iter = 25, double rel_tol = 1e-6);

struct ProductQuantizer {
    std::size_t subspaces = 0;          // M
    std::size_t centroids = 0;          // K
    std::vector<Tensor> codebooks;      // M x [K, d/M]
    DiscreteCodeTable codes;            // K-way, M-dimensional

    std::size_t block() const { return codebooks.empty() ? 0 : codebooks[0].cols(); }
    Tensor reconstruct() const;
    /// The same quantizer as a linear-sum composer: code embedding j is the
    /// j-th centroid block zero-padded to full width.
    CodeBook as_codebook() const;
    std::uint64_t bits() const;
};

ProductQuantizer product_quantize(const Tensor& u, std::size_t subspaces, std::size_t centroids, std::uint64_t seed);
QuantizationResult product_quantization_baseline(const Tensor& u, std::size_t subspaces, std::size_t centroids,
                                                 std::uint64_t seed);

// ---------------------------------------------------------------------------
// scalar quantization

struct ScalarQuantized {
    Tensor matrix;  // dequantized values
    double offset = 0;
    double scale = 0;
    unsigned bits = 0;
};

/// Uniform grid of 2^b levels between the matrix minimum and maximum.
ScalarQuantized scalar_quantize(const Tensor& u, unsigned bits);
QuantizationResult scalar_quantization_baseline(const Tensor& u, unsigned bits);

// ---------------------------------------------------------------------------
// code baselines

/// i.i.d. uniform digits.
DiscreteCodeTable random_codes(std::size_t vocab, std::size_t way, std::size_t dims, std::uint64_t seed);

/// Codes learned on the reconstruction objective against `u`, to be frozen
/// for downstream training.
DiscreteCodeTable pretrained_codes(const Tensor& u, const CodeConfig& codes, const ComposerSpec& composer,
                                   const TrainConfig& cfg);

}  // namespace kdc
