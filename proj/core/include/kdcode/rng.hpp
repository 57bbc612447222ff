#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "kdcode/tensor.hpp"

namespace kdc {

/// The one generator type threaded through every stochastic step.
using Rng = std::mt19937_64;

/// Independent stream for sub-run `index` of a run seeded with `base`.
inline Rng derive_rng(std::uint64_t base, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x6b64u};
    return Rng(seq);
}

inline Tensor normal_tensor(Shape shape, double mean, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(mean, stddev);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

inline Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

}  // namespace kdc
