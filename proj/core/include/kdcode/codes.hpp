#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdcode/rng.hpp"
#include "kdcode/tensor.hpp"

namespace kdc {

/// Shape of a K-way D-dimensional code system.
struct CodeConfig {
    std::size_t vocab = 0;      // N
    std::size_t way = 2;        // K
    std::size_t dims = 1;       // D
    std::size_t code_dim = 1;   // d', width of each code embedding
    /// Permits K^D < N, where collisions are unavoidable.
    bool lossy = false;

    void validate() const;
};

/// Trainable relaxed code parameters, one row of K logits per symbol and
/// code dimension. Stored as an [N, D, K] tensor.
struct CodeLogits {
    Tensor values;

    std::size_t vocab() const { return values.shape().at(0); }
    std::size_t dims() const { return values.shape().at(1); }
    std::size_t way() const { return values.shape().at(2); }

    /// i.i.d. N(0, 0.01^2) entries, so relaxed codes start near uniform.
    static CodeLogits initialize(const CodeConfig& cfg, Rng& rng);
};

/// Discrete code allocation: symbol i -> D digits in [0, K).
class DiscreteCodeTable {
public:
    DiscreteCodeTable() = default;
    DiscreteCodeTable(std::size_t way, std::size_t dims, std::vector<std::uint32_t> digits,
                      std::vector<std::string> symbols = {});

    std::size_t vocab() const noexcept { return dims_ ? digits_.size() / dims_ : 0; }
    std::size_t way() const noexcept { return way_; }
    std::size_t dims() const noexcept { return dims_; }

    std::span<const std::uint32_t> code(std::size_t symbol) const { return {digits_.data() + symbol * dims_, dims_}; }
    std::uint32_t digit(std::size_t symbol, std::size_t j) const { return digits_[symbol * dims_ + j]; }
    const std::vector<std::uint32_t>& digits() const noexcept { return digits_; }
    const std::vector<std::string>& symbols() const noexcept { return symbols_; }
    /// Symbol label, or its index when no vocabulary is attached.
    std::string symbol(std::size_t i) const;
    void set_symbols(std::vector<std::string> symbols);

    /// "3-1-0-4"
    std::string render(std::size_t symbol) const;

    /// Rank-3 [N, D, K] one-hot tensor of the codes.
    Tensor one_hot() const;

    friend bool operator==(const DiscreteCodeTable&, const DiscreteCodeTable&) = default;

private:
    std::size_t way_ = 0;
    std::size_t dims_ = 0;
    std::vector<std::uint32_t> digits_;
    std::vector<std::string> symbols_;
};

/// Text export: header `#kd K=<K> D=<D> N=<N>`, then `<symbol> d1-d2-...-dD`.
void write_code_table(std::ostream& os, const DiscreteCodeTable& table);
DiscreteCodeTable read_code_table(std::istream& is);
void save_code_table(const std::string& path, const DiscreteCodeTable& table);
DiscreteCodeTable load_code_table(const std::string& path);

/// softmax(logits / tau) for one row.
std::vector<double> tempering_softmax(std::span<const double> logits, double tau);
/// Rowwise over the last axis of `logits`.
Tensor tempering_softmax(const Tensor& logits, double tau);

/// one_hot(argmax), lowest index on ties.
std::vector<double> straight_through(std::span<const double> relaxed);

/// -sum p log p over all rows (0 log 0 = 0, 1e-12 floor inside the log).
double entropy_regularizer(const Tensor& relaxed);

DiscreteCodeTable extract_codes(const CodeLogits& logits);

struct CodeSpaceStats {
    std::size_t unique_codes = 0;
    double utilization = 0;   // unique / K^D
    std::size_t collisions = 0;
};

CodeSpaceStats code_space_stats(const DiscreteCodeTable& table);

/// K^D as a double (may exceed 2^64).
double code_space_size(std::size_t way, std::size_t dims);

/// Probability that N uniformly random codes are pairwise distinct.
/// Uses the exact product prod_{i<N}(1 - i/K^D) for N <= kExactCollisionLimit,
/// and exp(-N(N-1) / (2 K^D)) above it.
double no_collision_probability(std::uint64_t vocab, std::size_t way, std::size_t dims);
inline constexpr std::uint64_t kExactCollisionLimit = 10'000'000;

/// Smallest D with K^D >= N.
std::size_t min_dimension(std::uint64_t vocab, std::size_t way);

/// K*D*d' + C: code embedding tables plus composer parameters.
std::uint64_t embedding_params_count(std::size_t way, std::size_t dims, std::size_t code_dim,
                                     std::uint64_t composer_params);

/// Bits needed per stored digit; exact log2 K when K is a power of two,
/// otherwise ceil(log2 K).
std::size_t bits_per_digit(std::size_t way);
bool is_power_of_two(std::size_t v) noexcept;

enum class FullBitsConvention {
    /// 32 * N * d: one float per entry.
    Table,
    /// 32 * N * (1 + d): one extra float per symbol.
    Text,
};

/// N*D*bits(K) + 32*(K*D*d' + C).
std::uint64_t kd_layer_bits(std::uint64_t vocab, std::size_t way, std::size_t dims, std::size_t code_dim,
                            std::uint64_t composer_params);
std::uint64_t full_layer_bits(std::uint64_t vocab, std::size_t dim,
                              FullBitsConvention convention = FullBitsConvention::Table);

}  // namespace kdc
