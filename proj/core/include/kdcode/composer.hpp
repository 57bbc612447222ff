#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kdcode/codes.hpp"
#include "kdcode/graph.hpp"

namespace kdc {

enum class ComposerKind : std::uint32_t {
    /// v = (sum_j W^j[c_j]) H
    LinearSum = 0,
    /// v = relu((sum_j W^j[c_j]) A + a) H + b
    LinearHidden = 1,
    /// LSTM over the D code embeddings, hidden states summed, then H.
    Lstm = 2,
};

const char* composer_name(ComposerKind kind) noexcept;
ComposerKind parse_composer(const std::string& name);

struct ComposerSpec {
    ComposerKind kind = ComposerKind::LinearSum;
    std::size_t hidden = 300;
    /// Reuse the forget-gate weights for the output gate instead of a
    /// separate U_o, b_o.
    bool lstm_tied_output_gate = false;
};

/// Code embedding tables W^1..W^D plus the composition parameters.
///
/// Row-vector convention throughout: the projection H is stored as
/// [in, d] and applied on the right.
struct CodeBook {
    std::size_t way = 0;
    std::size_t dims = 0;
    std::size_t code_dim = 0;
    std::size_t out_dim = 0;
    ComposerSpec spec;

    std::vector<Tensor> tables;                         // D x [K, d']
    std::optional<Tensor> projection;                   // H
    std::vector<std::pair<std::string, Tensor>> theta;  // composer-specific, fixed order

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    static CodeBook initialize(std::size_t way, std::size_t dims, std::size_t code_dim, std::size_t out_dim,
                               ComposerSpec spec, Rng& rng);

    const Tensor& param(const std::string& name) const;
    Tensor& param(const std::string& name);
    bool has_param(const std::string& name) const;

    /// C: parameters outside the code embedding tables.
    std::uint64_t composer_params() const;
    /// K*D*d' + C.
    std::uint64_t param_count() const;
    void validate() const;
};

/// C for a composer of the given shape, without building one.
std::uint64_t composer_param_count(std::size_t code_dim, std::size_t out_dim, const ComposerSpec& spec);

/// Binds a CodeBook's tensors as graph parameters and builds the
/// composition for any selection node of shape [B, D, K]. The same binding
/// can be applied to several selections (shared decoder).
class ComposerNet {
public:
    ComposerNet(diff::Graph& g, const CodeBook& book, std::string prefix = "f/");

    diff::Node apply(diff::Graph& g, diff::Node selection) const;
    std::vector<std::string> param_names() const;
    /// Copies trained values back into `book`.
    void read_back(const diff::ParamStore& params, CodeBook& book) const;
    const std::string& prefix() const noexcept { return prefix_; }

private:
    std::string key(const std::string& name) const { return prefix_ + name; }

    std::string prefix_;
    std::size_t way_, dims_;
    ComposerSpec spec_;
    bool has_projection_;
    std::vector<diff::Node> tables_;
    diff::Node projection_;
    std::vector<std::pair<std::string, diff::Node>> theta_;
};

/// Composes one symbol from D selection rows (each one-hot or relaxed,
/// summing to 1 within 1e-6), given as a [D, K] tensor.
Tensor compose(const Tensor& selection, const CodeBook& book);

/// Hard-code composition by row lookup for every symbol of `table`.
Tensor compose_batch(const DiscreteCodeTable& table, const CodeBook& book);
/// Same for a subset of symbols.
Tensor compose_rows(const DiscreteCodeTable& table, std::span<const std::size_t> symbols, const CodeBook& book);

/// N x (K*D) binary matrix of concatenated one-hot digits.
Tensor binary_code_matrix(const DiscreteCodeTable& table);
/// (K*D) x d' matrix of the stacked code embedding tables.
Tensor stacked_code_embeddings(const CodeBook& book);
/// max |compose_batch - B C| for a linear-sum composer without projection.
double factorization_equivalence_check(const DiscreteCodeTable& table, const CodeBook& book);

/// Binary export: "KDCB", then uint32 version, K, D, d', d, kind, hidden
/// width, flags (bit 0 tied LSTM output gate, bit 1 projection present),
/// then little-endian float32 values of W^1..W^D, H, and theta in order.
void write_codebook(std::ostream& os, const CodeBook& book);
CodeBook read_codebook(std::istream& is);
void save_codebook(const std::string& path, const CodeBook& book);
CodeBook load_codebook(const std::string& path);

}  // namespace kdc
