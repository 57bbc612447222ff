#include "kdcode/codes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace kdc {

void CodeConfig::validate() const {
    if (vocab == 0) throw Error("code config: vocabulary must be non-empty");
    if (way < 2) throw Error("code config: K must be at least 2");
    if (dims < 1) throw Error("code config: D must be at least 1");
    if (code_dim < 1) throw Error("code config: code embedding width must be at least 1");
    if (!lossy && code_space_size(way, dims) < static_cast<double>(vocab)) {
        throw Error("code config: K^D = " + std::to_string(std::llround(code_space_size(way, dims))) + " < N = " +
                    std::to_string(vocab) + " (set lossy to allow collisions)");
    }
}

CodeLogits CodeLogits::initialize(const CodeConfig& cfg, Rng& rng) {
    return CodeLogits{normal_tensor({cfg.vocab, cfg.dims, cfg.way}, 0.0, 0.01, rng)};
}

DiscreteCodeTable::DiscreteCodeTable(std::size_t way, std::size_t dims, std::vector<std::uint32_t> digits,
                                     std::vector<std::string> symbols)
    : way_(way), dims_(dims), digits_(std::move(digits)) {
    if (dims_ == 0 || digits_.size() % dims_) throw Error("code table: digit count is not a multiple of D");
    for (auto d : digits_) {
        if (d >= way_) throw Error("code table: digit " + std::to_string(d) + " out of range for K=" + std::to_string(way_));
    }
    set_symbols(std::move(symbols));
}

void DiscreteCodeTable::set_symbols(std::vector<std::string> symbols) {
    if (!symbols.empty() && symbols.size() != vocab()) {
        throw Error("code table: " + std::to_string(symbols.size()) + " symbols for " + std::to_string(vocab()) + " codes");
    }
    symbols_ = std::move(symbols);
}

std::string DiscreteCodeTable::symbol(std::size_t i) const {
    return symbols_.empty() ? std::to_string(i) : symbols_[i];
}

std::string DiscreteCodeTable::render(std::size_t symbol) const {
    std::string s;
    for (std::size_t j = 0; j < dims_; ++j) {
        if (j) s += '-';
        s += std::to_string(digit(symbol, j));
    }
    return s;
}

Tensor DiscreteCodeTable::one_hot() const {
    Tensor t({vocab(), dims_, way_});
    for (std::size_t i = 0; i < digits_.size(); ++i) t[i * way_ + digits_[i]] = 1.0;
    return t;
}

void write_code_table(std::ostream& os, const DiscreteCodeTable& table) {
    os << "#kd K=" << table.way() << " D=" << table.dims() << " N=" << table.vocab() << '\n';
    for (std::size_t i = 0; i < table.vocab(); ++i) {
        const auto sym = table.symbol(i);
        if (sym.empty() || sym.find_first_of(" \t\r\n") != std::string::npos) {
            throw Error("code table: symbol " + std::to_string(i) + " is empty or contains whitespace");
        }
        os << sym << ' ' << table.render(i) << '\n';
    }
}

DiscreteCodeTable read_code_table(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw Error("code table: missing header");
    std::size_t K = 0, D = 0, N = 0;
    {
        std::istringstream hs(line);
        std::string tag, k, d, n;
        hs >> tag >> k >> d >> n;
        if (tag != "#kd" || k.rfind("K=", 0) || d.rfind("D=", 0) || n.rfind("N=", 0)) {
            throw Error("code table: malformed header '" + line + "'");
        }
        K = std::stoul(k.substr(2));
        D = std::stoul(d.substr(2));
        N = std::stoul(n.substr(2));
    }
    std::vector<std::uint32_t> digits;
    std::vector<std::string> symbols;
    digits.reserve(N * D);
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string sym, code, extra;
        if (!(ls >> sym >> code) || (ls >> extra)) {
            throw Error("code table: line " + std::to_string(lineno) + " is not '<symbol> <code>'");
        }
        std::size_t count = 0;
        std::istringstream cs(code);
        std::string part;
        while (std::getline(cs, part, '-')) {
            if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
                throw Error("code table: line " + std::to_string(lineno) + " has a non-numeric digit");
            }
            digits.push_back(static_cast<std::uint32_t>(std::stoul(part)));
            ++count;
        }
        if (count != D) throw Error("code table: line " + std::to_string(lineno) + " has " + std::to_string(count) + " digits");
        symbols.push_back(sym);
    }
    if (symbols.size() != N) throw Error("code table: header says N=" + std::to_string(N) + ", found " + std::to_string(symbols.size()));
    return DiscreteCodeTable(K, D, std::move(digits), std::move(symbols));
}

void save_code_table(const std::string& path, const DiscreteCodeTable& table) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    write_code_table(os, table);
}

DiscreteCodeTable load_code_table(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read " + path);
    return read_code_table(is);
}

std::vector<double> tempering_softmax(std::span<const double> logits, double tau) {
    if (!(tau > 0)) throw Error("tempering_softmax: temperature must be positive");
    Tensor row({logits.size()}, std::vector<double>(logits.begin(), logits.end()));
    return kernels::softmax(row, tau).storage();
}

Tensor tempering_softmax(const Tensor& logits, double tau) {
    if (!(tau > 0)) throw Error("tempering_softmax: temperature must be positive");
    return kernels::softmax(logits, tau);
}

std::vector<double> straight_through(std::span<const double> relaxed) {
    std::vector<double> out(relaxed.size(), 0.0);
    if (!relaxed.empty()) out[kernels::argmax(relaxed)] = 1.0;
    return out;
}

double entropy_regularizer(const Tensor& relaxed) {
    double h = 0;
    for (double p : relaxed.values()) {
        if (p < 0) throw Error("entropy_regularizer: negative probability");
        if (p > 0) h -= p * std::log(std::max(p, 1e-12));
    }
    return h;
}

DiscreteCodeTable extract_codes(const CodeLogits& logits) {
    const auto& v = logits.values;
    std::vector<std::uint32_t> digits(v.rows());
    for (std::size_t r = 0; r < v.rows(); ++r) digits[r] = static_cast<std::uint32_t>(kernels::argmax(v.row(r)));
    return DiscreteCodeTable(logits.way(), logits.dims(), std::move(digits));
}

CodeSpaceStats code_space_stats(const DiscreteCodeTable& table) {
    std::set<std::vector<std::uint32_t>> seen;
    for (std::size_t i = 0; i < table.vocab(); ++i) {
        auto c = table.code(i);
        seen.emplace(c.begin(), c.end());
    }
    CodeSpaceStats s;
    s.unique_codes = seen.size();
    s.utilization = static_cast<double>(seen.size()) / code_space_size(table.way(), table.dims());
    s.collisions = table.vocab() - seen.size();
    return s;
}

double code_space_size(std::size_t way, std::size_t dims) {
    return std::pow(static_cast<double>(way), static_cast<double>(dims));
}

double no_collision_probability(std::uint64_t vocab, std::size_t way, std::size_t dims) {
    const double space = code_space_size(way, dims);
    if (static_cast<double>(vocab) > space) return 0.0;
    if (vocab <= 1) return 1.0;
    if (vocab <= kExactCollisionLimit) {
        double log_p = 0;
        for (std::uint64_t i = 1; i < vocab; ++i) log_p += std::log1p(-static_cast<double>(i) / space);
        return std::exp(log_p);
    }
    const double n = static_cast<double>(vocab);
    return std::exp(-n * (n - 1) / (2 * space));
}

std::size_t min_dimension(std::uint64_t vocab, std::size_t way) {
    if (vocab == 0) throw Error("min_dimension: N must be positive");
    if (way < 2) throw Error("min_dimension: K must be at least 2");
    std::size_t d = 0;
    unsigned __int128 cap = 1;
    while (cap < vocab) {
        cap *= way;
        ++d;
    }
    return std::max<std::size_t>(d, 1);
}

std::uint64_t embedding_params_count(std::size_t way, std::size_t dims, std::size_t code_dim,
                                     std::uint64_t composer_params) {
    return static_cast<std::uint64_t>(way) * dims * code_dim + composer_params;
}

bool is_power_of_two(std::size_t v) noexcept { return v && !(v & (v - 1)); }

std::size_t bits_per_digit(std::size_t way) {
    if (way < 2) return 0;
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < way) ++bits;
    return bits;
}

std::uint64_t kd_layer_bits(std::uint64_t vocab, std::size_t way, std::size_t dims, std::size_t code_dim,
                            std::uint64_t composer_params) {
    return vocab * dims * bits_per_digit(way) + 32 * embedding_params_count(way, dims, code_dim, composer_params);
}

std::uint64_t full_layer_bits(std::uint64_t vocab, std::size_t dim, FullBitsConvention convention) {
    return convention == FullBitsConvention::Table ? 32 * vocab * dim : 32 * vocab * (1 + dim);
}

}  // namespace kdc
