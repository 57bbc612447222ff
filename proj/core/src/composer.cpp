#include "kdcode/composer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace kdc {

namespace {

std::vector<std::pair<std::string, Shape>> theta_layout(std::size_t code_dim, std::size_t out_dim,
                                                        const ComposerSpec& spec) {
    switch (spec.kind) {
        case ComposerKind::LinearSum: return {};
        case ComposerKind::LinearHidden:
            return {{"hidden_w", {code_dim, spec.hidden}}, {"hidden_b", {spec.hidden}}, {"out_b", {out_dim}}};
        case ComposerKind::Lstm: {
            std::vector<std::pair<std::string, Shape>> l;
            for (const char* g : {"t", "i", "o", "m"}) {
                if (spec.lstm_tied_output_gate && std::string(g) == "o") continue;
                l.push_back({std::string("U_") + g, {code_dim, code_dim}});
            }
            for (const char* g : {"t", "i", "o", "m"}) {
                if (spec.lstm_tied_output_gate && std::string(g) == "o") continue;
                l.push_back({std::string("b_") + g, {code_dim}});
            }
            return l;
        }
    }
    return {};
}

std::optional<Shape> projection_shape(std::size_t code_dim, std::size_t out_dim, const ComposerSpec& spec) {
    if (spec.kind == ComposerKind::LinearHidden) return Shape{spec.hidden, out_dim};
    if (code_dim != out_dim) return Shape{code_dim, out_dim};
    return std::nullopt;
}

const char* output_gate(const ComposerSpec& spec) { return spec.lstm_tied_output_gate ? "t" : "o"; }

// Graph-free evaluation of everything after the per-dimension selections.
// Mirrors ComposerNet::apply operation by operation so the two agree exactly.
Tensor compose_tail(const std::vector<Tensor>& xs, const CodeBook& book) {
    const auto& spec = book.spec;
    auto add = [](Tensor a, const Tensor& b) {
        kernels::add_inplace(a, b);
        return a;
    };
    auto add_bias = [](Tensor a, const Tensor& b) {
        kernels::add_row_bias(a, b);
        return a;
    };
    auto map = [](Tensor a, auto fn) {
        for (double& v : a.values()) v = fn(v);
        return a;
    };
    auto mul = [](Tensor a, const Tensor& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
        return a;
    };
    auto sigm = [](double v) { return kernels::sigmoid(v); };
    auto tanh_ = [](double v) { return std::tanh(v); };

    Tensor out;
    if (spec.kind == ComposerKind::Lstm) {
        Tensor h, m, total;
        const char* og = output_gate(spec);
        for (std::size_t j = 0; j < xs.size(); ++j) {
            auto pre = [&](const char* g) {
                Tensor z = xs[j];
                if (j > 0) z = add(std::move(z), kernels::matmul(h, book.param(std::string("U_") + g)));
                return add_bias(std::move(z), book.param(std::string("b_") + g));
            };
            Tensor t = map(pre("t"), sigm);
            Tensor i = map(pre("i"), sigm);
            Tensor o = map(pre(og), sigm);
            Tensor cand = map(pre("m"), tanh_);
            if (j == 0)
                m = mul(std::move(i), cand);
            else
                m = add(mul(std::move(t), m), mul(std::move(i), cand));
            h = mul(std::move(o), map(m, tanh_));
            total = j == 0 ? h : add(std::move(total), h);
        }
        out = std::move(total);
    } else {
        Tensor s = xs[0];
        for (std::size_t j = 1; j < xs.size(); ++j) s = add(std::move(s), xs[j]);
        if (spec.kind == ComposerKind::LinearHidden) {
            Tensor hid = add_bias(kernels::matmul(s, book.param("hidden_w")), book.param("hidden_b"));
            hid = map(std::move(hid), [](double v) { return v > 0 ? v : 0.0; });
            return add_bias(kernels::matmul(hid, *book.projection), book.param("out_b"));
        }
        out = std::move(s);
    }
    if (book.projection) out = kernels::matmul(out, *book.projection);
    return out;
}

}  // namespace

const char* composer_name(ComposerKind kind) noexcept {
    switch (kind) {
        case ComposerKind::LinearSum: return "linear-sum";
        case ComposerKind::LinearHidden: return "linear-hidden";
        case ComposerKind::Lstm: return "lstm";
    }
    return "?";
}

ComposerKind parse_composer(const std::string& name) {
    if (name == "linear-sum" || name == "linear") return ComposerKind::LinearSum;
    if (name == "linear-hidden" || name == "hidden") return ComposerKind::LinearHidden;
    if (name == "lstm") return ComposerKind::Lstm;
    throw Error("unknown composer kind '" + name + "'");
}

CodeBook CodeBook::initialize(std::size_t way, std::size_t dims, std::size_t code_dim, std::size_t out_dim,
                              ComposerSpec spec, Rng& rng) {
    if (way < 2 || dims < 1 || code_dim < 1 || out_dim < 1) throw Error("codebook: invalid dimensions");
    if (spec.kind == ComposerKind::LinearHidden && spec.hidden < 1) throw Error("codebook: hidden width must be positive");
    CodeBook b;
    b.way = way;
    b.dims = dims;
    b.code_dim = code_dim;
    b.out_dim = out_dim;
    b.spec = spec;
    const double lim = 1.0 / std::sqrt(static_cast<double>(code_dim));
    for (std::size_t j = 0; j < dims; ++j) b.tables.push_back(uniform_tensor({way, code_dim}, -lim, lim, rng));
    if (auto ps = projection_shape(code_dim, out_dim, spec)) {
        const double pl = 1.0 / std::sqrt(static_cast<double>((*ps)[0]));
        b.projection = uniform_tensor(*ps, -pl, pl, rng);
    }
    for (auto& [name, shape] : theta_layout(code_dim, out_dim, spec)) {
        if (shape.size() == 1) {
            b.theta.emplace_back(name, Tensor(shape));
        } else {
            const double l = 1.0 / std::sqrt(static_cast<double>(shape[0]));
            b.theta.emplace_back(name, uniform_tensor(shape, -l, l, rng));
        }
    }
    return b;
}

const Tensor& CodeBook::param(const std::string& name) const {
    for (const auto& [n, t] : theta) {
        if (n == name) return t;
    }
    throw Error("codebook: no composer parameter '" + name + "'");
}

Tensor& CodeBook::param(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).param(name));
}

bool CodeBook::has_param(const std::string& name) const {
    return std::any_of(theta.begin(), theta.end(), [&](const auto& p) { return p.first == name; });
}

std::uint64_t composer_param_count(std::size_t code_dim, std::size_t out_dim, const ComposerSpec& spec) {
    std::uint64_t c = 0;
    if (auto ps = projection_shape(code_dim, out_dim, spec)) c += shape_size(*ps);
    for (const auto& [name, shape] : theta_layout(code_dim, out_dim, spec)) c += shape_size(shape);
    return c;
}

std::uint64_t CodeBook::composer_params() const {
    std::uint64_t c = projection ? projection->size() : 0;
    for (const auto& [n, t] : theta) c += t.size();
    return c;
}

std::uint64_t CodeBook::param_count() const {
    return embedding_params_count(way, dims, code_dim, composer_params());
}

void CodeBook::validate() const {
    if (tables.size() != dims) throw Error("codebook: expected " + std::to_string(dims) + " code embedding tables");
    for (const auto& w : tables) {
        if (w.shape() != Shape{way, code_dim}) throw Error("codebook: code embedding table has shape " + shape_string(w.shape()));
        if (!w.all_finite()) throw Error("codebook: non-finite code embedding");
    }
    auto ps = projection_shape(code_dim, out_dim, spec);
    if (ps.has_value() != projection.has_value() || (ps && projection->shape() != *ps)) {
        throw Error("codebook: projection does not match composer kind and widths");
    }
    const auto layout = theta_layout(code_dim, out_dim, spec);
    if (layout.size() != theta.size()) throw Error("codebook: wrong number of composer parameters");
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (layout[i].first != theta[i].first || layout[i].second != theta[i].second.shape()) {
            throw Error("codebook: composer parameter '" + theta[i].first + "' has unexpected name or shape");
        }
        if (!theta[i].second.all_finite()) throw Error("codebook: non-finite composer parameter");
    }
}

// ---------------------------------------------------------------------------

ComposerNet::ComposerNet(diff::Graph& g, const CodeBook& book, std::string prefix)
    : prefix_(std::move(prefix)), way_(book.way), dims_(book.dims), spec_(book.spec),
      has_projection_(book.projection.has_value()) {
    book.validate();
    for (std::size_t j = 0; j < dims_; ++j) tables_.push_back(g.parameter(key("W" + std::to_string(j)), book.tables[j]));
    if (has_projection_) projection_ = g.parameter(key("H"), *book.projection);
    for (const auto& [name, t] : book.theta) theta_.emplace_back(name, g.parameter(key(name), t));
}

diff::Node ComposerNet::apply(diff::Graph& g, diff::Node selection) const {
    auto th = [&](const std::string& name) {
        for (const auto& [n, node] : theta_) {
            if (n == name) return node;
        }
        throw Error("composer: missing parameter " + name);
    };
    const auto flat = g.reshape(selection, {0, dims_ * way_});
    std::vector<diff::Node> xs;
    for (std::size_t j = 0; j < dims_; ++j) xs.push_back(g.matmul(g.slice_cols(flat, j * way_, way_), tables_[j]));

    diff::Node out;
    if (spec_.kind == ComposerKind::Lstm) {
        diff::Node h, m, total;
        const std::string og = output_gate(spec_);
        for (std::size_t j = 0; j < dims_; ++j) {
            auto pre = [&](const std::string& gate) {
                diff::Node z = xs[j];
                if (j > 0) z = g.add(z, g.matmul(h, th("U_" + gate)));
                return g.add(z, th("b_" + gate));
            };
            auto t = g.sigmoid(pre("t"));
            auto i = g.sigmoid(pre("i"));
            auto o = g.sigmoid(pre(og));
            auto cand = g.tanh(pre("m"));
            m = j == 0 ? g.multiply(i, cand) : g.add(g.multiply(t, m), g.multiply(i, cand));
            h = g.multiply(o, g.tanh(m));
            total = j == 0 ? h : g.add(total, h);
        }
        out = total;
    } else {
        diff::Node s = xs[0];
        for (std::size_t j = 1; j < dims_; ++j) s = g.add(s, xs[j]);
        if (spec_.kind == ComposerKind::LinearHidden) {
            auto hid = g.relu(g.add(g.matmul(s, th("hidden_w")), th("hidden_b")));
            return g.add(g.matmul(hid, projection_), th("out_b"));
        }
        out = s;
    }
    if (has_projection_) out = g.matmul(out, projection_);
    return out;
}

std::vector<std::string> ComposerNet::param_names() const {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < dims_; ++j) names.push_back(key("W" + std::to_string(j)));
    if (has_projection_) names.push_back(key("H"));
    for (const auto& [n, node] : theta_) names.push_back(key(n));
    return names;
}

void ComposerNet::read_back(const diff::ParamStore& params, CodeBook& book) const {
    for (std::size_t j = 0; j < dims_; ++j) book.tables[j] = params.at(key("W" + std::to_string(j)));
    if (has_projection_) book.projection = params.at(key("H"));
    for (auto& [n, t] : book.theta) t = params.at(key(n));
}

// ---------------------------------------------------------------------------

Tensor compose(const Tensor& selection, const CodeBook& book) {
    if (selection.rank() != 2 || selection.shape()[0] != book.dims || selection.shape()[1] != book.way) {
        throw Error("compose: selection must be [D, K] = [" + std::to_string(book.dims) + "," +
                    std::to_string(book.way) + "], got " + shape_string(selection.shape()));
    }
    std::vector<Tensor> xs;
    for (std::size_t j = 0; j < book.dims; ++j) {
        double total = 0;
        for (double v : selection.row(j)) total += v;
        if (std::abs(total - 1.0) > 1e-6) throw Error("compose: selection row " + std::to_string(j) + " sums to " + std::to_string(total));
        Tensor row({1, book.way}, std::vector<double>(selection.row(j).begin(), selection.row(j).end()));
        xs.push_back(kernels::matmul(row, book.tables[j]));
    }
    return compose_tail(xs, book).reshaped({book.out_dim});
}

Tensor compose_rows(const DiscreteCodeTable& table, std::span<const std::size_t> symbols, const CodeBook& book) {
    if (table.way() != book.way || table.dims() != book.dims) throw Error("compose: code table and codebook disagree on K or D");
    std::vector<Tensor> xs;
    for (std::size_t j = 0; j < book.dims; ++j) {
        std::vector<std::size_t> rows(symbols.size());
        for (std::size_t r = 0; r < symbols.size(); ++r) rows[r] = table.digit(symbols[r], j);
        xs.push_back(kernels::gather_rows(book.tables[j], rows));
    }
    return compose_tail(xs, book);
}

Tensor compose_batch(const DiscreteCodeTable& table, const CodeBook& book) {
    std::vector<std::size_t> all(table.vocab());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return compose_rows(table, all, book);
}

Tensor binary_code_matrix(const DiscreteCodeTable& table) {
    return table.one_hot().reshaped({table.vocab(), table.dims() * table.way()});
}

Tensor stacked_code_embeddings(const CodeBook& book) {
    Tensor c({book.dims * book.way, book.code_dim});
    for (std::size_t j = 0; j < book.dims; ++j) {
        std::copy(book.tables[j].storage().begin(), book.tables[j].storage().end(),
                  c.storage().begin() + static_cast<std::ptrdiff_t>(j * book.way * book.code_dim));
    }
    return c;
}

double factorization_equivalence_check(const DiscreteCodeTable& table, const CodeBook& book) {
    if (book.spec.kind != ComposerKind::LinearSum || book.projection) {
        throw Error("factorization_equivalence_check: requires a linear-sum composer without projection");
    }
    const Tensor composed = compose_batch(table, book);
    const Tensor product = kernels::matmul(binary_code_matrix(table), stacked_code_embeddings(book));
    double worst = 0;
    for (std::size_t i = 0; i < composed.size(); ++i) worst = std::max(worst, std::abs(composed[i] - product[i]));
    return worst;
}

// ---------------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "codebook export assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw Error("codebook: truncated header");
    return v;
}

void put_floats(std::ostream& os, const Tensor& t) {
    for (double v : t.values()) {
        const float f = static_cast<float>(v);
        os.write(reinterpret_cast<const char*>(&f), 4);
    }
}

void get_floats(std::istream& is, Tensor& t) {
    for (double& v : t.values()) {
        float f = 0;
        if (!is.read(reinterpret_cast<char*>(&f), 4)) throw Error("codebook: truncated payload");
        v = f;
    }
}

}  // namespace

void write_codebook(std::ostream& os, const CodeBook& book) {
    book.validate();
    os.write("KDCB", 4);
    put_u32(os, 1);
    for (auto v : {book.way, book.dims, book.code_dim, book.out_dim}) put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(book.spec.kind));
    put_u32(os, static_cast<std::uint32_t>(book.spec.hidden));
    put_u32(os, (book.spec.lstm_tied_output_gate ? 1u : 0u) | (book.projection ? 2u : 0u));
    for (const auto& w : book.tables) put_floats(os, w);
    if (book.projection) put_floats(os, *book.projection);
    for (const auto& [n, t] : book.theta) put_floats(os, t);
}

CodeBook read_codebook(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "KDCB", 4) != 0) throw Error("codebook: bad magic");
    if (get_u32(is) != 1) throw Error("codebook: unsupported version");
    CodeBook b;
    b.way = get_u32(is);
    b.dims = get_u32(is);
    b.code_dim = get_u32(is);
    b.out_dim = get_u32(is);
    const auto kind = get_u32(is);
    if (kind > 2) throw Error("codebook: unknown composer kind");
    b.spec.kind = static_cast<ComposerKind>(kind);
    b.spec.hidden = get_u32(is);
    const auto flags = get_u32(is);
    b.spec.lstm_tied_output_gate = flags & 1u;
    for (std::size_t j = 0; j < b.dims; ++j) {
        Tensor w({b.way, b.code_dim});
        get_floats(is, w);
        b.tables.push_back(std::move(w));
    }
    if (auto ps = projection_shape(b.code_dim, b.out_dim, b.spec)) {
        if (!(flags & 2u)) throw Error("codebook: projection flag inconsistent with widths");
        Tensor h(*ps);
        get_floats(is, h);
        b.projection = std::move(h);
    }
    for (auto& [name, shape] : theta_layout(b.code_dim, b.out_dim, b.spec)) {
        Tensor t(shape);
        get_floats(is, t);
        b.theta.emplace_back(name, std::move(t));
    }
    b.validate();
    return b;
}

void save_codebook(const std::string& path, const CodeBook& book) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path);
    write_codebook(os, book);
}

CodeBook load_codebook(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read " + path);
    return read_codebook(is);
}

}  // namespace kdc
