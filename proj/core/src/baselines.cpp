#include "kdcode/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kdcode/tasks.hpp"

namespace kdc {

namespace {

double mean_row_error(const Tensor& a, const Tensor& b) { return reconstruction_mse(a, b); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

Tensor column_block(const Tensor& u, std::size_t begin, std::size_t width) {
    Tensor out({u.rows(), width});
    for (std::size_t r = 0; r < u.rows(); ++r) {
        auto src = u.row(r);
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin),
                  src.begin() + static_cast<std::ptrdiff_t>(begin + width), out.row(r).begin());
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

LowRankFactors low_rank_fit(const Tensor& u, std::size_t rank, const LowRankOptions& opts) {
    if (u.rank() != 2 || u.size() == 0) throw Error("low_rank_fit: target must be a non-empty matrix");
    const std::size_t n = u.rows(), d = u.cols();
    if (rank < 1 || rank > std::min(n, d)) throw Error("low_rank_fit: rank must be in [1, min(N, d)]");
    if (!(opts.lr_start > 0 && opts.lr_end > 0)) throw Error("low_rank_fit: learning rates must be positive");

    double rms = 0;
    for (double v : u.values()) rms += v * v;
    rms = std::sqrt(rms / static_cast<double>(u.size()));
    const double init = std::sqrt(std::max(rms, 1e-3) / std::sqrt(static_cast<double>(rank)));

    Rng rng(opts.seed);
    diff::Graph g;
    auto a = g.parameter("A", normal_tensor({n, rank}, 0.0, init, rng));
    auto b = g.parameter("B", normal_tensor({rank, d}, 0.0, init, rng));
    auto loss = g.scale(g.squared_error(g.matmul(a, b), g.constant(u)), 1.0 / static_cast<double>(n));

    Optimizer opt(OptimizerKind::Adam, opts.lr_start);
    const std::string names[] = {"A", "B"};
    const double decay = opts.steps > 1 ? std::pow(opts.lr_end / opts.lr_start, 1.0 / static_cast<double>(opts.steps - 1)) : 1.0;
    diff::Feed feed;
    for (std::size_t s = 0; s < opts.steps; ++s) {
        opt.set_learning_rate(opts.lr_start * std::pow(decay, static_cast<double>(s)));
        auto ev = g.evaluate(feed, loss);
        opt.step(g.params(), g.gradient(ev, loss, names));
    }
    LowRankFactors f{g.params().at("A"), g.params().at("B"), 0.0};
    f.error = mean_row_error(kernels::matmul(f.a, f.b), u);
    return f;
}

QuantizationResult low_rank_baseline(const Tensor& u, std::size_t rank, const LowRankOptions& opts) {
    auto f = low_rank_fit(u, rank, opts);
    QuantizationResult r;
    r.method = "low-rank-" + std::to_string(rank);
    r.reconstruction = kernels::matmul(f.a, f.b);
    r.params = static_cast<std::uint64_t>(u.rows()) * rank + static_cast<std::uint64_t>(rank) * u.cols();
    r.bits = full_layer_bits(u.rows(), rank) + full_layer_bits(rank, u.cols());
    r.error = f.error;
    return r;
}

// ---------------------------------------------------------------------------

KMeansResult kmeans(const Tensor& x, std::size_t k, Rng& rng, std::size_t max_iter, double rel_tol) {
    const std::size_t n = x.rows(), d = x.cols();
    if (k == 0 || k > n) throw Error("kmeans: need 1 <= K <= number of points");

    KMeansResult out;
    out.centroids = Tensor({k, d});
    // k-means++ seeding
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    std::size_t pick = first(rng);
    for (std::size_t c = 0; c < k; ++c) {
        std::copy(x.row(pick).begin(), x.row(pick).end(), out.centroids.row(c).begin());
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(x.row(i), out.centroids.row(c)));
            total += nearest[i];
        }
        if (c + 1 == k) break;
        if (total <= 0) {
            // all points coincide with chosen centroids; take the next unused index
            pick = (pick + 1) % n;
            continue;
        }
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng), acc = 0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            acc += nearest[i];
            if (acc >= target && nearest[i] > 0) {
                pick = i;
                break;
            }
        }
    }

    out.assignment.assign(n, 0);
    for (std::size_t it = 0; it < max_iter; ++it) {
        double inertia = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::uint32_t arg = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const double dist = squared_distance(x.row(i), out.centroids.row(c));
                if (dist < best) {
                    best = dist;
                    arg = static_cast<std::uint32_t>(c);
                }
            }
            out.assignment[i] = arg;
            inertia += best;
        }
        out.inertia.push_back(inertia);
        if (out.inertia.size() >= 2) {
            const double prev = out.inertia[out.inertia.size() - 2];
            if (prev - inertia <= rel_tol * prev) break;
        }
        Tensor sums({k, d});
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto s = sums.row(out.assignment[i]);
            auto r = x.row(i);
            for (std::size_t j = 0; j < d; ++j) s[j] += r[j];
            ++counts[out.assignment[i]];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            auto dst = out.centroids.row(c);
            auto s = sums.row(c);
            for (std::size_t j = 0; j < d; ++j) dst[j] = s[j] / static_cast<double>(counts[c]);
        }
    }
    return out;
}

Tensor ProductQuantizer::reconstruct() const {
    const std::size_t w = block();
    Tensor out({codes.vocab(), w * subspaces});
    for (std::size_t i = 0; i < codes.vocab(); ++i) {
        auto dst = out.row(i);
        for (std::size_t m = 0; m < subspaces; ++m) {
            auto c = codebooks[m].row(codes.digit(i, m));
            std::copy(c.begin(), c.end(), dst.begin() + static_cast<std::ptrdiff_t>(m * w));
        }
    }
    return out;
}

CodeBook ProductQuantizer::as_codebook() const {
    const std::size_t w = block(), d = w * subspaces;
    CodeBook b;
    b.way = centroids;
    b.dims = subspaces;
    b.code_dim = d;
    b.out_dim = d;
    b.spec.kind = ComposerKind::LinearSum;
    for (std::size_t m = 0; m < subspaces; ++m) {
        Tensor t({centroids, d});
        for (std::size_t k = 0; k < centroids; ++k) {
            auto c = codebooks[m].row(k);
            std::copy(c.begin(), c.end(), t.row(k).begin() + static_cast<std::ptrdiff_t>(m * w));
        }
        b.tables.push_back(std::move(t));
    }
    return b;
}

std::uint64_t ProductQuantizer::bits() const {
    return kd_layer_bits(codes.vocab(), centroids, subspaces, block(), 0);
}

ProductQuantizer product_quantize(const Tensor& u, std::size_t subspaces, std::size_t centroids, std::uint64_t seed) {
    if (subspaces == 0 || u.cols() % subspaces != 0) throw Error("product_quantize: d must be divisible by M");
    if (centroids == 0 || centroids > u.rows()) throw Error("product_quantize: need 1 <= K <= N");
    ProductQuantizer pq;
    pq.subspaces = subspaces;
    pq.centroids = centroids;
    const std::size_t w = u.cols() / subspaces;
    std::vector<std::uint32_t> digits(u.rows() * subspaces);
    for (std::size_t m = 0; m < subspaces; ++m) {
        Rng rng = derive_rng(seed, m);
        auto km = kmeans(column_block(u, m * w, w), centroids, rng);
        for (std::size_t i = 0; i < u.rows(); ++i) digits[i * subspaces + m] = km.assignment[i];
        pq.codebooks.push_back(std::move(km.centroids));
    }
    pq.codes = DiscreteCodeTable(centroids, subspaces, std::move(digits));
    return pq;
}

QuantizationResult product_quantization_baseline(const Tensor& u, std::size_t subspaces, std::size_t centroids,
                                                 std::uint64_t seed) {
    auto pq = product_quantize(u, subspaces, centroids, seed);
    QuantizationResult r;
    r.method = "pq-" + std::to_string(centroids) + "x" + std::to_string(pq.block());
    r.reconstruction = pq.reconstruct();
    r.params = static_cast<std::uint64_t>(centroids) * u.cols();
    r.bits = pq.bits();
    r.error = mean_row_error(r.reconstruction, u);
    return r;
}

// ---------------------------------------------------------------------------

ScalarQuantized scalar_quantize(const Tensor& u, unsigned bits) {
    if (bits < 1 || bits > 32) throw Error("scalar_quantize: bits must be in [1, 32]");
    if (u.empty()) throw Error("scalar_quantize: empty matrix");
    const auto [lo, hi] = std::minmax_element(u.values().begin(), u.values().end());
    ScalarQuantized q;
    q.bits = bits;
    q.offset = *lo;
    const double levels = std::ldexp(1.0, static_cast<int>(bits)) - 1.0;
    q.scale = (*hi - *lo) / levels;
    q.matrix = u;
    if (q.scale == 0) return q;
    for (double& v : q.matrix.values()) {
        const double level = std::clamp(std::round((v - q.offset) / q.scale), 0.0, levels);
        v = q.offset + level * q.scale;
    }
    return q;
}

QuantizationResult scalar_quantization_baseline(const Tensor& u, unsigned bits) {
    auto q = scalar_quantize(u, bits);
    QuantizationResult r;
    r.method = "scalar-" + std::to_string(bits) + "bit";
    r.reconstruction = q.matrix;
    r.params = 2;
    r.bits = kd_layer_bits(u.rows(), std::size_t{1} << bits, u.cols(), 0, 2);
    r.error = mean_row_error(q.matrix, u);
    return r;
}

// ---------------------------------------------------------------------------

DiscreteCodeTable random_codes(std::size_t vocab, std::size_t way, std::size_t dims, std::uint64_t seed) {
    if (way < 2 || dims < 1) throw Error("random_codes: need K >= 2 and D >= 1");
    Rng rng(seed);
    std::uniform_int_distribution<std::uint32_t> digit(0, static_cast<std::uint32_t>(way - 1));
    std::vector<std::uint32_t> digits(vocab * dims);
    for (auto& v : digits) v = digit(rng);
    return DiscreteCodeTable(way, dims, std::move(digits));
}

DiscreteCodeTable pretrained_codes(const Tensor& u, const CodeConfig& codes, const ComposerSpec& composer,
                                   const TrainConfig& cfg) {
    ReconstructionTask task(u);
    KdLayerConfig layer;
    layer.codes = codes;
    layer.codes.vocab = u.rows();
    layer.composer = composer;
    layer.out_dim = u.cols();
    layer.relaxation = cfg.relaxation;
    layer.guidance = cfg.guidance;
    if (cfg.guidance.mode == GuidanceMode::Pretrained) layer.pretrained = u;
    return fit_codes(cfg, layer, task).codes;
}

}  // namespace kdc
