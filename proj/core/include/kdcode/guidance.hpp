#pragma once

#include <string>
#include <vector>

#include "kdcode/composer.hpp"
#include "kdcode/graph.hpp"

namespace kdc {

enum class GuidanceMode { None, Online, Pretrained };

const char* guidance_name(GuidanceMode mode) noexcept;
GuidanceMode parse_guidance(const std::string& name);

struct GuidanceConfig {
    GuidanceMode mode = GuidanceMode::None;
    /// Probability that the mask selects the continuous vector u.
    double keep_prob = 0.7;
    /// Weight of the online tether |sg(u) - f(c)|^2.
    double lambda = 1.0;
    /// Distillation weights: alpha |f(pi; tau) - u|^2 + beta |pi - g(u)|^2.
    double alpha = 1.0;
    double beta = 1.0;
    /// One Bernoulli draw per symbol instead of per coordinate.
    bool per_symbol_mask = false;
    /// Train the encoder g and the auto-encoder loss alongside distillation.
    bool autoencoder = true;
    std::size_t encoder_hidden = 256;

    void validate() const;
};

/// Pre-trained continuous embeddings, one row per vocabulary symbol.
struct PretrainedEmbeddings {
    std::vector<std::string> symbols;
    Tensor vectors;  // [N, d]

    std::size_t vocab() const { return vectors.shape().empty() ? 0 : vectors.shape()[0]; }
    std::size_t dim() const { return vectors.cols(); }
};

/// g: u -> code logits, affine -> tanh -> affine, reshaped to [D, K].
struct Encoder {
    std::size_t dims = 0, way = 0;
    Tensor w1, b1, w2, b2;

    static Encoder initialize(std::size_t in_dim, std::size_t dims, std::size_t way, std::size_t hidden, Rng& rng);
};

class EncoderNet {
public:
    EncoderNet(diff::Graph& g, const Encoder& enc, std::string prefix = "g/");
    /// [B, d] -> [B, D, K] logits.
    diff::Node apply(diff::Graph& g, diff::Node u) const;
    std::vector<std::string> param_names() const;
    void read_back(const diff::ParamStore& params, Encoder& enc) const;

private:
    std::string prefix_;
    std::size_t dims_, way_;
    diff::Node w1_, b1_, w2_, b2_;
};

/// m * u + (1 - m) * fc for a fixed mask.
Tensor odg_mix(const Tensor& u, const Tensor& fc, const Tensor& mask);
/// Bernoulli(keep_prob) mask of shape [rows, cols]; per-symbol masks repeat
/// one draw across a row.
Tensor draw_mask(std::size_t rows, std::size_t cols, double keep_prob, bool per_symbol, Rng& rng);

namespace guidance {

/// Training-time mix of u and f(c). `mask` and `inv_mask` are fed with m and 1 - m.
diff::Node mix(diff::Graph& g, diff::Node u, diff::Node fc, diff::Node mask, diff::Node inv_mask);
/// |stop_gradient(u) - fc|^2
diff::Node online_regularizer(diff::Graph& g, diff::Node u, diff::Node fc);
/// sum_i |f(softmax(g(u_i) / tau)) - u_i|^2
diff::Node autoencoder_loss(diff::Graph& g, const EncoderNet& enc, const ComposerNet& f, diff::Node u, diff::Node tau);

struct DistillationTerms {
    diff::Node composed;  // alpha-weighted part, unweighted: |f(pi; tau) - u|^2
    diff::Node logits;    // beta-weighted part, unweighted: |pi - g(u)|^2 (invalid without encoder)
};
/// Unweighted distillation terms; `logits` is [B, D, K]. `encoder` may be null.
DistillationTerms distillation_terms(diff::Graph& g, const ComposerNet& f, const EncoderNet* encoder,
                                     diff::Node logits, diff::Node u, diff::Node tau);

}  // namespace guidance

/// Value of the auto-encoder loss over all rows of `u`.
double autoencoder_loss(const Tensor& u, const Encoder& enc, const CodeBook& book, double tau);
/// Value of the distillation loss over all symbols.
double distillation_loss(const CodeLogits& logits, const Tensor& u, const Encoder& enc, const CodeBook& book,
                         double tau, double alpha, double beta);

}  // namespace kdc
