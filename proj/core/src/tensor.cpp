#include "kdcode/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace kdc {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_size(shape_)) {
        throw Error("tensor: " + std::to_string(data_.size()) + " values do not fill shape " + shape_string(shape_));
    }
}

Tensor Tensor::vector(std::vector<double> values) {
    const auto n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
        throw Error("tensor: cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw Error("matmul: inner extents differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* out = c.row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            const double* brow = b.row(p).data();
            for (std::size_t j = 0; j < n; ++j) out[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw Error("matmul_tn: leading extents differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    Tensor c({m, n});
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a.row(p).data();
        const double* brow = b.row(p).data();
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* out = c.row(i).data();
            for (std::size_t j = 0; j < n; ++j) out[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw Error("matmul_nt: inner extents differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.row(i).data();
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.row(j).data();
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c.at(i, j) = acc;
        }
    }
    return c;
}

void add_row_bias(Tensor& x, const Tensor& bias) {
    const std::size_t n = x.cols();
    if (bias.size() != n) throw Error("add_row_bias: bias length does not match last extent");
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
    }
}

void add_inplace(Tensor& x, const Tensor& y) {
    if (x.size() != y.size()) throw Error("add_inplace: size mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

std::size_t argmax(std::span<const double> row) noexcept {
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k) {
        if (row[k] > row[best]) best = k;
    }
    return best;
}

Tensor softmax(const Tensor& x, double tau) {
    Tensor y(x.shape());
    const std::size_t n = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto out = y.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double z = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            out[k] = std::exp((in[k] - mx) / tau);
            z += out[k];
        }
        for (std::size_t k = 0; k < n; ++k) out[k] /= z;
    }
    return y;
}

Tensor argmax_one_hot(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) y.row(r)[argmax(x.row(r))] = 1.0;
    return y;
}

double sigmoid(double x) noexcept {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor gather_rows(const Tensor& source, std::span<const std::size_t> index) {
    if (source.rank() == 0 || source.shape()[0] == 0) throw Error("gather_rows: empty source");
    const std::size_t n = source.shape()[0];
    const std::size_t stride = source.size() / n;
    Shape shape = source.shape();
    shape[0] = index.size();
    Tensor out(shape);
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= n) {
            throw Error("gather_rows: index " + std::to_string(index[r]) + " out of range " + std::to_string(n));
        }
        std::copy_n(source.storage().begin() + static_cast<std::ptrdiff_t>(index[r] * stride), stride,
                    out.storage().begin() + static_cast<std::ptrdiff_t>(r * stride));
    }
    return out;
}

}  // namespace kernels
}  // namespace kdc
