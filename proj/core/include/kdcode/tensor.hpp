#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kdc {

/// Base error type for everything thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles.
///
/// Rank is small in practice (1 to 3). Reductions and softmax operate on the
/// last axis; `rows()` is the product of all leading extents so that a rank-3
/// tensor [N, D, K] can be treated as N*D rows of K values.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t last_dim() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
    std::size_t rows() const noexcept { return last_dim() == 0 ? 0 : data_.size() / last_dim(); }
    std::size_t cols() const noexcept { return last_dim(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols(), cols()}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    Tensor reshaped(Shape shape) const;
    void fill(double v);
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

namespace kernels {

// Shared numeric kernels. The graph operators and the direct (graph-free)
// inference paths both call these so that they agree bit for bit.

/// C = A * B for A [m, k], B [k, n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// C = A^T * B for A [k, m], B [k, n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// C = A * B^T for A [m, k], B [n, k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Adds `bias` (length = last dim) to every row in place.
void add_row_bias(Tensor& x, const Tensor& bias);
void add_inplace(Tensor& x, const Tensor& y);

/// Rowwise softmax(x / tau) over the last axis.
Tensor softmax(const Tensor& x, double tau);
/// Rowwise one_hot(argmax) over the last axis, lowest index wins ties.
Tensor argmax_one_hot(const Tensor& x);
std::size_t argmax(std::span<const double> row) noexcept;

double sigmoid(double x) noexcept;

/// Gather rows (first-axis slices) of `source` at `index`.
Tensor gather_rows(const Tensor& source, std::span<const std::size_t> index);

}  // namespace kernels
}  // namespace kdc
