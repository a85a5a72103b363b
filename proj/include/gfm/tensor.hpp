#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gfm {

/// Dense row-major array of doubles.
///
/// Every tensor used by the library is rank 2 (rows x cols); a scalar is a
/// 1x1 tensor and a vector is a 1xN or Nx1 tensor. The general shape vector is
/// kept so that the invariant product(shape) == size() can be checked.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.rows(), t.cols()); }
    static Tensor identity(std::size_t n);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const noexcept { return shape_.size() < 2 ? 0 : shape_[1]; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }
    bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }
    std::span<double> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }
    const std::vector<double>& values() const noexcept { return values_; }
    std::vector<double>& values() noexcept { return values_; }

    double item() const;
    bool all_finite() const noexcept;
    std::string shape_string() const;

    bool operator==(const Tensor& o) const = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

// Dense kernels shared by the autodiff ops and the non-differentiable paths.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b); // a * b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b); // a^T * b
Tensor transpose(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

} // namespace gfm
