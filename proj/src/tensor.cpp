#include "gfm/tensor.hpp"

#include "gfm/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace gfm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

ConstMap view(const Tensor& t) { return ConstMap(t.data(), t.rows(), t.cols()); }
Map view(Tensor& t) { return Map(t.data(), t.rows(), t.cols()); }

} // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, values_(rows * cols, fill) {
    if (rows == 0 || cols == 0) {
        throw ContractViolation("Tensor: dimensions must be positive");
    }
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : shape_{rows, cols}, values_(std::move(values)) {
    if (rows == 0 || cols == 0) {
        throw ContractViolation("Tensor: dimensions must be positive");
    }
    if (values_.size() != rows * cols) {
        throw ContractViolation("Tensor: value count " + std::to_string(values_.size()) +
                                " does not match shape " + shape_string());
    }
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ContractViolation("Tensor::from_rows: ragged rows");
        v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(v));
}

double Tensor::item() const {
    if (values_.size() != 1) {
        throw ContractViolation("Tensor::item: tensor of shape " + shape_string() + " is not a scalar");
    }
    return values_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape_[i]);
    }
    return s + ")";
}

namespace {

// Row i of the product only reads row i of `a`, always in the same order, so a
// row's result does not depend on where it sits in the batch.
void rowwise_product(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    const double* __restrict bp = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        double* __restrict o = out.data() + i * m;
        const double* __restrict ai = a.data() + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            const double s = ai[l];
            const double* __restrict bl = bp + l * m;
            for (std::size_t j = 0; j < m; ++j) o[j] += s * bl[j];
        }
    }
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw ContractViolation("matmul: inner dimensions differ " + a.shape_string() + " x " + b.shape_string());
    }
    Tensor out(a.rows(), b.cols());
    rowwise_product(a, b, out);
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) {
        throw ContractViolation("matmul_nt: shapes " + a.shape_string() + " and " + b.shape_string());
    }
    Tensor out(a.rows(), b.rows());
    rowwise_product(a, transpose(b), out);
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) {
        throw ContractViolation("matmul_tn: shapes " + a.shape_string() + " and " + b.shape_string());
    }
    Tensor out(a.cols(), b.cols());
    view(out).noalias() = view(a).transpose() * view(b);
    return out;
}

Tensor transpose(const Tensor& a) {
    Tensor out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ContractViolation("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace gfm
