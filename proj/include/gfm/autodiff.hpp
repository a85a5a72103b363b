#pragma once

#include "gfm/tensor.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gfm::ad {

/// Trainable tensor plus its accumulated gradient.
struct Parameter {
    Tensor value;
    Tensor grad;

    Parameter() = default;
    explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::zeros_like(value)) {}
    void zero_grad() { grad = Tensor::zeros_like(value); }
    std::size_t size() const noexcept { return value.size(); }
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    std::size_t id() const noexcept { return id_; }
    Tape& tape() const noexcept { return *tape_; }
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward is a single reverse sweep that visits each
/// node once. A tape built with record == false keeps values only (inference).
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value, std::string_view name = "constant");
    Var leaf(Parameter& param, std::string_view name = "parameter");

    /// Accumulates d(loss)/d(param) into every registered Parameter::grad.
    void backward(Var loss);

    bool recording() const noexcept { return record_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    std::string_view op_name(std::size_t id) const { return nodes_[id].op; }

    // Op-author interface.
    Var push(std::string_view op, Tensor value, std::span<const Var> inputs, Backward backward);
    Var push(std::string_view op, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
        return push(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
    }
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
    /// Gradient buffer of an input node, allocated on first use.
    Tensor& grad_buffer(std::size_t id);

private:
    struct Node {
        std::string op;
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Parameter* param = nullptr;
        Backward backward;
    };

    bool record_;
    std::vector<Node> nodes_;
};

// ---- primitive operations ------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_constant(Var a, double c);
/// x (r x c) + b (1 x c) broadcast over rows.
Var add_row(Var x, Var b);
/// x (r x c) * s (r x 1) broadcast over columns.
Var mul_col(Var x, Var s);
/// Repeat a 1 x c row n times.
Var broadcast_rows(Var row, std::size_t n);
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var elu(Var a);
Var sin(Var a);
Var cos(Var a);
Var abs(Var a);
Var sum(Var a);
Var mean(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
/// Row-wise softmax. When mask is given (same shape, entries 0/1), masked-out
/// entries get probability exactly 0; each row needs at least one kept entry.
Var softmax_rows(Var a, const Tensor* mask = nullptr);
/// Divide each row by its sum (rows must have positive sums).
Var row_normalize(Var a);
/// Row-wise standardization (no affine part), eps added to the variance.
Var layer_norm_rows(Var a, double eps = 1e-5);

/// Fused G^T[ELU(G H)] over the symmetrized adjacency of a dense B x B matrix A.
/// Each unordered pair {i,j} with w = (A_ij + A_ji)/2 > 0 contributes the two
/// directed edges (i,j) and (j,i) with weight w/2 and value sqrt(w/2)(h_i - h_j).
Var incidence_diffusion(Var adjacency, Var features);

/// Y = X - D^{-1/2} A D^{-1/2} X for a row-sparse A given as B x m weights with
/// column indices neighbors[i*m + r]. Degrees are the row sums of A.
Var laplacian_apply(Var weights, std::span<const std::size_t> neighbors, Var x);

/// Scatter B x m row-sparse weights into a dense B x B matrix.
Var scatter_dense(Var weights, std::span<const std::size_t> neighbors);

/// diag(A B) as a B x 1 column without forming the product.
Var diag_product(Var a, Var b);

/// Mean squared error, averaged over all entries.
Var mse(Var prediction, Var target);

} // namespace gfm::ad
