#include "gfm/autodiff.hpp"

#include "gfm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gfm::ad {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value, std::string_view name) {
    nodes_.push_back(Node{std::string(name), std::move(value), {}, false, nullptr, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Parameter& param, std::string_view name) {
    nodes_.push_back(Node{std::string(name), param.value, {}, record_, record_ ? &param : nullptr, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::push(std::string_view op, Tensor value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    if (record_) {
        for (const Var& v : inputs) {
            if (&v.tape() != this) throw ContractViolation("Tape::push: input from a different tape");
            needs = needs || nodes_[v.id()].requires_grad;
        }
    }
    nodes_.push_back(Node{std::string(op), std::move(value), {}, needs, nullptr,
                          needs ? std::move(backward) : Backward{}});
    return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
    return n.grad;
}

void Tape::backward(Var loss) {
    if (!record_) throw ContractViolation("Tape::backward: tape was built without recording");
    if (&loss.tape() != this) throw ContractViolation("Tape::backward: loss belongs to another tape");
    if (loss.value().size() != 1) {
        throw ContractViolation("Tape::backward: loss has shape " + loss.value().shape_string() +
                                ", expected a scalar");
    }
    for (std::size_t id = 0; id <= loss.id(); ++id) {
        if (!nodes_[id].value.all_finite()) {
            throw NumericFailure("non-finite value at node #" + std::to_string(id) + " (" + nodes_[id].op + ")");
        }
    }
    for (auto& n : nodes_) n.grad = Tensor();
    grad_buffer(loss.id())[0] = 1.0;

    for (std::size_t k = loss.id() + 1; k-- > 0;) {
        Node& n = nodes_[k];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (!n.grad.all_finite()) {
            throw NumericFailure("non-finite gradient at node #" + std::to_string(k) + " (" + n.op + ")");
        }
        if (n.param) {
            if (!n.param->grad.same_shape(n.value)) n.param->grad = Tensor::zeros_like(n.value);
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
        }
        if (n.backward) n.backward(*this, k);
    }
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ContractViolation(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
}

void accumulate(Tape& t, std::size_t id, const Tensor& g, double factor = 1.0) {
    if (!t.requires_grad(id)) return;
    Tensor& dst = t.grad_buffer(id);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
}

template <typename F>
Var unary(const char* op, Var a, F&& f, Tape::Backward back) {
    const Tensor& x = a.value();
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return a.tape().push(op, std::move(out), {a}, std::move(back));
}

} // namespace

Var add(Var a, Var b) {
    require_same_shape("add", a.value(), b.value());
    Tensor out = a.value();
    const Tensor& y = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    return a.tape().push("add", std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
        accumulate(t, ia, t.grad(self));
        accumulate(t, ib, t.grad(self));
    });
}

Var sub(Var a, Var b) {
    require_same_shape("sub", a.value(), b.value());
    Tensor out = a.value();
    const Tensor& y = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
    return a.tape().push("sub", std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
        accumulate(t, ia, t.grad(self));
        accumulate(t, ib, t.grad(self), -1.0);
    });
}

Var mul(Var a, Var b) {
    require_same_shape("mul", a.value(), b.value());
    Tensor out = a.value();
    const Tensor& y = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
    return a.tape().push("mul", std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ia)) {
            const Tensor& y = t.value(ib);
            Tensor& d = t.grad_buffer(ia);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
        }
        if (t.requires_grad(ib)) {
            const Tensor& x = t.value(ia);
            Tensor& d = t.grad_buffer(ib);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
        }
    });
}

Var scale(Var a, double s) {
    return unary("scale", a, [s](double v) { return v * s; },
                 [ia = a.id(), s](Tape& t, std::size_t self) { accumulate(t, ia, t.grad(self), s); });
}

Var add_constant(Var a, double c) {
    return unary("add_constant", a, [c](double v) { return v + c; },
                 [ia = a.id()](Tape& t, std::size_t self) { accumulate(t, ia, t.grad(self)); });
}

Var add_row(Var x, Var b) {
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    if (bv.rows() != 1 || bv.cols() != xv.cols()) {
        throw ContractViolation("add_row: bias " + bv.shape_string() + " does not match " + xv.shape_string());
    }
    Tensor out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
    return x.tape().push("add_row", std::move(out), {x, b}, [ix = x.id(), ib = b.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        accumulate(t, ix, g);
        if (t.requires_grad(ib)) {
            Tensor& d = t.grad_buffer(ib);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) d[c] += g(r, c);
        }
    });
}

Var mul_col(Var x, Var s) {
    const Tensor& xv = x.value();
    const Tensor& sv = s.value();
    if (sv.cols() != 1 || sv.rows() != xv.rows()) {
        throw ContractViolation("mul_col: scale " + sv.shape_string() + " does not match " + xv.shape_string());
    }
    Tensor out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= sv[r];
    return x.tape().push("mul_col", std::move(out), {x, s}, [ix = x.id(), is = s.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv = t.value(ix);
        const Tensor& sv = t.value(is);
        if (t.requires_grad(ix)) {
            Tensor& d = t.grad_buffer(ix);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) d(r, c) += g(r, c) * sv[r];
        }
        if (t.requires_grad(is)) {
            Tensor& d = t.grad_buffer(is);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) d[r] += g(r, c) * xv(r, c);
        }
    });
}

Var broadcast_rows(Var row, std::size_t n) {
    const Tensor& v = row.value();
    if (v.rows() != 1) throw ContractViolation("broadcast_rows: expected a 1 x c row, got " + v.shape_string());
    Tensor out(n, v.cols());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < v.cols(); ++c) out(r, c) = v[c];
    return row.tape().push("broadcast_rows", std::move(out), {row}, [ir = row.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& d = t.grad_buffer(ir);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) d[c] += g(r, c);
    });
}

Var matmul(Var a, Var b) {
    Tensor out = gfm::matmul(a.value(), b.value());
    return a.tape().push("matmul", std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ia)) accumulate(t, ia, gfm::matmul_nt(g, t.value(ib)));
        if (t.requires_grad(ib)) accumulate(t, ib, gfm::matmul_tn(t.value(ia), g));
    });
}

Var matmul_nt(Var a, Var b) {
    Tensor out = gfm::matmul_nt(a.value(), b.value());
    return a.tape().push("matmul_nt", std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ia)) accumulate(t, ia, gfm::matmul(g, t.value(ib)));
        if (t.requires_grad(ib)) accumulate(t, ib, gfm::matmul_tn(g, t.value(ia)));
    });
}

Var transpose(Var a) {
    return a.tape().push("transpose", gfm::transpose(a.value()), {a}, [ia = a.id()](Tape& t, std::size_t self) {
        accumulate(t, ia, gfm::transpose(t.grad(self)));
    });
}

Var elu(Var a) {
    return unary("elu", a, [](double v) { return v > 0.0 ? v : std::expm1(v); },
                 [ia = a.id()](Tape& t, std::size_t self) {
                     const Tensor& g = t.grad(self);
                     const Tensor& y = t.value(self);
                     const Tensor& x = t.value(ia);
                     Tensor& d = t.grad_buffer(ia);
                     for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (x[i] > 0.0 ? 1.0 : y[i] + 1.0);
                 });
}

Var sin(Var a) {
    return unary("sin", a, [](double v) { return std::sin(v); }, [ia = a.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(ia);
        Tensor& d = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * std::cos(x[i]);
    });
}

Var cos(Var a) {
    return unary("cos", a, [](double v) { return std::cos(v); }, [ia = a.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(ia);
        Tensor& d = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i] * std::sin(x[i]);
    });
}

Var abs(Var a) {
    return unary("abs", a, [](double v) { return std::abs(v); }, [ia = a.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(ia);
        Tensor& d = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return a.tape().push("sum", Tensor::scalar(s), {a}, [ia = a.id()](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        Tensor& d = t.grad_buffer(ia);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
    });
}

Var mean(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    const double n = static_cast<double>(a.value().size());
    return a.tape().push("mean", Tensor::scalar(s / n), {a}, [ia = a.id(), n](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0] / n;
        Tensor& d = t.grad_buffer(ia);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractViolation("concat_cols: no inputs");
    const std::size_t rows = parts[0].rows();
    std::size_t cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) throw ContractViolation("concat_cols: row counts differ");
        cols += p.cols();
    }
    Tensor out(rows, cols);
    std::vector<std::size_t> ids;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
        ids.push_back(p.id());
        offsets.push_back(off);
        off += v.cols();
    }
    Tape& tape = parts[0].tape();
    return tape.push("concat_cols", std::move(out), parts,
                     [ids = std::move(ids), offsets = std::move(offsets)](Tape& t, std::size_t self) {
                         const Tensor& g = t.grad(self);
                         for (std::size_t k = 0; k < ids.size(); ++k) {
                             if (!t.requires_grad(ids[k])) continue;
                             Tensor& d = t.grad_buffer(ids[k]);
                             for (std::size_t r = 0; r < d.rows(); ++r)
                                 for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) += g(r, offsets[k] + c);
                         }
                     });
}

Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    const Tensor& v = a.value();
    if (begin >= end || end > v.cols()) throw ContractViolation("slice_cols: bad column range");
    Tensor out(v.rows(), end - begin);
    for (std::size_t r = 0; r < v.rows(); ++r)
        for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = v(r, c);
    return a.tape().push("slice_cols", std::move(out), {a}, [ia = a.id(), begin](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& d = t.grad_buffer(ia);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) d(r, begin + c) += g(r, c);
    });
}

Var softmax_rows(Var a, const Tensor* mask) {
    const Tensor& x = a.value();
    if (mask) require_same_shape("softmax_rows", x, *mask);
    Tensor out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < x.cols(); ++c)
            if (!mask || (*mask)(r, c) != 0.0) m = std::max(m, x(r, c));
        if (!std::isfinite(m)) {
            throw NumericFailure("softmax_rows: row " + std::to_string(r) + " has no finite unmasked logit");
        }
        double s = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const double e = (!mask || (*mask)(r, c) != 0.0) ? std::exp(x(r, c) - m) : 0.0;
            out(r, c) = e;
            s += e;
        }
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= s;
    }
    return a.tape().push("softmax_rows", std::move(out), {a}, [ia = a.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& d = t.grad_buffer(ia);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * y(r, c);
            for (std::size_t c = 0; c < g.cols(); ++c) d(r, c) += y(r, c) * (g(r, c) - dot);
        }
    });
}

Var row_normalize(Var a) {
    const Tensor& x = a.value();
    Tensor out = x;
    std::vector<double> sums(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) s += x(r, c);
        if (!(s > 0.0)) throw NumericFailure("row_normalize: row " + std::to_string(r) + " has non-positive sum");
        sums[r] = s;
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= s;
    }
    return a.tape().push("row_normalize", std::move(out), {a},
                         [ia = a.id(), sums = std::move(sums)](Tape& t, std::size_t self) {
                             const Tensor& g = t.grad(self);
                             const Tensor& y = t.value(self);
                             Tensor& d = t.grad_buffer(ia);
                             for (std::size_t r = 0; r < g.rows(); ++r) {
                                 double dot = 0.0;
                                 for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * y(r, c);
                                 for (std::size_t c = 0; c < g.cols(); ++c) d(r, c) += (g(r, c) - dot) / sums[r];
                             }
                         });
}

Var layer_norm_rows(Var a, double eps) {
    const Tensor& x = a.value();
    const std::size_t n = x.cols();
    Tensor out(x.rows(), n);
    std::vector<double> inv_std(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double mu = 0.0;
        for (std::size_t c = 0; c < n; ++c) mu += x(r, c);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c = 0; c < n; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) out(r, c) = (x(r, c) - mu) * inv_std[r];
    }
    return a.tape().push("layer_norm_rows", std::move(out), {a},
                         [ia = a.id(), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                             const Tensor& g = t.grad(self);
                             const Tensor& y = t.value(self);
                             Tensor& d = t.grad_buffer(ia);
                             const double n = static_cast<double>(g.cols());
                             for (std::size_t r = 0; r < g.rows(); ++r) {
                                 double gm = 0.0, gy = 0.0;
                                 for (std::size_t c = 0; c < g.cols(); ++c) {
                                     gm += g(r, c);
                                     gy += g(r, c) * y(r, c);
                                 }
                                 gm /= n;
                                 gy /= n;
                                 for (std::size_t c = 0; c < g.cols(); ++c)
                                     d(r, c) += inv_std[r] * (g(r, c) - gm - y(r, c) * gy);
                             }
                         });
}

namespace {

// phi(u) = ELU(u) - ELU(-u), the net contribution of an edge pair.
inline double pair_phi(double u, double& dphi) {
    const double e = std::exp(-std::abs(u));
    dphi = 1.0 + e;
    return u >= 0.0 ? u + 1.0 - e : u - 1.0 + e;
}

} // namespace

Var incidence_diffusion(Var adjacency, Var features) {
    const Tensor& A = adjacency.value();
    const Tensor& H = features.value();
    const std::size_t n = A.rows();
    if (A.cols() != n || H.rows() != n) {
        throw ContractViolation("incidence_diffusion: adjacency " + A.shape_string() + " vs features " +
                                H.shape_string());
    }
    const std::size_t h = H.cols();
    Tensor out(n, h);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double w = 0.5 * (A(i, j) + A(j, i));
            if (!(w > 0.0)) continue;
            const double s = std::sqrt(0.5 * w);
            const double* hi = H.data() + i * h;
            const double* hj = H.data() + j * h;
            double* oi = out.data() + i * h;
            double* oj = out.data() + j * h;
            for (std::size_t f = 0; f < h; ++f) {
                double dphi;
                const double term = s * pair_phi(s * (hi[f] - hj[f]), dphi);
                oi[f] += term;
                oj[f] -= term;
            }
        }
    }
    return adjacency.tape().push(
        "incidence_diffusion", std::move(out), {adjacency, features},
        [ia = adjacency.id(), ih = features.id()](Tape& t, std::size_t self) {
            const Tensor& g = t.grad(self);
            const Tensor& A = t.value(ia);
            const Tensor& H = t.value(ih);
            const std::size_t n = A.rows();
            const std::size_t h = H.cols();
            const bool want_a = t.requires_grad(ia);
            const bool want_h = t.requires_grad(ih);
            Tensor* dA = want_a ? &t.grad_buffer(ia) : nullptr;
            Tensor* dH = want_h ? &t.grad_buffer(ih) : nullptr;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) {
                    const double w = 0.5 * (A(i, j) + A(j, i));
                    if (!(w > 0.0)) continue;
                    const double s = std::sqrt(0.5 * w);
                    const double s2 = s * s;
                    double gs = 0.0;
                    for (std::size_t f = 0; f < h; ++f) {
                        const double gdiff = g(i, f) - g(j, f);
                        const double u = s * (H(i, f) - H(j, f));
                        double dphi;
                        const double phi = pair_phi(u, dphi);
                        if (dH) {
                            const double v = gdiff * s2 * dphi;
                            (*dH)(i, f) += v;
                            (*dH)(j, f) -= v;
                        }
                        gs += gdiff * (phi + u * dphi);
                    }
                    if (dA) {
                        const double ga = gs / (8.0 * s);
                        (*dA)(i, j) += ga;
                        (*dA)(j, i) += ga;
                    }
                }
            }
        });
}

Var laplacian_apply(Var weights, std::span<const std::size_t> neighbors, Var x) {
    const Tensor& W = weights.value();
    const Tensor& X = x.value();
    const std::size_t n = W.rows();
    const std::size_t m = W.cols();
    const std::size_t c = X.cols();
    if (X.rows() != n || neighbors.size() != n * m) {
        throw ContractViolation("laplacian_apply: weights " + W.shape_string() + " vs features " + X.shape_string());
    }
    std::vector<double> deg(n, 0.0), s(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 0; r < m; ++r) deg[i] += W(i, r);
        if (!(deg[i] > 0.0)) {
            throw DegenerateDegree(i, "laplacian_apply: node " + std::to_string(i) + " has zero degree");
        }
        s[i] = 1.0 / std::sqrt(deg[i]);
    }
    Tensor Z(n, c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t j = neighbors[i * m + r];
            const double a = W(i, r) * s[j];
            for (std::size_t f = 0; f < c; ++f) Z(i, f) += a * X(j, f);
        }
    Tensor out = X;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t f = 0; f < c; ++f) out(i, f) -= s[i] * Z(i, f);

    std::vector<std::size_t> nbr(neighbors.begin(), neighbors.end());
    return weights.tape().push(
        "laplacian_apply", std::move(out), {weights, x},
        [iw = weights.id(), ix = x.id(), nbr = std::move(nbr), deg = std::move(deg), s = std::move(s),
         Z = std::move(Z)](Tape& t, std::size_t self) {
            const Tensor& g = t.grad(self);
            const Tensor& W = t.value(iw);
            const Tensor& X = t.value(ix);
            const std::size_t n = W.rows();
            const std::size_t m = W.cols();
            const std::size_t c = X.cols();
            const bool want_w = t.requires_grad(iw);
            const bool want_x = t.requires_grad(ix);
            Tensor* dW = want_w ? &t.grad_buffer(iw) : nullptr;
            Tensor* dX = want_x ? &t.grad_buffer(ix) : nullptr;
            std::vector<double> gs(n, 0.0);
            Tensor gZ(n, c);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t f = 0; f < c; ++f) {
                    if (dX) (*dX)(i, f) += g(i, f);
                    gZ(i, f) = -s[i] * g(i, f);
                    gs[i] -= g(i, f) * Z(i, f);
                }
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t r = 0; r < m; ++r) {
                    const std::size_t j = nbr[i * m + r];
                    double dot_gx = 0.0;
                    for (std::size_t f = 0; f < c; ++f) dot_gx += gZ(i, f) * X(j, f);
                    if (dW) (*dW)(i, r) += dot_gx * s[j];
                    if (dX)
                        for (std::size_t f = 0; f < c; ++f) (*dX)(j, f) += W(i, r) * s[j] * gZ(i, f);
                    gs[j] += W(i, r) * dot_gx;
                }
            if (dW)
                for (std::size_t i = 0; i < n; ++i) {
                    const double gd = -0.5 * gs[i] / (deg[i] * std::sqrt(deg[i]));
                    for (std::size_t r = 0; r < m; ++r) (*dW)(i, r) += gd;
                }
        });
}

Var scatter_dense(Var weights, std::span<const std::size_t> neighbors) {
    const Tensor& W = weights.value();
    const std::size_t n = W.rows();
    const std::size_t m = W.cols();
    if (neighbors.size() != n * m) throw ContractViolation("scatter_dense: neighbor table size mismatch");
    Tensor out(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < m; ++r) out(i, neighbors[i * m + r]) += W(i, r);
    std::vector<std::size_t> nbr(neighbors.begin(), neighbors.end());
    return weights.tape().push("scatter_dense", std::move(out), {weights},
                               [iw = weights.id(), nbr = std::move(nbr)](Tape& t, std::size_t self) {
                                   const Tensor& g = t.grad(self);
                                   Tensor& d = t.grad_buffer(iw);
                                   const std::size_t m = d.cols();
                                   for (std::size_t i = 0; i < d.rows(); ++i)
                                       for (std::size_t r = 0; r < m; ++r) d(i, r) += g(i, nbr[i * m + r]);
                               });
}

Var diag_product(Var a, Var b) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    const std::size_t n = x.rows();
    if (x.cols() != y.rows() || y.cols() != n) {
        throw ContractViolation("diag_product: shapes " + x.shape_string() + " and " + y.shape_string());
    }
    Tensor out(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) s += x(i, j) * y(j, i);
        out[i] = s;
    }
    return a.tape().push("diag_product", std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(ib);
        if (t.requires_grad(ia)) {
            Tensor& d = t.grad_buffer(ia);
            for (std::size_t i = 0; i < x.rows(); ++i)
                for (std::size_t j = 0; j < x.cols(); ++j) d(i, j) += g[i] * y(j, i);
        }
        if (t.requires_grad(ib)) {
            Tensor& d = t.grad_buffer(ib);
            for (std::size_t i = 0; i < x.rows(); ++i)
                for (std::size_t j = 0; j < x.cols(); ++j) d(j, i) += g[i] * x(i, j);
        }
    });
}

Var mse(Var prediction, Var target) {
    Var diff = sub(prediction, target);
    return mean(mul(diff, diff));
}

} // namespace gfm::ad
