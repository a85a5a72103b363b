#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include "gfm/autodiff.hpp"
#include "gfm/rng.hpp"
#include "gfm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace gfm::testing {

inline Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Tensor t(r, c);
    for (double& v : t.values()) v = scale * rng.normal();
    return t;
}

inline Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t f = 0; f < x.cols(); ++f) out(i, f) = x(perm[i], f);
    return out;
}

// out(i, j) = a(perm[i], perm[j])
inline Tensor permute_both(const Tensor& a, const std::vector<std::size_t>& perm) {
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t j = 0; j < perm.size(); ++j) out(i, j) = a(perm[i], perm[j]);
    return out;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
    return p;
}

inline bool all_zero(const Tensor& t) {
    return std::all_of(t.values().begin(), t.values().end(), [](double v) { return v == 0.0; });
}

inline double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double v : t.values()) m = std::max(m, std::abs(v));
    return m;
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t entries = 0;
    std::string worst; // "param[index]: analytic vs numeric"
};

/// Compares tape gradients with central differences, entry by entry.
/// rel = |a - n| / max(|a|, |n|, floor); the floor keeps entries whose true
/// gradient is ~0 from dividing roundoff by roundoff.
inline GradCheck gradcheck(const std::function<ad::Var(ad::Tape&)>& loss, const std::vector<ad::Parameter*>& params,
                           double h = 1e-5, double floor = 1e-5) {
    for (ad::Parameter* p : params) p->zero_grad();
    {
        ad::Tape tape;
        tape.backward(loss(tape));
    }
    auto eval = [&loss]() {
        ad::Tape tape(false);
        return loss(tape).value().item();
    };
    GradCheck out;
    for (std::size_t k = 0; k < params.size(); ++k) {
        ad::Parameter& p = *params[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + h;
            const double up = eval();
            p.value[i] = saved - h;
            const double down = eval();
            p.value[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = p.grad[i];
            const double rel =
                std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
            ++out.entries;
            if (rel > out.max_rel_error || std::isnan(rel)) {
                out.max_rel_error = std::isnan(rel) ? INFINITY : rel;
                out.worst = "param " + std::to_string(k) + "[" + std::to_string(i) + "]: " + std::to_string(analytic) +
                            " vs " + std::to_string(numeric);
            }
        }
    }
    return out;
}

} // namespace gfm::testing
