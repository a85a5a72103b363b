#include "gfm/optim.hpp"

#include "gfm/errors.hpp"

#include <cmath>
#include <numbers>

namespace gfm {

void AdamW::step(std::span<ad::Parameter* const> params, double lr) {
    if (m_.empty()) {
        for (const ad::Parameter* p : params) {
            m_.push_back(Tensor::zeros_like(p->value));
            v_.push_back(Tensor::zeros_like(p->value));
        }
    }
    if (m_.size() != params.size()) {
        throw ContractViolation("AdamW::step: parameter count changed between steps");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        const ad::Parameter& p = *params[k];
        if (!p.grad.same_shape(p.value) || !m_[k].same_shape(p.value)) {
            throw ContractViolation("AdamW::step: gradient/parameter shape mismatch at index " + std::to_string(k));
        }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    const double decay = 1.0 - lr * config_.weight_decay;
    for (std::size_t k = 0; k < params.size(); ++k) {
        ad::Parameter& p = *params[k];
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.value[i] *= decay;
            p.value[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

CosineSchedule::Value CosineSchedule::at(std::int64_t step) const {
    if (total_steps == 0) throw ContractViolation("CosineSchedule: total_steps must be positive");
    bool clamped = false;
    if (step < 0) {
        step = 0;
        clamped = true;
    } else if (static_cast<std::uint64_t>(step) > total_steps) {
        step = static_cast<std::int64_t>(total_steps);
        clamped = true;
    }
    if (static_cast<std::uint64_t>(step) == total_steps) return {floor_lr, clamped};
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    const double lr = floor_lr + 0.5 * (base_lr - floor_lr) * (1.0 + std::cos(std::numbers::pi * frac));
    return {lr, clamped};
}

} // namespace gfm
