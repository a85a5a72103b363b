#pragma once

#include "gfm/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace gfm {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay: the parameter is first shrunk by the
/// factor (1 - lr * weight_decay), then moved by the bias-corrected Adam step.
class AdamW {
public:
    explicit AdamW(AdamWConfig config = {}) : config_(config) {}

    /// params and grads are matched by position; moments are created lazily on
    /// the first step and must keep their shapes afterwards.
    void step(std::span<ad::Parameter* const> params, double lr);
    void step(std::span<ad::Parameter* const> params) { step(params, config_.lr); }

    std::uint64_t steps() const noexcept { return step_; }
    const AdamWConfig& config() const noexcept { return config_; }
    const std::vector<Tensor>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor>& second_moments() const noexcept { return v_; }

private:
    AdamWConfig config_;
    std::uint64_t step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

struct CosineSchedule {
    double base_lr = 1e-3;
    std::uint64_t total_steps = 1;
    double floor_lr = 0.0;

    struct Value {
        double lr;
        bool clamped; // step was outside [0, total_steps]
    };

    /// floor + 0.5 (base - floor)(1 + cos(pi step / total)), clamped to the endpoints.
    Value at(std::int64_t step) const;
};

} // namespace gfm
