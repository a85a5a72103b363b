#pragma once

#include "gfm/errors.hpp"
#include "gfm/fmtrain.hpp"
#include "gfm/synthdata.hpp"
#include "gfm/tensor.hpp"
#include "gfm/velocity.hpp"

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

namespace gfm::ode {

enum class Method { Euler, Rk4, Dopri5 };

Method parse_method(std::string_view s);
std::string_view method_name(Method m);

struct IntegratorConfig {
    Method method = Method::Dopri5;
    std::size_t steps = 100; // fixed-step methods
    double rtol = 1e-5;
    double atol = 1e-5;
    double safety = 0.9;
    double min_factor = 0.2;
    double max_factor = 10.0;
    double initial_step = 1e-2;
    std::size_t max_steps = 10000; // attempted steps, dopri5 only
    bool store_states = true;      // false keeps only the endpoints

    void validate() const;
};

/// Accepted states from t = 0 to t = 1 (only endpoints when store_states is off).
struct Trajectory {
    std::vector<double> times;
    std::vector<Tensor> states;
    std::uint64_t nfe = 0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;

    const Tensor& final_state() const { return states.back(); }
};

/// Adaptive solve gave up; carries the state reached so far.
class DivergenceError : public NumericFailure {
public:
    DivergenceError(const std::string& what, double t, Tensor state)
        : NumericFailure(what), t_(t), state_(std::move(state)) {}
    double time() const noexcept { return t_; }
    const Tensor& state() const noexcept { return state_; }

private:
    double t_;
    Tensor state_;
};

/// dx/dt = f(x, t) on the whole batch at once.
using Field = std::function<Tensor(const Tensor& x, double t)>;

/// Solves from t = 0 to t = 1. Euler uses N evaluations, RK4 4N; dopri5 uses
/// one initial evaluation plus 6 per attempted step (the seventh stage is
/// reused as the next first stage).
Trajectory integrate(const Field& f, const Tensor& x0, const IntegratorConfig& config);

/// Every evaluation passes the whole batch, so the graph is rebuilt at each stage.
Trajectory integrate_batch(velocity::CompositeField& field, const data::SampleBatch& x0,
                           const IntegratorConfig& config,
                           train::TimeConvention convention = train::TimeConvention::NoiseAtZero);

struct Generation {
    data::SampleBatch samples; // at t = 1
    std::uint64_t nfe = 0;
    Trajectory trajectory;
};

/// Draws B source points with `seed` and transports them to the data end.
/// Under NoiseAtOne the field is run backwards from t = 1 to t = 0.
Generation sample_generation(velocity::CompositeField& field, std::size_t batch, std::size_t dim,
                             std::uint64_t seed, const IntegratorConfig& config,
                             train::TimeConvention convention = train::TimeConvention::NoiseAtZero);

} // namespace gfm::ode
