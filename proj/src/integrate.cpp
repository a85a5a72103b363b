#include "gfm/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gfm::ode {

Method parse_method(std::string_view s) {
    if (s == "euler") return Method::Euler;
    if (s == "rk4") return Method::Rk4;
    if (s == "dopri5") return Method::Dopri5;
    throw ConfigError("unknown integrator '" + std::string(s) + "'; valid: euler, rk4, dopri5");
}

std::string_view method_name(Method m) {
    switch (m) {
    case Method::Euler: return "euler";
    case Method::Rk4: return "rk4";
    case Method::Dopri5: return "dopri5";
    }
    return "?";
}

void IntegratorConfig::validate() const {
    if (steps < 1) throw ConfigError("integrator: step count must be at least 1");
    if (!(rtol > 0.0) || !(atol > 0.0)) throw ConfigError("integrator: tolerances must be positive");
    if (!(safety > 0.0) || !(min_factor > 0.0) || !(max_factor > 1.0) || min_factor > 1.0) {
        throw ConfigError("integrator: bad step-size controller settings");
    }
    if (!(initial_step > 0.0)) throw ConfigError("integrator: initial step must be positive");
    if (max_steps < 1) throw ConfigError("integrator: max steps must be at least 1");
}

namespace {

// y + h * sum_k c_k k_k
Tensor combine(const Tensor& y, double h, std::initializer_list<std::pair<double, const Tensor*>> terms) {
    Tensor out = y;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (const auto& [c, k] : terms) acc += c * (*k)[i];
        out[i] += h * acc;
    }
    return out;
}

void check_finite(const Tensor& y, double t) {
    if (!y.all_finite()) throw NumericFailure("integrator: non-finite state at t = " + std::to_string(t));
}

struct Recorder {
    Trajectory& traj;
    bool store;

    void push(double t, const Tensor& y) {
        if (store) {
            traj.times.push_back(t);
            traj.states.push_back(y);
        }
    }
    void finish(const Tensor& y) {
        if (!store) {
            traj.times.push_back(1.0);
            traj.states.push_back(y);
        }
    }
};

Trajectory fixed_step(const Field& f, const Tensor& x0, const IntegratorConfig& cfg) {
    Trajectory traj;
    Recorder rec{traj, cfg.store_states};
    if (!cfg.store_states) {
        traj.times.push_back(0.0);
        traj.states.push_back(x0);
    }
    rec.push(0.0, x0);
    const std::size_t n = cfg.steps;
    const double h = 1.0 / static_cast<double>(n);
    Tensor y = x0;
    for (std::size_t s = 0; s < n; ++s) {
        const double t = static_cast<double>(s) * h;
        if (cfg.method == Method::Euler) {
            const Tensor k1 = f(y, t);
            traj.nfe += 1;
            y = combine(y, h, {{1.0, &k1}});
        } else {
            const Tensor k1 = f(y, t);
            const Tensor k2 = f(combine(y, 0.5 * h, {{1.0, &k1}}), t + 0.5 * h);
            const Tensor k3 = f(combine(y, 0.5 * h, {{1.0, &k2}}), t + 0.5 * h);
            const Tensor k4 = f(combine(y, h, {{1.0, &k3}}), t + h);
            traj.nfe += 4;
            for (std::size_t i = 0; i < y.size(); ++i) y[i] += h * ((k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0);
        }
        const double t_next = s + 1 == n ? 1.0 : static_cast<double>(s + 1) * h;
        check_finite(y, t_next);
        traj.accepted += 1;
        rec.push(t_next, y);
    }
    rec.finish(y);
    return traj;
}

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// fifth minus fourth order weights
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

Trajectory dopri5(const Field& f, const Tensor& x0, const IntegratorConfig& cfg) {
    Trajectory traj;
    Recorder rec{traj, cfg.store_states};
    if (!cfg.store_states) {
        traj.times.push_back(0.0);
        traj.states.push_back(x0);
    }
    rec.push(0.0, x0);

    double t = 0.0;
    double h = std::min(cfg.initial_step, 1.0);
    Tensor y = x0;
    Tensor k1 = f(y, t);
    traj.nfe = 1;
    std::size_t attempts = 0;
    while (t < 1.0) {
        if (attempts >= cfg.max_steps) {
            throw DivergenceError("dopri5: exceeded " + std::to_string(cfg.max_steps) + " steps at t = " +
                                      std::to_string(t),
                                  t, y);
        }
        ++attempts;
        const bool last = t + h >= 1.0;
        if (last) h = 1.0 - t;

        const Tensor k2 = f(combine(y, h, {{a21, &k1}}), t + c2 * h);
        const Tensor k3 = f(combine(y, h, {{a31, &k1}, {a32, &k2}}), t + c3 * h);
        const Tensor k4 = f(combine(y, h, {{a41, &k1}, {a42, &k2}, {a43, &k3}}), t + c4 * h);
        const Tensor k5 = f(combine(y, h, {{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}}), t + c5 * h);
        const Tensor k6 = f(combine(y, h, {{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}}), t + h);
        Tensor y5 = combine(y, h, {{b1, &k1}, {b3, &k3}, {b4, &k4}, {b5, &k5}, {b6, &k6}});
        const double t_new = last ? 1.0 : t + h;
        check_finite(y5, t_new);
        Tensor k7 = f(y5, t_new);
        traj.nfe += 6;

        double err = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
            const double scale = cfg.atol + cfg.rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
            err = std::max(err, std::abs(e) / scale);
        }
        if (!std::isfinite(err)) throw NumericFailure("dopri5: non-finite error estimate at t = " + std::to_string(t));

        if (err <= 1.0) {
            t = t_new;
            y = std::move(y5);
            k1 = std::move(k7);
            traj.accepted += 1;
            rec.push(t, y);
            const double factor = err == 0.0 ? cfg.max_factor : cfg.safety * std::pow(err, -0.2);
            h *= std::clamp(factor, cfg.min_factor, cfg.max_factor);
        } else {
            traj.rejected += 1;
            h *= std::clamp(cfg.safety * std::pow(err, -0.2), cfg.min_factor, 1.0);
        }
        if (!(h > 0.0) || t + h == t) {
            if (t >= 1.0) break;
            throw DivergenceError("dopri5: step size underflow at t = " + std::to_string(t), t, y);
        }
    }
    rec.finish(y);
    return traj;
}

} // namespace

Trajectory integrate(const Field& f, const Tensor& x0, const IntegratorConfig& config) {
    config.validate();
    if (x0.empty()) throw ContractViolation("integrate: empty initial state");
    check_finite(x0, 0.0);
    if (config.method == Method::Dopri5) return dopri5(f, x0, config);
    return fixed_step(f, x0, config);
}

Trajectory integrate_batch(velocity::CompositeField& field, const data::SampleBatch& x0,
                           const IntegratorConfig& config, train::TimeConvention convention) {
    if (x0.points.cols() != field.spec().dim) {
        throw ContractViolation("integrate_batch: batch has " + std::to_string(x0.points.cols()) +
                                " coordinates, field expects " + std::to_string(field.spec().dim));
    }
    if (convention == train::TimeConvention::NoiseAtZero) {
        if (x0.time != 0.0) throw ContractViolation("integrate_batch: initial batch must be at t = 0");
        return integrate([&field](const Tensor& x, double t) { return field.evaluate(x, t); }, x0.points, config);
    }
    // Noise sits at t = 1: run s = 1 - t forward with dx/ds = -v(x, 1 - s).
    if (x0.time != 1.0) throw ContractViolation("integrate_batch: initial batch must be at t = 1");
    return integrate(
        [&field](const Tensor& x, double s) {
            Tensor v = field.evaluate(x, 1.0 - s);
            for (double& e : v.values()) e = -e;
            return v;
        },
        x0.points, config);
}

Generation sample_generation(velocity::CompositeField& field, std::size_t batch, std::size_t dim,
                             std::uint64_t seed, const IntegratorConfig& config,
                             train::TimeConvention convention) {
    data::SampleBatch x0 = data::sample_source(batch, dim, seed);
    x0.time = convention == train::TimeConvention::NoiseAtZero ? 0.0 : 1.0;
    Generation g;
    g.trajectory = integrate_batch(field, x0, config, convention);
    g.nfe = g.trajectory.nfe;
    g.samples = data::SampleBatch{g.trajectory.final_state(),
                                  convention == train::TimeConvention::NoiseAtZero ? 1.0 : 0.0, seed};
    return g;
}

} // namespace gfm::ode
