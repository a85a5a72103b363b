#include "doctest.h"
#include "support.hpp"

#include "gfm/errors.hpp"
#include "gfm/harness.hpp"
#include "gfm/integrate.hpp"

#include <cmath>

using namespace gfm;
using namespace gfm::ode;

namespace {

const Field kDecay = [](const Tensor& x, double) {
    Tensor v = x;
    for (double& e : v.values()) e = -e;
    return v;
};

IntegratorConfig fixed(Method m, std::size_t n) {
    IntegratorConfig c;
    c.method = m;
    c.steps = n;
    return c;
}

double decay_error(const IntegratorConfig& c) {
    return std::abs(integrate(kDecay, Tensor(1, 1, 1.0), c).final_state()[0] - std::exp(-1.0));
}

velocity::FieldSpec small_spec(velocity::DiffusionVariant v) {
    velocity::FieldSpec s;
    s.reaction_hidden = {16, 16};
    s.time_freqs = 4;
    s.variant = v;
    s.adjacency = velocity::AdjacencyPolicy::Attention;
    s.attention_width = 8;
    s.mpnn_hidden = 8;
    s.mpnn_layers = {8};
    s.kappa_hidden = {8};
    s.knn_k = 3;
    return s;
}

void jitter(velocity::CompositeField& f, std::uint64_t seed) {
    Rng rng(seed);
    f.visit_diffusion([&](const std::string&, ad::Parameter& p) {
        for (double& v : p.value.values()) v += 0.3 * rng.normal();
    });
}

} // namespace

TEST_CASE("constant fields are integrated exactly") {
    const Tensor x0 = Tensor::from_rows({{0.5, -1.25}, {3.0, 0.0}});
    const Field constant = [](const Tensor& x, double) { return Tensor(x.rows(), x.cols(), 1.25); };
    for (Method m : {Method::Euler, Method::Rk4}) {
        const Tensor y = integrate(constant, x0, fixed(m, 8)).final_state();
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == x0[i] + 1.25);
    }
    const Tensor y = integrate(constant, x0, IntegratorConfig{}).final_state();
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - (x0[i] + 1.25)) < 1e-12);
}

TEST_CASE("dopri5 on exponential decay") {
    const Trajectory tr = integrate(kDecay, Tensor(1, 1, 1.0), IntegratorConfig{});
    CHECK(std::abs(tr.final_state()[0] - std::exp(-1.0)) < 1e-5);
    CHECK(tr.nfe < 200);
    CHECK(tr.nfe == 1 + 6 * (tr.accepted + tr.rejected));
    REQUIRE(tr.times.size() == tr.accepted + 1);
    CHECK(tr.times.front() == 0.0);
    CHECK(tr.times.back() == 1.0);
    for (std::size_t i = 1; i < tr.times.size(); ++i) CHECK(tr.times[i] > tr.times[i - 1]);

    SUBCASE("tighter tolerances cost more evaluations and gain accuracy") {
        IntegratorConfig tight;
        tight.rtol = tight.atol = 1e-9;
        const Trajectory t2 = integrate(kDecay, Tensor(1, 1, 1.0), tight);
        CHECK(t2.nfe > tr.nfe);
        CHECK(std::abs(t2.final_state()[0] - std::exp(-1.0)) < 1e-8);
    }
    SUBCASE("endpoints only") {
        IntegratorConfig c;
        c.store_states = false;
        const Trajectory t3 = integrate(kDecay, Tensor(1, 1, 1.0), c);
        CHECK(t3.states.size() == 2);
        CHECK(t3.final_state() == tr.final_state());
        CHECK(t3.nfe == tr.nfe);
    }
}

TEST_CASE("fixed-step evaluation counts and convergence order") {
    for (std::size_t n : {1u, 7u, 10u}) {
        CHECK(integrate(kDecay, Tensor(1, 1, 1.0), fixed(Method::Euler, n)).nfe == n);
        CHECK(integrate(kDecay, Tensor(1, 1, 1.0), fixed(Method::Rk4, n)).nfe == 4 * n);
    }
    for (std::size_t n : {10u, 20u, 40u}) {
        const double ratio = decay_error(fixed(Method::Rk4, n)) / decay_error(fixed(Method::Rk4, 2 * n));
        CAPTURE(n);
        CHECK(ratio >= 14.0);
        CHECK(ratio <= 18.0);
    }
    // first order for Euler
    const double euler = decay_error(fixed(Method::Euler, 100)) / decay_error(fixed(Method::Euler, 200));
    CHECK(euler == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("integrator failures") {
    IntegratorConfig c;
    c.max_steps = 3;
    c.initial_step = 1e-3;
    c.max_factor = 1.5;
    try {
        integrate(kDecay, Tensor(1, 1, 1.0), c);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(e.time() > 0.0);
        CHECK(e.time() < 1.0);
        CHECK(e.state().size() == 1);
        CHECK(e.state()[0] < 1.0);
    }
    const Field blowup = [](const Tensor& x, double t) {
        Tensor v = x;
        if (t > 0.5) v[0] = NAN;
        return v;
    };
    CHECK_THROWS_AS(integrate(blowup, Tensor(1, 1, 1.0), fixed(Method::Euler, 4)), NumericFailure);
    CHECK_THROWS_AS(integrate(blowup, Tensor(1, 1, 1.0), IntegratorConfig{}), NumericFailure);

    IntegratorConfig bad;
    bad.rtol = 0.0;
    CHECK_THROWS_AS(integrate(kDecay, Tensor(1, 1, 1.0), bad), ConfigError);
    CHECK_THROWS_AS(integrate(kDecay, Tensor(1, 1, 1.0), fixed(Method::Rk4, 0)), ConfigError);
    CHECK_THROWS_AS(parse_method("midpoint"), ConfigError);
}

TEST_CASE("batch integration of a composite field") {
    using velocity::CompositeField;
    using velocity::DiffusionVariant;
    Rng rng(6);
    const data::SampleBatch x0{testing::random_tensor(12, 2, rng), 0.0, 0};

    SUBCASE("initial time must match the convention") {
        CompositeField f(small_spec(DiffusionVariant::None), 1);
        data::SampleBatch late = x0;
        late.time = 0.5;
        CHECK_THROWS_AS(integrate_batch(f, late, fixed(Method::Euler, 2)), ContractViolation);
        CHECK_THROWS_AS(integrate_batch(f, x0, fixed(Method::Euler, 2), train::TimeConvention::NoiseAtOne),
                        ContractViolation);
        const data::SampleBatch wide{Tensor(3, 3), 0.0, 0};
        CHECK_THROWS_AS(integrate_batch(f, wide, fixed(Method::Euler, 2)), ContractViolation);
    }
    SUBCASE("one field evaluation per solver stage") {
        CompositeField f(small_spec(DiffusionVariant::Mpnn), 1);
        const Trajectory tr = integrate_batch(f, x0, fixed(Method::Rk4, 5));
        CHECK(f.evaluations() == 20);
        CHECK(tr.nfe == 20);
    }
    SUBCASE("zero diffusion leaves samples bitwise equal to reaction-only sampling") {
        CompositeField none(small_spec(DiffusionVariant::None), 5);
        CompositeField mpnn(small_spec(DiffusionVariant::Mpnn), 5);
        auto lap_spec = small_spec(DiffusionVariant::LaplacianKnn);
        lap_spec.adjacency = velocity::AdjacencyPolicy::Knn;
        lap_spec.identity_override = true;
        CompositeField lap(lap_spec, 5);
        jitter(lap, 3);
        for (Method m : {Method::Euler, Method::Rk4, Method::Dopri5}) {
            IntegratorConfig c = fixed(m, 6);
            const auto a = sample_generation(none, 12, 2, 9, c);
            CHECK(a.samples.points == sample_generation(mpnn, 12, 2, 9, c).samples.points);
            CHECK(a.samples.points == sample_generation(lap, 12, 2, 9, c).samples.points);
            CHECK(a.samples.points == sample_generation(none, 12, 2, 9, c).samples.points);
            CHECK(a.samples.time == 1.0);
        }
    }
    SUBCASE("graph terms couple the trajectories") {
        CompositeField coupled(small_spec(DiffusionVariant::Mpnn), 2);
        jitter(coupled, 4);
        CompositeField pointwise(small_spec(DiffusionVariant::None), 2);
        data::SampleBatch moved = x0;
        moved.points(0, 0) += 0.1;
        const auto c = fixed(Method::Rk4, 10);
        const Tensor ya = integrate_batch(coupled, x0, c).final_state();
        const Tensor yb = integrate_batch(coupled, moved, c).final_state();
        const Tensor za = integrate_batch(pointwise, x0, c).final_state();
        const Tensor zb = integrate_batch(pointwise, moved, c).final_state();
        double cross = 0.0;
        for (std::size_t i = 1; i < 12; ++i) {
            for (std::size_t f = 0; f < 2; ++f) {
                cross = std::max(cross, std::abs(ya(i, f) - yb(i, f)));
                CHECK(za(i, f) == zb(i, f));
            }
        }
        CHECK(cross > 1e-8);
    }
    SUBCASE("noise-at-one runs the field backwards in time") {
        CompositeField f(small_spec(DiffusionVariant::None), 7);
        auto& last = f.reaction_net().mlp.layers.back();
        last.weight.value = Tensor::zeros_like(last.weight.value);
        last.bias.value = Tensor(1, 2, 0.5);
        data::SampleBatch start = x0;
        start.time = 1.0;
        const Tensor y = integrate_batch(f, start, fixed(Method::Euler, 4), train::TimeConvention::NoiseAtOne)
                             .final_state();
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(x0.points[i] - 0.5).epsilon(1e-15));
        const auto g = sample_generation(f, 5, 2, 3, fixed(Method::Euler, 4), train::TimeConvention::NoiseAtOne);
        CHECK(g.samples.time == 0.0);
        CHECK(g.nfe == 4);
    }
}

TEST_CASE("rk4 step halving on the trained fixture field") {
    const auto ckpt = train::read_checkpoint(std::string(GFM_FIXTURE_DIR) + "/coupling_mpnn.ckpt");
    auto field = harness::load_field(ckpt);
    const auto x0 = data::sample_source(64, 2, 5);
    const Tensor a = integrate_batch(field, x0, fixed(Method::Rk4, 100)).final_state();
    const Tensor b = integrate_batch(field, x0, fixed(Method::Rk4, 200)).final_state();
    CHECK(max_abs_diff(a, b) < 1e-4);
}
