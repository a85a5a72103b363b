#include "doctest.h"
#include "support.hpp"

#include "gfm/errors.hpp"
#include "gfm/velocity.hpp"

#include <cmath>

using namespace gfm;
using namespace gfm::velocity;

namespace {

FieldSpec small_spec(DiffusionVariant v, AdjacencyPolicy a) {
    FieldSpec s;
    s.reaction_hidden = {16, 16};
    s.time_freqs = 4;
    s.variant = v;
    s.adjacency = a;
    s.knn_k = 3;
    s.attention_width = 8;
    s.mpnn_hidden = 8;
    s.mpnn_layers = {8};
    s.gps_hidden = 8;
    s.gps_heads = 2;
    s.gps_rounds = 2;
    s.gps_walk_length = 3;
    s.gps_pe_dim = 4;
    s.kappa_hidden = {8};
    return s;
}

// Zero-initialized layers would make most checks vacuous.
void jitter(CompositeField& f, std::uint64_t seed, double scale = 0.3) {
    Rng rng(seed);
    f.visit_diffusion([&](const std::string&, ad::Parameter& p) {
        for (double& v : p.value.values()) v += scale * rng.normal();
    });
}

struct Case {
    DiffusionVariant variant;
    AdjacencyPolicy adjacency;
};

const Case kGraphCases[] = {
    {DiffusionVariant::Mpnn, AdjacencyPolicy::Attention},       {DiffusionVariant::Mpnn, AdjacencyPolicy::Knn},
    {DiffusionVariant::GpsLite, AdjacencyPolicy::Attention},    {DiffusionVariant::GpsLite, AdjacencyPolicy::Knn},
    {DiffusionVariant::LaplacianKnn, AdjacencyPolicy::Knn},     {DiffusionVariant::LaplacianKnn, AdjacencyPolicy::Attention},
    {DiffusionVariant::Mpnn, AdjacencyPolicy::Full},
};

} // namespace

TEST_CASE("time embedding") {
    nn::TimeEmbedding emb(8);
    const Tensor z = emb.evaluate(0.0);
    REQUIRE(z.cols() == 16);
    for (std::size_t k = 0; k < 8; ++k) {
        CHECK(z[k] == 0.0);
        CHECK(z[8 + k] == 1.0);
    }
    const Tensor a = emb.evaluate(0.3), b = emb.evaluate(0.7);
    CHECK(max_abs_diff(a, b) > 1e-6);
    // f_k = k at initialization
    CHECK(a[2] == std::sin(3 * 0.3));
}

TEST_CASE("reaction network is pointwise") {
    CompositeField f(small_spec(DiffusionVariant::None, AdjacencyPolicy::Attention), 4);
    Rng rng(9);
    Tensor x = testing::random_tensor(6, 2, rng);
    const Tensor v = f.evaluate_reaction(x, 0.4);
    SUBCASE("perturbing one row leaves the others bitwise unchanged") {
        Tensor y = x;
        y(3, 0) += 0.5;
        const Tensor w = f.evaluate_reaction(y, 0.4);
        for (std::size_t i = 0; i < 6; ++i) {
            if (i == 3) continue;
            CHECK(w(i, 0) == v(i, 0));
            CHECK(w(i, 1) == v(i, 1));
        }
    }
    SUBCASE("duplicated rows get identical velocities") {
        Tensor y = x;
        y(5, 0) = y(1, 0);
        y(5, 1) = y(1, 1);
        const Tensor w = f.evaluate_reaction(y, 0.4);
        CHECK(w(5, 0) == w(1, 0));
        CHECK(w(5, 1) == w(1, 1));
    }
    SUBCASE("zero output layer") {
        auto& last = f.reaction_net().mlp.layers.back();
        last.weight.value = Tensor::zeros_like(last.weight.value);
        last.bias.value = Tensor::zeros_like(last.bias.value);
        CHECK(testing::all_zero(f.evaluate_reaction(x, 0.4)));
    }
}

TEST_CASE("diffusion terms start at zero") {
    Rng rng(2);
    const Tensor x = testing::random_tensor(8, 2, rng);
    for (const Case& c : kGraphCases) {
        CompositeField f(small_spec(c.variant, c.adjacency), 1);
        CHECK(testing::all_zero(f.evaluate_diffusion(x, 0.6)));
        CHECK(f.evaluate(x, 0.6) == f.evaluate_reaction(x, 0.6));
    }
}

TEST_CASE("identity adjacency silences every graph term") {
    Rng rng(3);
    const Tensor x = testing::random_tensor(8, 2, rng);
    for (DiffusionVariant v : {DiffusionVariant::Mpnn, DiffusionVariant::LaplacianKnn}) {
        auto spec = small_spec(v, AdjacencyPolicy::Attention);
        spec.identity_override = true;
        CompositeField f(spec, 2);
        jitter(f, 5);
        CHECK(testing::all_zero(f.evaluate_diffusion(x, 0.3)));
    }
    SUBCASE("gps-lite rows stop talking to each other") {
        auto spec = small_spec(DiffusionVariant::GpsLite, AdjacencyPolicy::Attention);
        spec.identity_override = true;
        CompositeField f(spec, 2);
        jitter(f, 5);
        const Tensor d = f.evaluate_diffusion(x, 0.3);
        CHECK(max_abs_diff(d, Tensor::zeros_like(d)) > 0.0);
        Tensor y = x;
        y(2, 1) -= 1.3;
        const Tensor e = f.evaluate_diffusion(y, 0.3);
        for (std::size_t i = 0; i < 8; ++i) {
            if (i == 2) continue;
            CHECK(std::abs(e(i, 0) - d(i, 0)) < 1e-12);
            CHECK(std::abs(e(i, 1) - d(i, 1)) < 1e-12);
        }
    }
}

TEST_CASE("mpnn hand example") {
    // 1-D, two nodes, N1 and N2 reduced to the identity on x / h.
    FieldSpec s = small_spec(DiffusionVariant::Mpnn, AdjacencyPolicy::Full);
    s.dim = 1;
    s.time_freqs = 1;
    s.mpnn_hidden = 1;
    s.mpnn_layers = {};
    CompositeField f(s, 0);
    auto& m = *f.mpnn();
    m.n1.layers[0].weight.value = Tensor::from_rows({{1}, {0}, {0}});
    m.n1.layers[0].bias.value = Tensor(1, 1);
    m.n2.layers[0].weight.value = Tensor::from_rows({{1}, {0}, {0}});
    m.n2.layers[0].bias.value = Tensor(1, 1);
    const Tensor x = Tensor::from_rows({{1}, {0}});
    const Tensor d = f.evaluate_diffusion(x, 0.5);
    // Full adjacency on 2 nodes: a_01 = a_10 = 1/2, split over both orientations
    // with weight 1/4 each, so each edge value is +-(1/2)(x_0 - x_1).
    auto elu = [](double u) { return u > 0 ? u : std::expm1(u); };
    const double s4 = std::sqrt(0.25);
    const double e01 = elu(s4 * (x[0] - x[1]));
    const double e10 = elu(s4 * (x[1] - x[0]));
    const double node0 = s4 * e01 - s4 * e10;
    CHECK(d[0] == doctest::Approx(-node0).epsilon(1e-14));
    CHECK(d[1] == doctest::Approx(node0).epsilon(1e-14));
}

TEST_CASE("laplacian term vanishes on constant batches and zero diffusivity") {
    auto spec = small_spec(DiffusionVariant::LaplacianKnn, AdjacencyPolicy::Knn);
    CompositeField f(spec, 3);
    jitter(f, 8);
    const Tensor c(6, 2, 1.25);
    CHECK(testing::max_abs(f.evaluate_diffusion(c, 0.2)) < 1e-14);
    Rng rng(4);
    const Tensor x = testing::random_tensor(6, 2, rng);
    CHECK(max_abs_diff(f.evaluate_diffusion(x, 0.2), Tensor(6, 2)) > 0.0);
    auto& last = f.laplacian()->kappa.layers.back();
    last.weight.value = Tensor::zeros_like(last.weight.value);
    last.bias.value = Tensor::zeros_like(last.bias.value);
    CHECK(testing::all_zero(f.evaluate_diffusion(x, 0.2)));
}

TEST_CASE("composite additivity") {
    Rng rng(7);
    const Tensor x = testing::random_tensor(9, 2, rng);
    CompositeField none(small_spec(DiffusionVariant::None, AdjacencyPolicy::Attention), 11);
    CHECK(none.evaluate(x, 0.5) == none.evaluate_reaction(x, 0.5));
    CHECK(none.diffusion_parameter_count() == 0);
    for (const Case& c : kGraphCases) {
        CompositeField f(small_spec(c.variant, c.adjacency), 11);
        jitter(f, 12);
        const Tensor v = f.evaluate(x, 0.5);
        const Tensor r = f.evaluate_reaction(x, 0.5);
        const Tensor d = f.evaluate_diffusion(x, 0.5);
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == r[i] + d[i]);
        // same seed -> same reaction parameters as the reaction-only field
        CHECK(r == none.evaluate_reaction(x, 0.5));
    }
}

TEST_CASE("permutation equivariance of every variant") {
    Rng rng(13);
    const Tensor x = testing::random_tensor(10, 2, rng);
    const auto perm = testing::random_permutation(10, rng);
    for (const Case& c : kGraphCases) {
        CompositeField f(small_spec(c.variant, c.adjacency), 21);
        jitter(f, 22);
        const Tensor a = f.evaluate(x, 0.35);
        const Tensor b = f.evaluate(testing::permute_rows(x, perm), 0.35);
        CHECK(max_abs_diff(b, testing::permute_rows(a, perm)) < 1e-12);
    }
}

TEST_CASE("evaluation counter") {
    CompositeField f(small_spec(DiffusionVariant::Mpnn, AdjacencyPolicy::Attention), 1);
    const Tensor x(4, 2, 0.5);
    f.evaluate(x, 0.1);
    f.evaluate(x, 0.2);
    CHECK(f.evaluations() == 2);
    f.evaluate_reaction(x, 0.1);
    CHECK(f.evaluations() == 2);
}

TEST_CASE("configuration errors") {
    auto s = small_spec(DiffusionVariant::GpsLite, AdjacencyPolicy::Attention);
    s.gps_heads = 3;
    CHECK_THROWS_AS(CompositeField(s, 0), ConfigError);
    auto k = small_spec(DiffusionVariant::LaplacianKnn, AdjacencyPolicy::Knn);
    CompositeField f(k, 0);
    CHECK_THROWS_AS(f.evaluate(Tensor(3, 2, 1.0), 0.5), ContractViolation);
    CHECK_THROWS_AS(f.evaluate(Tensor(5, 3, 1.0), 0.5), ContractViolation);
}

TEST_CASE("composite loss gradients against central differences") {
    Rng rng(17);
    const Tensor x = testing::random_tensor(7, 2, rng);
    const Tensor target = testing::random_tensor(7, 2, rng);
    const Tensor times(7, 1, 0.45);
    for (const Case& c : kGraphCases) {
        CAPTURE(variant_name(c.variant));
        CAPTURE(adjacency_name(c.adjacency));
        CompositeField f(small_spec(c.variant, c.adjacency), 31);
        jitter(f, 32);
        auto res = testing::gradcheck(
            [&](ad::Tape& t) { return ad::mse(f.forward(t, t.constant(x), t.constant(times)), t.constant(target)); },
            f.parameters());
        CHECK_MESSAGE(res.max_rel_error < 1e-4, res.worst);
    }
}
