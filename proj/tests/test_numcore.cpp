#include "doctest.h"
#include "support.hpp"

#include "gfm/errors.hpp"
#include "gfm/layers.hpp"
#include "gfm/optim.hpp"

#include <cmath>
#include <numbers>

using namespace gfm;

TEST_CASE("tensor shape and kernels") {
    Tensor a = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
    CHECK(a.rows() == 2);
    CHECK(a.cols() == 3);
    CHECK(a.size() == a.shape()[0] * a.shape()[1]);
    Tensor b = Tensor::from_rows({{1, 0}, {0, 1}, {1, 1}});
    Tensor c = matmul(a, b);
    CHECK(c == Tensor::from_rows({{4, 5}, {10, 11}}));
    CHECK(matmul_nt(a, transpose(b)) == c);
    CHECK(matmul_tn(transpose(a), b) == c);
    CHECK_THROWS_AS(Tensor(0, 3), ContractViolation);
    CHECK_THROWS_AS(Tensor(2, 2, std::vector<double>{1, 2, 3}), ContractViolation);
    CHECK_THROWS_AS((void)a.item(), ContractViolation);
}

TEST_CASE("backward: linear and quadratic") {
    ad::Parameter p(Tensor(1, 3, 0.7));
    {
        ad::Tape tape;
        tape.backward(ad::sum(tape.leaf(p)));
    }
    CHECK(p.grad == Tensor(1, 3, 1.0));

    ad::Parameter q(Tensor::from_rows({{2, -1}}));
    ad::Tape tape;
    ad::Var v = tape.leaf(q);
    tape.backward(ad::sum(ad::mul(v, v)));
    CHECK(q.grad == Tensor::from_rows({{4, -2}}));
}

TEST_CASE("backward rejects non-scalar loss") {
    ad::Parameter p(Tensor(2, 2, 1.0));
    ad::Tape tape;
    CHECK_THROWS_AS(tape.backward(tape.leaf(p)), ContractViolation);
}

TEST_CASE("backward names the first non-finite node") {
    ad::Parameter p(Tensor(1, 1, 1e200));
    ad::Tape tape;
    ad::Var v = tape.leaf(p);
    ad::Var loss = ad::sum(ad::mul(v, v));
    try {
        tape.backward(loss);
        FAIL("expected NumericFailure");
    } catch (const NumericFailure& e) {
        CHECK(std::string(e.what()).find("(mul)") != std::string::npos);
    }
}

TEST_CASE("backward: 17-parameter ELU MLP against central differences") {
    // in 2 -> hidden 4 -> out 1: 8 + 4 + 4 + 1 = 17 parameters.
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(stream_seed(seed, "mlp17"));
        nn::Mlp mlp = nn::Mlp::make(2, {4}, 1, rng);
        for (auto& l : mlp.layers)
            for (double& b : l.bias.value.values()) b = 0.3 * rng.normal();
        Tensor x = testing::random_tensor(6, 2, rng);
        // keep pre-activations away from the ELU kink
        Tensor pre = matmul(x, mlp.layers[0].weight.value);
        bool near_kink = false;
        for (std::size_t i = 0; i < pre.rows(); ++i)
            for (std::size_t j = 0; j < pre.cols(); ++j)
                near_kink |= std::abs(pre(i, j) + mlp.layers[0].bias.value[j]) < 1e-3;
        if (near_kink) continue;

        std::vector<ad::Parameter*> params;
        mlp.visit("mlp", [&params](const std::string&, ad::Parameter& p) { params.push_back(&p); });
        std::size_t count = 0;
        for (auto* p : params) count += p->size();
        REQUIRE(count == 17);
        auto res = testing::gradcheck(
            [&](ad::Tape& t) {
                ad::Var y = mlp(t, t.constant(x));
                return ad::mean(ad::mul(y, y));
            },
            params);
        CHECK_MESSAGE(res.max_rel_error < 1e-4, res.worst);
    }
}

TEST_CASE("primitive gradients against central differences") {
    Rng rng(11);
    ad::Parameter a(testing::random_tensor(3, 4, rng));
    ad::Parameter b(testing::random_tensor(3, 4, rng));
    ad::Parameter m(testing::random_tensor(4, 2, rng));
    ad::Parameter row(testing::random_tensor(1, 4, rng));
    ad::Parameter col(testing::random_tensor(3, 1, rng));
    Tensor w = testing::random_tensor(3, 4, rng);
    std::vector<ad::Parameter*> ps{&a, &b, &m, &row, &col};

    auto weighted = [&w](ad::Tape& t, ad::Var v) { return ad::sum(ad::mul(v, t.constant(w))); };
    SUBCASE("elementwise") {
        auto r = testing::gradcheck(
            [&](ad::Tape& t) {
                ad::Var x = t.leaf(a), y = t.leaf(b);
                ad::Var z = ad::add(ad::mul(ad::elu(x), ad::sin(y)), ad::sub(ad::cos(x), ad::scale(ad::abs(y), 0.3)));
                return weighted(t, ad::add_constant(z, 0.5));
            },
            ps);
        CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
    }
    SUBCASE("broadcasts and matmul") {
        auto r = testing::gradcheck(
            [&](ad::Tape& t) {
                ad::Var x = ad::add_row(t.leaf(a), t.leaf(row));
                x = ad::mul_col(x, t.leaf(col));
                ad::Var y = ad::matmul(x, t.leaf(m));
                ad::Var z = ad::matmul(y, ad::transpose(ad::matmul(ad::transpose(t.leaf(b)), y)));
                z = ad::matmul_nt(z, t.leaf(a));
                return ad::add(ad::mean(ad::mul(z, z)), ad::sum(ad::broadcast_rows(t.leaf(row), 2)));
            },
            ps);
        CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
    }
    SUBCASE("concat, slice, softmax, normalization") {
        Tensor mask = Tensor::from_rows({{1, 0, 1, 1}, {1, 1, 0, 1}, {0, 1, 1, 1}});
        auto r = testing::gradcheck(
            [&](ad::Tape& t) {
                ad::Var x = ad::concat_cols({t.leaf(a), t.leaf(col), t.leaf(b)});
                ad::Var s = ad::softmax_rows(ad::slice_cols(x, 2, 6), &mask);
                ad::Var n = ad::row_normalize(ad::abs(t.leaf(b)));
                ad::Var l = ad::layer_norm_rows(ad::slice_cols(x, 0, 4));
                return ad::add(weighted(t, ad::mul(s, n)), weighted(t, ad::mul(l, l)));
            },
            ps);
        CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
    }
    SUBCASE("mse") {
        auto r = testing::gradcheck([&](ad::Tape& t) { return ad::mse(t.leaf(a), t.leaf(b)); }, ps);
        CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
    }
}

TEST_CASE("graph primitives against central differences") {
    Rng rng(5);
    const std::size_t n = 5, d = 3, m = 3;
    Tensor araw = testing::random_tensor(n, n, rng);
    for (double& v : araw.values()) v = std::abs(v) + 0.1;
    ad::Parameter adj(araw);
    ad::Parameter h(testing::random_tensor(n, d, rng));
    Tensor wraw = testing::random_tensor(n, m, rng);
    for (double& v : wraw.values()) v = std::abs(v) + 0.2;
    ad::Parameter wts(wraw);
    std::vector<std::size_t> nbr{0, 2, 4, 1, 3, 0, 2, 1, 3, 3, 4, 0, 4, 1, 2};
    Tensor w = testing::random_tensor(n, d, rng);
    std::vector<ad::Parameter*> ps{&adj, &h, &wts};

    auto r1 = testing::gradcheck(
        [&](ad::Tape& t) {
            return ad::sum(ad::mul(ad::incidence_diffusion(t.leaf(adj), t.leaf(h)), t.constant(w)));
        },
        ps);
    CHECK_MESSAGE(r1.max_rel_error < 1e-4, r1.worst);
    auto r2 = testing::gradcheck(
        [&](ad::Tape& t) {
            ad::Var y = ad::laplacian_apply(t.leaf(wts), nbr, t.leaf(h));
            ad::Var s = ad::scatter_dense(t.leaf(wts), nbr);
            return ad::add(ad::sum(ad::mul(y, t.constant(w))), ad::sum(ad::mul(s, s)));
        },
        ps);
    CHECK_MESSAGE(r2.max_rel_error < 1e-4, r2.worst);
}

TEST_CASE("forward and gradients are deterministic") {
    auto run = [] {
        Rng rng(3);
        nn::Mlp mlp = nn::Mlp::make(2, {8, 8}, 2, rng);
        Tensor x = testing::random_tensor(16, 2, rng);
        ad::Tape tape;
        ad::Var y = mlp(tape, tape.constant(x));
        tape.backward(ad::mean(ad::mul(y, y)));
        std::vector<double> out = y.value().values();
        for (auto& l : mlp.layers) out.insert(out.end(), l.weight.grad.values().begin(), l.weight.grad.values().end());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("AdamW") {
    ad::Parameter p(Tensor(1, 1, 1.0));
    std::vector<ad::Parameter*> ps{&p};
    SUBCASE("zero gradient, no decay") {
        AdamW opt(AdamWConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});
        opt.step(ps);
        CHECK(p.value[0] == 1.0);
        CHECK(opt.steps() == 1);
    }
    SUBCASE("pure decay") {
        AdamW opt(AdamWConfig{0.01, 0.9, 0.999, 1e-8, 0.1});
        opt.step(ps);
        CHECK(p.value[0] == doctest::Approx(0.999).epsilon(1e-15));
    }
    SUBCASE("geometric decay trajectory") {
        AdamW opt(AdamWConfig{0.01, 0.9, 0.999, 1e-8, 0.1});
        const CosineSchedule sched{0.01, 10, 0.0};
        double expect = 1.0;
        for (int s = 0; s < 10; ++s) {
            const double lr = sched.at(s).lr;
            opt.step(ps, lr);
            expect *= 1.0 - lr * 0.1;
            CHECK(p.value[0] == expect);
        }
    }
    SUBCASE("first step with bias correction") {
        p.value[0] = 0.0;
        p.grad[0] = 1.0;
        AdamW opt(AdamWConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});
        opt.step(ps);
        // m = 0.1, v = 0.001; mhat = 1, vhat = 1 -> step = lr * 1 / (1 + eps)
        const double expect = -1e-3 * 1.0 / (1.0 + 1e-8);
        CHECK(p.value[0] == doctest::Approx(expect).epsilon(1e-14));
        CHECK(opt.first_moments()[0][0] == doctest::Approx(0.1));
        CHECK(opt.second_moments()[0][0] == doctest::Approx(0.001));
    }
    SUBCASE("shape mismatch") {
        p.grad = Tensor(1, 2);
        AdamW opt;
        CHECK_THROWS_AS(opt.step(ps), ContractViolation);
    }
}

TEST_CASE("cosine schedule") {
    const CosineSchedule s{2e-4, 100, 0.0};
    CHECK(s.at(0).lr == 2e-4);
    CHECK(s.at(100).lr == 0.0);
    CHECK(s.at(50).lr == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK_FALSE(s.at(50).clamped);
    CHECK(s.at(-3).clamped);
    CHECK(s.at(-3).lr == 2e-4);
    CHECK(s.at(140).clamped);
    CHECK(s.at(140).lr == 0.0);
    const CosineSchedule f{1e-3, 37, 1e-5};
    double prev = f.at(0).lr;
    for (int k = 1; k <= 37; ++k) {
        CHECK(f.at(k).lr <= prev);
        prev = f.at(k).lr;
    }
    CHECK(prev == 1e-5);
}

TEST_CASE("rng streams") {
    Rng a(stream_seed(4, "x")), b(stream_seed(4, "x")), c(stream_seed(4, "y"));
    for (int i = 0; i < 10; ++i) {
        const double u = a.normal();
        CHECK(u == b.normal());
        CHECK(u != c.normal());
    }
    Rng r(1);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        CHECK((u >= 0.0 && u < 1.0));
    }
}
