#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"

#include "gfm/errors.hpp"
#include "gfm/graph.hpp"

#include <cmath>

using namespace gfm;
using namespace gfm::graph;

namespace {

Tensor random_symmetric(std::size_t n, Rng& rng, double sparsity) {
    Tensor a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double w = rng.uniform() < sparsity ? 0.0 : rng.uniform(0.05, 2.0);
            a(i, j) = a(j, i) = w;
        }
    return a;
}

void check_row_stochastic(const Tensor& a) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            CHECK(a(i, j) >= 0.0);
            s += a(i, j);
        }
        CHECK(std::abs(s - 1.0) <= 1e-9);
    }
}

} // namespace

TEST_CASE("attention adjacency") {
    Rng rng(1);
    AttentionProjection proj = AttentionProjection::make(2, 8, 16, rng);
    SUBCASE("identical points give uniform rows") {
        const Tensor x(5, 2, 0.7);
        const Adjacency a = build_attention_adjacency(x, 0.4, proj);
        for (double v : a.weights.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));
        CHECK(a.kind == AdjacencyKind::Attention);
        CHECK(a.entry_count() == 25);
    }
    SUBCASE("rows sum to one") {
        const Tensor x = testing::random_tensor(9, 2, rng, 3.0);
        check_row_stochastic(build_attention_adjacency(x, 0.9, proj).weights);
    }
    SUBCASE("permutation equivariance") {
        const Tensor x = testing::random_tensor(7, 2, rng);
        const auto perm = testing::random_permutation(7, rng);
        const Tensor a = build_attention_adjacency(x, 0.3, proj).weights;
        const Tensor b = build_attention_adjacency(testing::permute_rows(x, perm), 0.3, proj).weights;
        CHECK(max_abs_diff(b, testing::permute_both(a, perm)) < 1e-14);
    }
    SUBCASE("non-finite logits") {
        Tensor x(3, 2, 1.0);
        x(1, 0) = 1e300;
        CHECK_THROWS_AS(build_attention_adjacency(x, 0.5, proj), NumericFailure);
    }
}

TEST_CASE("knn adjacency") {
    SUBCASE("brute-force cosine table") {
        const Tensor x = Tensor::from_rows({{1, 0}, {0, 1}, {1, 0.1}});
        // oracle: full similarity table, pick the best other index
        std::vector<std::size_t> expect(3);
        for (std::size_t i = 0; i < 3; ++i) {
            double best = -2.0;
            for (std::size_t j = 0; j < 3; ++j) {
                if (j == i) continue;
                const double c = (x(i, 0) * x(j, 0) + x(i, 1) * x(j, 1)) /
                                 (std::hypot(x(i, 0), x(i, 1)) * std::hypot(x(j, 0), x(j, 1)));
                if (c > best) {
                    best = c;
                    expect[i] = j;
                }
            }
        }
        CHECK(expect == std::vector<std::size_t>{2, 2, 0});
        const KnnGraph g = knn_graph(x, 1);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(g.neighbor(i, 0) == i);
            CHECK(g.neighbor(i, 1) == expect[i]);
        }
        KnnRankWeights w(1);
        const Adjacency a = build_knn_adjacency(x, 1, w);
        CHECK(a.weights(0, 2) == 0.5);
        CHECK(a.weights(0, 0) == 0.5);
        CHECK(a.weights(1, 2) == 0.5);
        CHECK(a.weights(2, 0) == 0.5);
    }
    SUBCASE("K = 0 is the identity") {
        Rng rng(2);
        KnnRankWeights w(0);
        CHECK(build_knn_adjacency(testing::random_tensor(6, 2, rng), 0, w).weights == Tensor::identity(6));
    }
    SUBCASE("rows sum to one with learned rank weights") {
        Rng rng(3);
        KnnRankWeights w(4);
        for (double& v : w.weights.value.values()) v = rng.normal();
        check_row_stochastic(build_knn_adjacency(testing::random_tensor(12, 2, rng), 4, w).weights);
    }
    SUBCASE("ties go to the lower index") {
        // points 1, 2, 3 are all parallel to point 0
        const Tensor x = Tensor::from_rows({{1, 0}, {2, 0}, {3, 0}, {-1, 0.5}});
        const KnnGraph g = knn_graph(x, 2);
        CHECK(g.neighbor(0, 1) == 1);
        CHECK(g.neighbor(0, 2) == 2);
        CHECK(g.neighbor(3, 1) != 3);
    }
    SUBCASE("zero-norm points raise the warning flag") {
        const Tensor x = Tensor::from_rows({{0, 0}, {1, 0}, {0, 1}});
        KnnRankWeights w(1);
        bool warn = false;
        const Adjacency a = build_knn_adjacency(x, 1, w, &warn);
        CHECK(warn);
        CHECK(a.weights.all_finite());
        CHECK_FALSE(knn_graph(Tensor::from_rows({{1, 0}, {0, 1}, {1, 1}}), 1).zero_norm_warning);
    }
    SUBCASE("edge storage is B K") {
        Rng rng(4);
        const KnnGraph g = knn_graph(testing::random_tensor(40, 2, rng), 5);
        CHECK(g.edge_count() == 200);
        CHECK(g.neighbors.size() == 40 * 6);
        CHECK_THROWS_AS(knn_graph(testing::random_tensor(4, 2, rng), 4), ContractViolation);
    }
    SUBCASE("permutation equivariance") {
        Rng rng(8);
        KnnRankWeights w(3);
        for (double& v : w.weights.value.values()) v = rng.normal();
        const Tensor x = testing::random_tensor(10, 2, rng);
        const auto perm = testing::random_permutation(10, rng);
        const Tensor a = build_knn_adjacency(x, 3, w).weights;
        const Tensor b = build_knn_adjacency(testing::permute_rows(x, perm), 3, w).weights;
        CHECK(max_abs_diff(b, testing::permute_both(a, perm)) == 0.0);
    }
}

TEST_CASE("incidence operator") {
    SUBCASE("identity adjacency has no edges") {
        const IncidenceOperator g = incidence_from_adjacency(identity_adjacency(4));
        CHECK(g.edge_count() == 0);
        CHECK(g.apply(Tensor(4, 2, 1.0)).rows() == 0);
        CHECK(g.apply_transpose(Tensor(), 2) == Tensor(4, 2));
    }
    SUBCASE("constant features give zero edges") {
        Rng rng(1);
        const IncidenceOperator g = incidence_from_adjacency(random_symmetric(5, rng, 0.2));
        CHECK(testing::all_zero(g.apply(Tensor(5, 3, 2.5))));
    }
    SUBCASE("two nodes") {
        const Tensor a = Tensor::from_rows({{0, 1}, {1, 0}});
        const IncidenceOperator g = incidence_from_adjacency(a);
        const Tensor x = Tensor::from_rows({{1}, {0}});
        // both orientations, weight 1/2 each: values +-sqrt(1/2)
        const Tensor gx = g.apply(x);
        REQUIRE(gx.rows() == 2);
        CHECK(gx[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
        CHECK(gx[1] == doctest::Approx(-std::sqrt(0.5)).epsilon(1e-15));
        const Tensor lap = g.apply_transpose(gx, 1);
        CHECK(lap[0] == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(lap[1] == doctest::Approx(-1.0).epsilon(1e-15));
        const Tensor ref = matmul(combinatorial_laplacian(a), x);
        CHECK(max_abs_diff(lap, ref) < 1e-15);
    }
    SUBCASE("G^T G is the weighted combinatorial Laplacian") {
        Rng rng(6);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t n = 2 + rng.below(7);
            const Tensor a = random_symmetric(n, rng, 0.3);
            const IncidenceOperator g = incidence_from_adjacency(a);
            // oracle: D_w - A with D_w the off-diagonal row sums
            Tensor ref(n, n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    if (i != j) {
                        ref(i, j) = -a(i, j);
                        ref(i, i) += a(i, j);
                    }
            const Tensor x = testing::random_tensor(n, 3, rng);
            CHECK(max_abs_diff(g.apply_transpose(g.apply(x), 3), matmul(ref, x)) < 1e-9);
        }
    }
    SUBCASE("negative weights are rejected") {
        CHECK_THROWS_AS(incidence_from_adjacency(Tensor::from_rows({{0, -1}, {1, 0}})), ContractViolation);
    }
}

TEST_CASE("normalized Laplacian") {
    CHECK(normalized_laplacian(identity_adjacency(3)) == Tensor(3, 3));
    CHECK(normalized_laplacian(Tensor::from_rows({{0, 1}, {1, 0}})) == Tensor::from_rows({{1, -1}, {-1, 1}}));

    Rng rng(2);
    KnnRankWeights w(3);
    const Adjacency a = build_knn_adjacency(testing::random_tensor(8, 2, rng), 3, w);
    const Tensor c = matmul(normalized_laplacian(a), Tensor(8, 1, 2.5));
    for (double v : c.values()) CHECK(std::abs(v) < 1e-12);

    try {
        normalized_laplacian(Tensor::from_rows({{1, 0, 0}, {0, 0, 0}, {0, 0, 1}}));
        FAIL("expected DegenerateDegree");
    } catch (const DegenerateDegree& e) {
        CHECK(e.node() == 1);
    }

    SUBCASE("spectrum in [0, 2] by characteristic-polynomial roots") {
        for (int trial = 0; trial < 10; ++trial) {
            const std::size_t n = 2 + rng.below(7);
            Tensor a = random_symmetric(n, rng, 0.3);
            for (std::size_t i = 0; i < n; ++i) a(i, i) += 0.01; // keep degrees positive
            const auto roots = testing::polynomial_roots(testing::characteristic_polynomial(normalized_laplacian(a)));
            for (const auto& r : roots) {
                CHECK(std::abs(r.imag()) < 1e-6);
                CHECK(r.real() >= -1e-7);
                CHECK(r.real() <= 2.0 + 1e-7);
            }
        }
    }
}

TEST_CASE("random-walk encodings") {
    CHECK(rwpe_raw(Tensor::identity(4), 6) == Tensor(4, 6, 1.0));

    const Tensor swap = Tensor::from_rows({{0, 1}, {1, 0}});
    const Tensor raw = rwpe_raw(swap, 7);
    // oracle: explicit matrix powers
    Tensor p = swap;
    for (std::size_t k = 1; k <= 7; ++k) {
        for (std::size_t i = 0; i < 2; ++i) CHECK(raw(i, k - 1) == p(i, i));
        CHECK(raw(0, k - 1) == (k % 2 == 0 ? 1.0 : 0.0));
        p = matmul(p, swap);
    }

    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 3 + rng.below(6);
        Tensor a = random_symmetric(n, rng, 0.4);
        for (std::size_t i = 0; i < n; ++i) a(i, i) += 0.05;
        const std::size_t len = 1 + rng.below(8);
        const Tensor r = rwpe_raw(a, len);
        // oracle: row-normalize then multiply out every power
        Tensor rw = a;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += a(i, j);
            for (std::size_t j = 0; j < n; ++j) rw(i, j) /= s;
        }
        Tensor q = rw;
        for (std::size_t k = 1; k <= len; ++k) {
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(r(i, k - 1) >= 0.0);
                CHECK(r(i, k - 1) <= 1.0);
                CHECK(std::abs(r(i, k - 1) - q(i, i)) < 1e-12);
            }
            q = matmul(q, rw);
        }
    }
    CHECK_THROWS_AS(rwpe_raw(Tensor::from_rows({{0, 0}, {1, 0}}), 3), DegenerateDegree);

    nn::Linear proj = nn::Linear::xavier(4, 3, rng, false);
    const PositionalEncoding pe = rwpe(identity_adjacency(5), 4, proj);
    CHECK(pe.projected.rows() == 5);
    CHECK(pe.projected.cols() == 3);
}
