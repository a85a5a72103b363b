#include "doctest.h"

#include "gfm/errors.hpp"
#include "gfm/synthdata.hpp"

#include <array>
#include <cmath>

using namespace gfm;
using namespace gfm::data;

TEST_CASE("source sampler") {
    CHECK(sample_source(4, 2, 7).points == sample_source(4, 2, 7).points);
    CHECK(sample_source(4, 2, 7).points != sample_source(4, 2, 8).points);
    CHECK(sample_source(4, 2, 7).time == 0.0);

    const Tensor one = sample_source(1, 1, 3).points;
    CHECK(one.size() == 1);
    CHECK(std::isfinite(one[0]));

    const Tensor big = sample_source(10000, 2, 1).points;
    for (std::size_t f = 0; f < 2; ++f) {
        double m = 0.0, v = 0.0;
        for (std::size_t i = 0; i < big.rows(); ++i) m += big(i, f);
        m /= 10000.0;
        for (std::size_t i = 0; i < big.rows(); ++i) v += (big(i, f) - m) * (big(i, f) - m);
        v /= 9999.0;
        CHECK(std::abs(m) <= 0.05);
        CHECK(v >= 0.9);
        CHECK(v <= 1.1);
    }
    CHECK_THROWS_AS(sample_source(0, 2, 1), ContractViolation);
    CHECK_THROWS_AS(sample_source(2, 0, 1), ContractViolation);
}

TEST_CASE("dataset names") {
    for (Dataset d : {Dataset::TwoMoons, Dataset::EightGaussians, Dataset::Checkerboard, Dataset::Spiral}) {
        CHECK(parse_dataset(dataset_name(d)) == d);
    }
    try {
        parse_dataset("swiss-roll");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("eight-gaussians") != std::string::npos);
        CHECK(msg.find("checkerboard") != std::string::npos);
    }
}

TEST_CASE("eight-gaussians") {
    SUBCASE("zero noise puts every sample on a mean") {
        const Tensor x = sample_target({Dataset::EightGaussians, 0.0}, 500, 2).points;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const auto c = mode_center(nearest_mode(x(i, 0), x(i, 1)));
            CHECK(x(i, 0) == c[0]);
            CHECK(x(i, 1) == c[1]);
        }
    }
    SUBCASE("mode balance at 3 sigma") {
        // Binomial(8000, 1/8): mean 1000, sd sqrt(875) ~ 29.6, so [900, 1100] is wider than 3 sd.
        const Tensor x = sample_target(DatasetSpec::defaults(Dataset::EightGaussians), 8000, 9).points;
        std::array<int, 8> counts{};
        for (std::size_t i = 0; i < x.rows(); ++i) ++counts[nearest_mode(x(i, 0), x(i, 1))];
        for (int c : counts) {
            CHECK(c >= 900);
            CHECK(c <= 1100);
        }
    }
    SUBCASE("means on the radius-4 circle") {
        for (std::size_t k = 0; k < 8; ++k) {
            const auto c = mode_center(k);
            CHECK(std::hypot(c[0], c[1]) == doctest::Approx(4.0).epsilon(1e-15));
        }
    }
}

TEST_CASE("checkerboard support") {
    const Tensor x = sample_target({Dataset::Checkerboard, 0.0}, 10000, 4).points;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        CHECK(std::abs(x(i, 0)) <= 2.0);
        CHECK(std::abs(x(i, 1)) <= 2.0);
        CHECK(in_black_cell(x(i, 0), x(i, 1)));
    }
}

TEST_CASE("two-moons and spiral are deterministic and finite") {
    for (Dataset d : {Dataset::TwoMoons, Dataset::Spiral}) {
        const auto spec = DatasetSpec::defaults(d);
        const Tensor a = sample_target(spec, 300, 5).points;
        CHECK(a == sample_target(spec, 300, 5).points);
        CHECK(a.all_finite());
        CHECK(sample_target(spec, 300, 5).time == 1.0);
    }
    // noiseless moons sit on the two unit half-circles
    const Tensor m = sample_target({Dataset::TwoMoons, 0.0}, 200, 1).points;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double outer = std::hypot(m(i, 0), m(i, 1));
        const double inner = std::hypot(m(i, 0) - 1.0, m(i, 1) - 0.5);
        CHECK(std::min(std::abs(outer - 1.0), std::abs(inner - 1.0)) < 1e-12);
    }
    // noiseless spiral: r = theta / pi within three half-turns
    const Tensor s = sample_target({Dataset::Spiral, 0.0}, 200, 1).points;
    for (std::size_t i = 0; i < s.rows(); ++i) CHECK(std::hypot(s(i, 0), s(i, 1)) <= 3.0 + 1e-12);
}

TEST_CASE("negative noise is rejected") {
    CHECK_THROWS_AS(sample_target({Dataset::EightGaussians, -0.1}, 4, 1), ConfigError);
}
