#include "gfm/metrics.hpp"

#include "gfm/errors.hpp"
#include "gfm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

namespace gfm::metrics {

namespace {

double dist(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t f = 0; f < a.cols(); ++f) {
        const double d = a(i, f) - b(j, f);
        s += d * d;
    }
    return std::sqrt(s);
}

double mean_within(const Tensor& a) {
    const std::size_t n = a.rows();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) s += dist(a, i, a, j);
    // all n^2 ordered pairs, zero diagonal included
    return 2.0 * s / (static_cast<double>(n) * static_cast<double>(n));
}

void check_dims(const Tensor& x, const Tensor& y, const char* who) {
    if (x.cols() != y.cols()) throw ContractViolation(std::string(who) + ": samples differ in dimension");
    if (!x.all_finite() || !y.all_finite()) throw NumericFailure(std::string(who) + ": non-finite samples");
}

} // namespace

double energy_distance(const Tensor& x, const Tensor& y) {
    if (x.rows() < 2 || y.rows() < 2) throw ContractViolation("energy_distance: need at least 2 points per set");
    check_dims(x, y, "energy_distance");
    // fixed argument order so ED(x, y) and ED(y, x) agree bitwise
    if (std::tie(y.shape(), y.values()) < std::tie(x.shape(), x.values())) return energy_distance(y, x);
    double cross = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < y.rows(); ++j) cross += dist(x, i, y, j);
    cross /= static_cast<double>(x.rows()) * static_cast<double>(y.rows());
    return 2.0 * cross - (mean_within(x) + mean_within(y));
}

double sliced_w2(const Tensor& x, const Tensor& y, std::size_t projections, std::uint64_t seed) {
    if (x.rows() != y.rows()) throw ContractViolation("sliced_w2: sample counts must match");
    if (x.rows() == 0) throw ContractViolation("sliced_w2: empty samples");
    if (projections == 0) throw ContractViolation("sliced_w2: need at least one projection");
    check_dims(x, y, "sliced_w2");
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    Rng rng(stream_seed(seed, "sliced_w2"));
    std::vector<double> theta(d), px(n), py(n);
    double total = 0.0;
    for (std::size_t p = 0; p < projections; ++p) {
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double& v : theta) {
                v = rng.normal();
                norm += v * v;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (double& v : theta) v /= norm;
        for (std::size_t i = 0; i < n; ++i) {
            px[i] = py[i] = 0.0;
            for (std::size_t f = 0; f < d; ++f) {
                px[i] += theta[f] * x(i, f);
                py[i] += theta[f] * y(i, f);
            }
        }
        std::sort(px.begin(), px.end());
        std::sort(py.begin(), py.end());
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += (px[i] - py[i]) * (px[i] - py[i]);
        total += s / static_cast<double>(n);
    }
    return std::sqrt(total / static_cast<double>(projections));
}

double knn_recall(const Tensor& real, const Tensor& generated, std::size_t k) {
    const std::size_t m = generated.rows();
    if (k < 1) throw ContractViolation("knn_recall: k must be at least 1");
    if (m <= k) throw ContractViolation("knn_recall: need more than k generated points");
    if (real.rows() == 0) throw ContractViolation("knn_recall: empty real set");
    check_dims(real, generated, "knn_recall");

    std::vector<double> radius(m), row(m - 1);
    for (std::size_t g = 0; g < m; ++g) {
        std::size_t c = 0;
        for (std::size_t h = 0; h < m; ++h)
            if (h != g) row[c++] = dist(generated, g, generated, h);
        std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k - 1), row.end());
        radius[g] = row[k - 1];
    }
    std::size_t covered = 0;
    for (std::size_t i = 0; i < real.rows(); ++i) {
        for (std::size_t g = 0; g < m; ++g) {
            if (dist(real, i, generated, g) <= radius[g]) {
                ++covered;
                break;
            }
        }
    }
    return static_cast<double>(covered) / static_cast<double>(real.rows());
}

MetricReport energy_distance_report(const Tensor& x, const Tensor& y, std::uint64_t seed) {
    return {"energy_distance", energy_distance(x, y), x.rows(), y.rows(), seed, 0, 0};
}

MetricReport sliced_w2_report(const Tensor& x, const Tensor& y, std::size_t projections, std::uint64_t seed) {
    return {"sliced_w2", sliced_w2(x, y, projections, seed), x.rows(), y.rows(), seed, projections, 0};
}

MetricReport knn_recall_report(const Tensor& real, const Tensor& generated, std::size_t k, std::uint64_t seed) {
    return {"knn_recall", knn_recall(real, generated, k), real.rows(), generated.rows(), seed, 0, k};
}

} // namespace gfm::metrics
