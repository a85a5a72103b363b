#pragma once

#include "gfm/tensor.hpp"

#include <cstdint>
#include <string>

namespace gfm::metrics {

struct MetricReport {
    std::string name;
    double value = 0.0;
    std::size_t n = 0; // first sample size
    std::size_t m = 0; // second sample size
    std::uint64_t seed = 0;
    std::size_t projections = 0; // sliced_w2 only
    std::size_t k = 0;           // knn_recall only
};

/// 2 E|x - y| - E|x - x'| - E|y - y'| with every mean over all ordered pairs
/// (V-statistics), so the value is >= 0 and exactly 0 for identical sets.
double energy_distance(const Tensor& x, const Tensor& y);

/// sqrt of the mean over random unit directions of the squared 1-D W2 between
/// the projections. Requires equal sample counts.
double sliced_w2(const Tensor& x, const Tensor& y, std::size_t projections = 128, std::uint64_t seed = 0);

/// Fraction of real points within r_k(g) of some generated g, where r_k(g) is
/// the distance from g to its k-th nearest other generated point.
double knn_recall(const Tensor& real, const Tensor& generated, std::size_t k = 3);

MetricReport energy_distance_report(const Tensor& x, const Tensor& y, std::uint64_t seed = 0);
MetricReport sliced_w2_report(const Tensor& x, const Tensor& y, std::size_t projections, std::uint64_t seed);
MetricReport knn_recall_report(const Tensor& real, const Tensor& generated, std::size_t k, std::uint64_t seed = 0);

} // namespace gfm::metrics
