#pragma once

#include "gfm/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace gfm::data {

enum class Dataset { TwoMoons, EightGaussians, Checkerboard, Spiral };

inline constexpr std::array<std::string_view, 4> kDatasetNames{"two-moons", "eight-gaussians", "checkerboard",
                                                                "spiral"};

struct DatasetSpec {
    Dataset name = Dataset::EightGaussians;
    double noise_scale = 0.3;
    static constexpr std::size_t dim = 2;

    /// Spec with the dataset's default noise (0.3 for eight-gaussians, 0.05
    /// for two-moons, 0.1 for spiral; the checkerboard is noise-free).
    static DatasetSpec defaults(Dataset d);
};

Dataset parse_dataset(std::string_view name); // throws ConfigError listing valid names
std::string_view dataset_name(Dataset d);
double default_noise(Dataset d);

/// A B x d point set sharing one time value.
struct SampleBatch {
    Tensor points;
    double time = 0.0;
    std::uint64_t seed = 0;

    std::size_t size() const { return points.rows(); }
    std::size_t dim() const { return points.cols(); }
};

/// i.i.d. standard normal entries, time 0.
SampleBatch sample_source(std::size_t batch, std::size_t dim, std::uint64_t seed);

/// Draws from the named 2-D target, time 1.
SampleBatch sample_target(const DatasetSpec& spec, std::size_t batch, std::uint64_t seed);

// Support predicates used by tests and the CLI's sanity output.
inline constexpr double kEightGaussiansRadius = 4.0;
/// Index of the nearest of the 8 mode centers.
std::size_t nearest_mode(double x, double y);
std::array<double, 2> mode_center(std::size_t k);
/// True when (x, y) lies in one of the 8 black cells of the 4x4 board on [-2,2]^2.
bool in_black_cell(double x, double y);

} // namespace gfm::data
