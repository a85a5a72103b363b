#include "gfm/synthdata.hpp"

#include "gfm/errors.hpp"
#include "gfm/rng.hpp"

#include <cmath>
#include <numbers>

namespace gfm::data {

Dataset parse_dataset(std::string_view name) {
    for (std::size_t i = 0; i < kDatasetNames.size(); ++i)
        if (kDatasetNames[i] == name) return static_cast<Dataset>(i);
    std::string valid;
    for (auto n : kDatasetNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
    throw ConfigError("unknown dataset '" + std::string(name) + "'; valid names: " + valid);
}

std::string_view dataset_name(Dataset d) { return kDatasetNames[static_cast<std::size_t>(d)]; }

double default_noise(Dataset d) {
    switch (d) {
    case Dataset::EightGaussians: return 0.3;
    case Dataset::TwoMoons: return 0.05;
    case Dataset::Spiral: return 0.1;
    case Dataset::Checkerboard: return 0.0;
    }
    return 0.0;
}

DatasetSpec DatasetSpec::defaults(Dataset d) { return DatasetSpec{d, default_noise(d)}; }

std::array<double, 2> mode_center(std::size_t k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / 8.0;
    return {kEightGaussiansRadius * std::cos(a), kEightGaussiansRadius * std::sin(a)};
}

std::size_t nearest_mode(double x, double y) {
    std::size_t best = 0;
    double bd = INFINITY;
    for (std::size_t k = 0; k < 8; ++k) {
        const auto c = mode_center(k);
        const double d = (x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]);
        if (d < bd) {
            bd = d;
            best = k;
        }
    }
    return best;
}

bool in_black_cell(double x, double y) {
    if (x < -2.0 || x > 2.0 || y < -2.0 || y > 2.0) return false;
    const auto cx = static_cast<long>(std::floor(x + 2.0));
    const auto cy = static_cast<long>(std::floor(y + 2.0));
    // Cells are indexed from the bottom-left; the upper boundary folds into the last cell.
    const long ix = cx > 3 ? 3 : cx;
    const long iy = cy > 3 ? 3 : cy;
    return (ix + iy) % 2 == 0;
}

SampleBatch sample_source(std::size_t batch, std::size_t dim, std::uint64_t seed) {
    if (batch == 0 || dim == 0) throw ContractViolation("sample_source: batch and dim must be positive");
    Rng rng(stream_seed(seed, "source"));
    Tensor pts(batch, dim);
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = rng.normal();
    return {std::move(pts), 0.0, seed};
}

SampleBatch sample_target(const DatasetSpec& spec, std::size_t batch, std::uint64_t seed) {
    if (batch == 0) throw ContractViolation("sample_target: batch must be positive");
    if (!(spec.noise_scale >= 0.0)) throw ConfigError("sample_target: noise_scale must be non-negative");
    Rng rng(stream_seed(seed, "target"));
    Tensor pts(batch, 2);
    const double s = spec.noise_scale;
    for (std::size_t i = 0; i < batch; ++i) {
        double x = 0.0, y = 0.0;
        switch (spec.name) {
        case Dataset::EightGaussians: {
            const auto c = mode_center(rng.below(8));
            x = c[0] + s * rng.normal();
            y = c[1] + s * rng.normal();
            break;
        }
        case Dataset::TwoMoons: {
            const double a = std::numbers::pi * rng.uniform();
            if (rng.uniform() < 0.5) {
                x = std::cos(a);
                y = std::sin(a);
            } else {
                x = 1.0 - std::cos(a);
                y = 0.5 - std::sin(a);
            }
            x += s * rng.normal();
            y += s * rng.normal();
            break;
        }
        case Dataset::Checkerboard: {
            // 8 black cells: (ix + iy) even on the 4x4 grid.
            const auto cell = static_cast<long>(rng.below(8));
            const long iy = cell / 2;
            const long ix = 2 * (cell % 2) + (iy % 2);
            x = -2.0 + static_cast<double>(ix) + rng.uniform();
            y = -2.0 + static_cast<double>(iy) + rng.uniform();
            break;
        }
        case Dataset::Spiral: {
            const double theta = 3.0 * std::numbers::pi * rng.uniform();
            const double r = theta / std::numbers::pi;
            x = r * std::cos(theta) + s * rng.normal();
            y = r * std::sin(theta) + s * rng.normal();
            break;
        }
        }
        pts(i, 0) = x;
        pts(i, 1) = y;
    }
    return {std::move(pts), 1.0, seed};
}

} // namespace gfm::data
