#pragma once

#include "gfm/errors.hpp"
#include "gfm/optim.hpp"
#include "gfm/synthdata.hpp"
#include "gfm/velocity.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gfm::train {

enum class TimeSampling { Shared, PerSample };
/// NoiseAtZero: x(0) is noise and x(1) data. NoiseAtOne flips the roles.
enum class TimeConvention { NoiseAtZero, NoiseAtOne };

TimeSampling parse_time_sampling(std::string_view s);
std::string_view time_sampling_name(TimeSampling s);
TimeConvention parse_convention(std::string_view s);
std::string_view convention_name(TimeConvention c);

/// Straight-line supervision: x_t = (1 - t) x0 + t x1, v* = x1 - x0.
struct TrainingTriplet {
    Tensor x_t;
    Tensor times; // B x 1; all equal when the time is shared
    Tensor v_star;

    double t() const { return times[0]; }
};

TrainingTriplet make_training_triplet(const data::SampleBatch& x0, const data::SampleBatch& x1, double t);
/// Per-sample times (B x 1).
TrainingTriplet make_training_triplet(const Tensor& x0, const Tensor& x1, const Tensor& times);

/// Mean over batch and coordinates of (v(x_t, t) - v*)^2, recorded on the tape.
ad::Var fm_loss(ad::Tape& tape, velocity::CompositeField& field, const TrainingTriplet& triplet);
double fm_loss(velocity::CompositeField& field, const TrainingTriplet& triplet);

/// Source of training points: (batch size, seed) -> B x d tensor.
using Sampler = std::function<Tensor(std::size_t, std::uint64_t)>;
Sampler gaussian_sampler(std::size_t dim);
Sampler dataset_sampler(const data::DatasetSpec& spec);

struct TrainConfig {
    std::size_t iterations = 2000;
    std::size_t batch_size = 256;
    double lr = 2e-3;
    double floor_lr = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    TimeSampling time_sampling = TimeSampling::Shared;
    TimeConvention convention = TimeConvention::NoiseAtZero;
    std::size_t eval_every = 0; // 0 disables the held-out loss records

    void validate(const velocity::FieldSpec& field) const;
};

struct IterationRecord {
    std::size_t iteration;
    double loss;
    double lr;
    double wall_time_s;
};

struct EvalRecord {
    std::size_t iteration;
    std::string metric;
    double value;
};

struct TrainLog {
    std::vector<IterationRecord> iterations;
    std::vector<EvalRecord> evals;

    /// Mean loss over the last `window` iterations (all of them if fewer).
    double final_loss(std::size_t window = 50) const;
    double initial_loss(std::size_t window = 50) const;
};

/// Thrown when training hits a non-finite value. The field has already been
/// restored to the parameters of the last finished iteration.
class TrainingAborted : public NumericFailure {
public:
    TrainingAborted(const std::string& what, TrainLog log) : NumericFailure(what), log_(std::move(log)) {}
    const TrainLog& log() const noexcept { return log_; }

private:
    TrainLog log_;
};

/// Per iteration: draw data and noise, draw t, build the triplet, evaluate the
/// loss, backpropagate and apply one AdamW step at the cosine-annealed rate.
TrainLog train(velocity::CompositeField& field, const Sampler& source, const Sampler& target,
               const TrainConfig& config);
TrainLog train(velocity::CompositeField& field, const data::DatasetSpec& target, const TrainConfig& config);

// ---- checkpoints ---------------------------------------------------------

/// Text container: header and version, seed, an opaque config echo, then every
/// parameter tensor keyed by module path with values in hexadecimal floating
/// point so the round trip is bit-exact.
struct Checkpoint {
    static constexpr int kVersion = 1;
    std::uint64_t seed = 0;
    std::string config;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

Checkpoint make_checkpoint(velocity::CompositeField& field, std::uint64_t seed, std::string config);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Copies tensors into the field by path; missing or mis-shaped entries throw.
void load_parameters(velocity::CompositeField& field, const Checkpoint& ckpt);

} // namespace gfm::train
