#include "gfm/fmtrain.hpp"

#include "gfm/errors.hpp"
#include "gfm/rng.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>

namespace gfm::train {

TimeSampling parse_time_sampling(std::string_view s) {
    if (s == "shared") return TimeSampling::Shared;
    if (s == "per-sample") return TimeSampling::PerSample;
    throw ConfigError("unknown time sampling '" + std::string(s) + "'; valid: shared, per-sample");
}

std::string_view time_sampling_name(TimeSampling s) { return s == TimeSampling::Shared ? "shared" : "per-sample"; }

TimeConvention parse_convention(std::string_view s) {
    if (s == "noise-at-zero") return TimeConvention::NoiseAtZero;
    if (s == "noise-at-one") return TimeConvention::NoiseAtOne;
    throw ConfigError("unknown time convention '" + std::string(s) + "'; valid: noise-at-zero, noise-at-one");
}

std::string_view convention_name(TimeConvention c) {
    return c == TimeConvention::NoiseAtZero ? "noise-at-zero" : "noise-at-one";
}

TrainingTriplet make_training_triplet(const Tensor& x0, const Tensor& x1, const Tensor& times) {
    if (!x0.same_shape(x1)) {
        throw ContractViolation("make_training_triplet: x0 " + x0.shape_string() + " vs x1 " + x1.shape_string());
    }
    if (times.rows() != x0.rows() || times.cols() != 1) {
        throw ContractViolation("make_training_triplet: times must be a B x 1 column");
    }
    TrainingTriplet out{Tensor(x0.rows(), x0.cols()), times, Tensor(x0.rows(), x0.cols())};
    for (std::size_t i = 0; i < x0.rows(); ++i) {
        const double t = times[i];
        if (!(t >= 0.0 && t <= 1.0)) throw ContractViolation("make_training_triplet: t outside [0, 1]");
        for (std::size_t f = 0; f < x0.cols(); ++f) {
            out.x_t(i, f) = (1.0 - t) * x0(i, f) + t * x1(i, f);
            out.v_star(i, f) = x1(i, f) - x0(i, f);
        }
    }
    return out;
}

TrainingTriplet make_training_triplet(const data::SampleBatch& x0, const data::SampleBatch& x1, double t) {
    return make_training_triplet(x0.points, x1.points, Tensor(x0.points.rows(), 1, t));
}

ad::Var fm_loss(ad::Tape& tape, velocity::CompositeField& field, const TrainingTriplet& triplet) {
    ad::Var pred = field.forward(tape, tape.constant(triplet.x_t, "x_t"), tape.constant(triplet.times, "t"));
    return ad::mse(pred, tape.constant(triplet.v_star, "v_star"));
}

double fm_loss(velocity::CompositeField& field, const TrainingTriplet& triplet) {
    ad::Tape tape(false);
    return fm_loss(tape, field, triplet).value().item();
}

Sampler gaussian_sampler(std::size_t dim) {
    return [dim](std::size_t b, std::uint64_t seed) { return data::sample_source(b, dim, seed).points; };
}

Sampler dataset_sampler(const data::DatasetSpec& spec) {
    return [spec](std::size_t b, std::uint64_t seed) { return data::sample_target(spec, b, seed).points; };
}

void TrainConfig::validate(const velocity::FieldSpec& field) const {
    if (iterations == 0) throw ConfigError("train: iterations must be at least 1");
    if (batch_size == 0) throw ConfigError("train: batch size must be positive");
    if (field.variant != velocity::DiffusionVariant::None && batch_size < 2) {
        throw ConfigError("train: graph variants need a batch of at least 2");
    }
    if (!(lr > 0.0) || floor_lr < 0.0) throw ConfigError("train: learning rates must be positive");
}

double TrainLog::final_loss(std::size_t window) const {
    if (iterations.empty()) return 0.0;
    const std::size_t n = std::min(window, iterations.size());
    double s = 0.0;
    for (std::size_t i = iterations.size() - n; i < iterations.size(); ++i) s += iterations[i].loss;
    return s / static_cast<double>(n);
}

double TrainLog::initial_loss(std::size_t window) const {
    const std::size_t n = std::min(window, iterations.size());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += iterations[i].loss;
    return n ? s / static_cast<double>(n) : 0.0;
}

namespace {

TrainingTriplet draw_triplet(const Sampler& source, const Sampler& target, const TrainConfig& cfg,
                             std::string_view stream, std::size_t index) {
    const std::size_t b = cfg.batch_size;
    Tensor noise = source(b, stream_seed(cfg.seed, std::string(stream) + ".source", index));
    Tensor data = target(b, stream_seed(cfg.seed, std::string(stream) + ".target", index));
    Rng trng(stream_seed(cfg.seed, std::string(stream) + ".time", index));
    Tensor times(b, 1);
    if (cfg.time_sampling == TimeSampling::Shared) {
        const double t = trng.uniform();
        for (std::size_t i = 0; i < b; ++i) times[i] = t;
    } else {
        for (std::size_t i = 0; i < b; ++i) times[i] = trng.uniform();
    }
    if (cfg.convention == TimeConvention::NoiseAtZero) return make_training_triplet(noise, data, times);
    return make_training_triplet(data, noise, times);
}

} // namespace

TrainLog train(velocity::CompositeField& field, const Sampler& source, const Sampler& target,
               const TrainConfig& config) {
    config.validate(field.spec());
    const auto params = field.parameters();
    AdamW opt(AdamWConfig{config.lr, config.beta1, config.beta2, config.eps, config.weight_decay});
    const CosineSchedule schedule{config.lr, config.iterations, config.floor_lr};

    std::optional<TrainingTriplet> validation;
    if (config.eval_every > 0) validation = draw_triplet(source, target, config, "train.validation", 0);

    std::vector<Tensor> last_good;
    last_good.reserve(params.size());
    for (const ad::Parameter* p : params) last_good.push_back(p->value);

    TrainLog log;
    log.iterations.reserve(config.iterations);
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t it = 0; it < config.iterations; ++it) {
        try {
            const TrainingTriplet triplet = draw_triplet(source, target, config, "train", it);
            const double lr = schedule.at(static_cast<std::int64_t>(it)).lr;
            field.zero_grad();
            double loss_value;
            {
                ad::Tape tape;
                ad::Var loss = fm_loss(tape, field, triplet);
                loss_value = loss.value().item();
                if (!std::isfinite(loss_value)) throw NumericFailure("non-finite loss");
                tape.backward(loss);
            }
            opt.step(params, lr);
            for (std::size_t k = 0; k < params.size(); ++k) {
                if (!params[k]->value.all_finite()) throw NumericFailure("non-finite parameter after update");
            }
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            log.iterations.push_back({it, loss_value, lr, wall});
            for (std::size_t k = 0; k < params.size(); ++k) last_good[k] = params[k]->value;
            if (validation && (it + 1) % config.eval_every == 0) {
                log.evals.push_back({it, "val_loss", fm_loss(field, *validation)});
            }
        } catch (const NumericFailure& e) {
            for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = last_good[k];
            throw TrainingAborted("training iteration " + std::to_string(it) + ": " + e.what(), std::move(log));
        }
    }
    return log;
}

TrainLog train(velocity::CompositeField& field, const data::DatasetSpec& target, const TrainConfig& config) {
    return train(field, gaussian_sampler(field.spec().dim), dataset_sampler(target), config);
}

// ---- checkpoints ---------------------------------------------------------

Checkpoint make_checkpoint(velocity::CompositeField& field, std::uint64_t seed, std::string config) {
    Checkpoint c{seed, std::move(config), {}};
    field.visit([&c](const std::string& path, ad::Parameter& p) { c.tensors.emplace_back(path, p.value); });
    return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    std::size_t lines = 0;
    for (char ch : ckpt.config) lines += ch == '\n';
    if (!ckpt.config.empty() && ckpt.config.back() != '\n') ++lines;
    out << "gfm-checkpoint " << Checkpoint::kVersion << "\n";
    out << "seed " << ckpt.seed << "\n";
    out << "config " << lines << "\n" << ckpt.config;
    if (!ckpt.config.empty() && ckpt.config.back() != '\n') out << "\n";
    out << "tensors " << ckpt.tensors.size() << "\n";
    char buf[64];
    for (const auto& [name, t] : ckpt.tensors) {
        out << "tensor " << name << " " << t.rows() << " " << t.cols() << "\n";
        for (std::size_t r = 0; r < t.rows(); ++r) {
            for (std::size_t c = 0; c < t.cols(); ++c) {
                std::snprintf(buf, sizeof buf, "%a", t(r, c));
                out << (c ? " " : "") << buf;
            }
            out << "\n";
        }
    }
    out << "end\n";
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    auto fail = [&path](const std::string& why) { return IoError("malformed checkpoint " + path.string() + ": " + why); };
    std::string word;
    int version = 0;
    if (!(in >> word >> version) || word != "gfm-checkpoint") throw fail("missing header");
    if (version != Checkpoint::kVersion) throw fail("unsupported version " + std::to_string(version));
    Checkpoint c;
    if (!(in >> word >> c.seed) || word != "seed") throw fail("missing seed");
    std::size_t lines = 0;
    if (!(in >> word >> lines) || word != "config") throw fail("missing config");
    std::string line;
    std::getline(in, line);
    for (std::size_t i = 0; i < lines; ++i) {
        if (!std::getline(in, line)) throw fail("truncated config");
        c.config += line + "\n";
    }
    std::size_t count = 0;
    if (!(in >> word >> count) || word != "tensors") throw fail("missing tensor count");
    for (std::size_t k = 0; k < count; ++k) {
        std::string name;
        std::size_t rows = 0, cols = 0;
        if (!(in >> word >> name >> rows >> cols) || word != "tensor") throw fail("bad tensor header");
        std::vector<double> v(rows * cols);
        for (double& x : v) {
            std::string tok;
            if (!(in >> tok)) throw fail("truncated tensor " + name);
            char* end = nullptr;
            x = std::strtod(tok.c_str(), &end);
            if (end == tok.c_str()) throw fail("bad number in " + name);
        }
        c.tensors.emplace_back(name, Tensor(rows, cols, std::move(v)));
    }
    if (!(in >> word) || word != "end") throw fail("missing end marker");
    return c;
}

void load_parameters(velocity::CompositeField& field, const Checkpoint& ckpt) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
    std::size_t used = 0;
    field.visit([&](const std::string& path, ad::Parameter& p) {
        auto it = by_name.find(path);
        if (it == by_name.end()) throw ContractViolation("checkpoint has no tensor '" + path + "'");
        if (!it->second->same_shape(p.value)) {
            throw ContractViolation("checkpoint tensor '" + path + "' has shape " + it->second->shape_string() +
                                    ", expected " + p.value.shape_string());
        }
        p.value = *it->second;
        p.zero_grad();
        ++used;
    });
    if (used != by_name.size()) throw ContractViolation("checkpoint holds tensors the model does not have");
}

} // namespace gfm::train
