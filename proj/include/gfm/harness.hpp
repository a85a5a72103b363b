#pragma once

#include "gfm/fmtrain.hpp"
#include "gfm/integrate.hpp"
#include "gfm/synthdata.hpp"
#include "gfm/velocity.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace gfm::harness {

// ---- config files --------------------------------------------------------

/// [section] / key = value text; '#' and ';' start comments.
using IniDocument = std::map<std::string, std::map<std::string, std::string>>;

IniDocument parse_ini(std::string_view text);

struct MetricSettings {
    std::size_t samples = 2000;
    std::size_t projections = 128;
    std::size_t knn_k = 3;
    std::size_t nfe_repeats = 10;
    std::size_t sample_chunk = 0; // 0: the training batch size
    std::size_t trajectory_paths = 32;
};

struct ExperimentConfig {
    std::string name = "gfm";
    data::DatasetSpec data;
    velocity::FieldSpec model;
    train::TrainConfig train;
    ode::IntegratorConfig integrate;
    MetricSettings metrics;
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path output_dir = "runs";

    /// Enum values are checked while parsing; this checks the cross-field rules.
    void validate() const;
    /// Size of each coupled sampling batch.
    std::size_t chunk_size() const;
};

/// Unknown sections or keys and malformed values throw ConfigError.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// `section.key=value`, the same keys as the file.
void apply_override(ExperimentConfig& config, std::string_view assignment);
void set_value(ExperimentConfig& config, std::string_view section, std::string_view key, std::string_view value);
/// Complete config as text; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& config);

std::vector<std::uint64_t> parse_seed_list(std::string_view s);

// ---- runs ----------------------------------------------------------------

struct RunRecord {
    std::string run_id;
    std::uint64_t seed = 0;
    std::string variant;
    std::string adjacency;
    std::string dataset;
    double final_loss = 0.0;
    double energy_distance = 0.0;
    double sliced_w2 = 0.0;
    double knn_recall = 0.0;
    double nfe_mean = 0.0;
    double nfe_std = 0.0;
    double time_per_sample_s = 0.0;
    std::uint64_t params_total = 0;
    std::uint64_t params_reaction = 0;
    std::uint64_t params_diff = 0;

    std::string status = "ok"; // error message when the run failed
    Tensor samples;            // generated, n x d
    Tensor target;             // reference draw used by the metrics
    std::vector<double> path_times;
    std::vector<Tensor> paths; // first trajectory_paths rows at each stored time
    std::filesystem::path checkpoint;

    bool ok() const { return status == "ok"; }
};

/// "<variant>-<adjacency>[-k<K>]-s<seed>", prefixed by the experiment name.
std::string run_id(const ExperimentConfig& config, std::uint64_t seed);

struct Generated {
    Tensor samples;
    double seconds = 0.0;
    std::vector<double> path_times;
    std::vector<Tensor> paths;
};

/// Draws config.metrics.samples points in coupled chunks of chunk_size().
Generated generate(velocity::CompositeField& field, const ExperimentConfig& config, std::uint64_t seed);

struct Scores {
    double energy_distance;
    double sliced_w2;
    double knn_recall;
    Tensor target;
};

/// Scores samples against a fresh target draw of the same size.
Scores score(const Tensor& samples, const ExperimentConfig& config, std::uint64_t seed);

/// Mean and sample std of NFE over config.metrics.nfe_repeats single-chunk solves.
std::pair<double, double> nfe_stats(velocity::CompositeField& field, const ExperimentConfig& config,
                                    std::uint64_t seed);

/// Train, checkpoint, sample, score and time one seed. Numeric failures end up
/// in the record's status instead of propagating.
RunRecord run_single(const ExperimentConfig& config, std::uint64_t seed);

/// Every seed in turn, then emit_report into config.output_dir.
std::vector<RunRecord> run_experiment(const ExperimentConfig& config);

struct AblationResult {
    std::vector<RunRecord> graph;    // configured adjacency
    std::vector<RunRecord> identity; // same parameters, A = I at evaluation
};

/// Requires variant gps-lite or laplacian-knn.
AblationResult ablate_adjacency(const ExperimentConfig& config);

struct SweepResult {
    std::vector<std::size_t> k_values;
    std::vector<std::vector<RunRecord>> runs; // one entry per k
    std::vector<RunRecord> baseline;          // variant none, empty when not requested
};

/// One run set per K with the KNN adjacency; K must lie in [1, B - 1].
SweepResult sweep_knn(const ExperimentConfig& config, const std::vector<std::size_t>& k_values,
                      bool with_baseline = true);

// ---- reports -------------------------------------------------------------

inline constexpr std::string_view kMetricsHeader =
    "run_id,seed,variant,adjacency,dataset,final_loss,energy_distance,sliced_w2,knn_recall,nfe_mean,nfe_std,"
    "time_per_sample_s,params_total,params_diff";

/// metrics.csv, samples.csv and per-run SVG plots; records are sorted by
/// (variant, seed, run_id). Throws IoError naming the path on write failure.
void emit_report(std::vector<RunRecord> records, const std::filesystem::path& dir, bool plots = true);
void write_metrics_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path);
void write_samples_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path);
void write_ablation_csv(const AblationResult& result, const std::filesystem::path& path);
void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path);
void write_scatter_svg(const RunRecord& record, const std::filesystem::path& path);
void write_paths_svg(const RunRecord& record, const std::filesystem::path& path);

/// Reads metrics.csv back (samples and paths stay empty).
std::vector<RunRecord> read_metrics_csv(const std::filesystem::path& path);

/// Rebuilds the field described by a checkpoint's config echo and loads its tensors.
velocity::CompositeField load_field(const train::Checkpoint& ckpt);

} // namespace gfm::harness
