#include "gfm/harness.hpp"

#include "gfm/errors.hpp"
#include "gfm/metrics.hpp"
#include "gfm/rng.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

namespace gfm::harness {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto p = s.find(sep, start);
        out.push_back(trim(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start)));
        if (p == std::string_view::npos) break;
        start = p + 1;
    }
    return out;
}

[[noreturn]] void bad_value(std::string_view section, std::string_view key, std::string_view value,
                            std::string_view expected) {
    throw ConfigError("config: " + std::string(section) + "." + std::string(key) + " = '" + std::string(value) +
                      "' is not " + std::string(expected));
}

std::size_t to_size(std::string_view section, std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) bad_value(section, key, v, "a non-negative integer");
    return static_cast<std::size_t>(out);
}

double to_double(std::string_view section, std::string_view key, std::string_view v) {
    const std::string s(v);
    char* end = nullptr;
    const double out = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out)) bad_value(section, key, v, "a finite number");
    return out;
}

bool to_bool(std::string_view section, std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad_value(section, key, v, "a boolean");
}

std::vector<std::size_t> to_sizes(std::string_view section, std::string_view key, std::string_view v) {
    std::vector<std::size_t> out;
    if (trim(v).empty()) return out;
    for (auto part : split(v, ',')) out.push_back(to_size(section, key, part));
    return out;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

template <class F>
auto wrap_enum(std::string_view section, std::string_view key, F&& parse) {
    try {
        return parse();
    } catch (const ConfigError& e) {
        throw ConfigError("config: " + std::string(section) + "." + std::string(key) + ": " + e.what());
    }
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) ensure_dir(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? NAN : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

} // namespace

// ---- config files --------------------------------------------------------

IniDocument parse_ini(std::string_view text) {
    IniDocument doc;
    std::string section;
    std::size_t lineno = 0;
    for (auto raw : split(text, '\n')) {
        ++lineno;
        auto line = raw;
        if (const auto c = line.find_first_of("#;"); c != std::string_view::npos) line = trim(line.substr(0, c));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
            section = std::string(trim(line.substr(1, line.size() - 2)));
            doc[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        if (section.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": key outside a section");
        const std::string key(trim(line.substr(0, eq)));
        if (doc[section].count(key)) {
            throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key " + section + "." + key);
        }
        doc[section][key] = std::string(trim(line.substr(eq + 1)));
    }
    return doc;
}

std::vector<std::uint64_t> parse_seed_list(std::string_view s) {
    std::vector<std::uint64_t> out;
    for (auto part : split(s, ',')) out.push_back(to_size("experiment", "seeds", part));
    return out;
}

void set_value(ExperimentConfig& c, std::string_view section, std::string_view key, std::string_view v) {
    auto unknown = [&] {
        throw ConfigError("config: unknown key " + std::string(section) + "." + std::string(key));
    };
    auto sz = [&] { return to_size(section, key, v); };
    auto dbl = [&] { return to_double(section, key, v); };
    if (section == "experiment") {
        if (key == "name") c.name = std::string(v);
        else if (key == "seeds") c.seeds = parse_seed_list(v);
        else if (key == "output_dir") c.output_dir = std::string(v);
        else unknown();
    } else if (section == "data") {
        if (key == "dataset") {
            const double noise = c.data.noise_scale;
            const bool was_default = noise == data::default_noise(c.data.name);
            c.data.name = wrap_enum(section, key, [&] { return data::parse_dataset(v); });
            if (was_default) c.data.noise_scale = data::default_noise(c.data.name);
        } else if (key == "noise") {
            c.data.noise_scale = dbl();
        } else {
            unknown();
        }
    } else if (section == "model") {
        auto& m = c.model;
        if (key == "variant") m.variant = wrap_enum(section, key, [&] { return velocity::parse_variant(v); });
        else if (key == "adjacency") m.adjacency = wrap_enum(section, key, [&] { return velocity::parse_adjacency(v); });
        else if (key == "identity_adjacency") m.identity_override = to_bool(section, key, v);
        else if (key == "time_freqs") m.time_freqs = sz();
        else if (key == "reaction_hidden") m.reaction_hidden = to_sizes(section, key, v);
        else if (key == "knn_k") m.knn_k = sz();
        else if (key == "attention_width") m.attention_width = sz();
        else if (key == "mpnn_hidden") m.mpnn_hidden = sz();
        else if (key == "mpnn_layers") m.mpnn_layers = to_sizes(section, key, v);
        else if (key == "gps_hidden") m.gps_hidden = sz();
        else if (key == "gps_rounds") m.gps_rounds = sz();
        else if (key == "gps_heads") m.gps_heads = sz();
        else if (key == "gps_walk_length") m.gps_walk_length = sz();
        else if (key == "gps_pe_dim") m.gps_pe_dim = sz();
        else if (key == "kappa_hidden") m.kappa_hidden = to_sizes(section, key, v);
        else unknown();
    } else if (section == "train") {
        auto& t = c.train;
        if (key == "iterations") t.iterations = sz();
        else if (key == "batch_size") t.batch_size = sz();
        else if (key == "lr") t.lr = dbl();
        else if (key == "floor_lr") t.floor_lr = dbl();
        else if (key == "beta1") t.beta1 = dbl();
        else if (key == "beta2") t.beta2 = dbl();
        else if (key == "eps") t.eps = dbl();
        else if (key == "weight_decay") t.weight_decay = dbl();
        else if (key == "eval_every") t.eval_every = sz();
        else if (key == "time_sampling") t.time_sampling = wrap_enum(section, key, [&] { return train::parse_time_sampling(v); });
        else if (key == "convention") t.convention = wrap_enum(section, key, [&] { return train::parse_convention(v); });
        else unknown();
    } else if (section == "integrate") {
        auto& i = c.integrate;
        if (key == "method") i.method = wrap_enum(section, key, [&] { return ode::parse_method(v); });
        else if (key == "steps") i.steps = sz();
        else if (key == "rtol") i.rtol = dbl();
        else if (key == "atol") i.atol = dbl();
        else if (key == "safety") i.safety = dbl();
        else if (key == "min_factor") i.min_factor = dbl();
        else if (key == "max_factor") i.max_factor = dbl();
        else if (key == "initial_step") i.initial_step = dbl();
        else if (key == "max_steps") i.max_steps = sz();
        else unknown();
    } else if (section == "metrics") {
        auto& m = c.metrics;
        if (key == "samples") m.samples = sz();
        else if (key == "projections") m.projections = sz();
        else if (key == "knn_k") m.knn_k = sz();
        else if (key == "nfe_repeats") m.nfe_repeats = sz();
        else if (key == "sample_chunk") m.sample_chunk = sz();
        else if (key == "trajectory_paths") m.trajectory_paths = sz();
        else unknown();
    } else {
        throw ConfigError("config: unknown section [" + std::string(section) +
                          "]; valid: experiment, data, model, train, integrate, metrics");
    }
}

ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig c;
    const IniDocument doc = parse_ini(text);
    // dataset first so an explicit noise is not replaced by the dataset default
    if (auto s = doc.find("data"); s != doc.end()) {
        if (auto d = s->second.find("dataset"); d != s->second.end()) set_value(c, "data", "dataset", d->second);
    }
    for (const auto& [section, keys] : doc) {
        for (const auto& [key, value] : keys) {
            if (section == "data" && key == "dataset") continue;
            set_value(c, section, key, value);
        }
    }
    c.model.dim = data::DatasetSpec::dim;
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void apply_override(ExperimentConfig& c, std::string_view assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
        throw ConfigError("override '" + std::string(assignment) + "' is not section.key=value");
    }
    set_value(c, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
              trim(assignment.substr(eq + 1)));
}

std::string to_text(const ExperimentConfig& c) {
    std::ostringstream o;
    std::string seeds;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(c.seeds[i]);
    const auto& m = c.model;
    const auto& t = c.train;
    const auto& g = c.integrate;
    o << "[experiment]\nname = " << c.name << "\nseeds = " << seeds << "\noutput_dir = " << c.output_dir.string()
      << "\n\n[data]\ndataset = " << data::dataset_name(c.data.name) << "\nnoise = " << fmt(c.data.noise_scale)
      << "\n\n[model]\nvariant = " << velocity::variant_name(m.variant)
      << "\nadjacency = " << velocity::adjacency_name(m.adjacency)
      << "\nidentity_adjacency = " << (m.identity_override ? "true" : "false") << "\ntime_freqs = " << m.time_freqs
      << "\nreaction_hidden = " << join(m.reaction_hidden) << "\nknn_k = " << m.knn_k
      << "\nattention_width = " << m.attention_width << "\nmpnn_hidden = " << m.mpnn_hidden
      << "\nmpnn_layers = " << join(m.mpnn_layers) << "\ngps_hidden = " << m.gps_hidden
      << "\ngps_rounds = " << m.gps_rounds << "\ngps_heads = " << m.gps_heads
      << "\ngps_walk_length = " << m.gps_walk_length << "\ngps_pe_dim = " << m.gps_pe_dim
      << "\nkappa_hidden = " << join(m.kappa_hidden) << "\n\n[train]\niterations = " << t.iterations
      << "\nbatch_size = " << t.batch_size << "\nlr = " << fmt(t.lr) << "\nfloor_lr = " << fmt(t.floor_lr)
      << "\nbeta1 = " << fmt(t.beta1) << "\nbeta2 = " << fmt(t.beta2) << "\neps = " << fmt(t.eps)
      << "\nweight_decay = " << fmt(t.weight_decay) << "\neval_every = " << t.eval_every
      << "\ntime_sampling = " << train::time_sampling_name(t.time_sampling)
      << "\nconvention = " << train::convention_name(t.convention) << "\n\n[integrate]\nmethod = "
      << ode::method_name(g.method) << "\nsteps = " << g.steps << "\nrtol = " << fmt(g.rtol)
      << "\natol = " << fmt(g.atol) << "\nsafety = " << fmt(g.safety) << "\nmin_factor = " << fmt(g.min_factor)
      << "\nmax_factor = " << fmt(g.max_factor) << "\ninitial_step = " << fmt(g.initial_step)
      << "\nmax_steps = " << g.max_steps << "\n\n[metrics]\nsamples = " << c.metrics.samples
      << "\nprojections = " << c.metrics.projections << "\nknn_k = " << c.metrics.knn_k
      << "\nnfe_repeats = " << c.metrics.nfe_repeats << "\nsample_chunk = " << c.metrics.sample_chunk
      << "\ntrajectory_paths = " << c.metrics.trajectory_paths << "\n";
    return o.str();
}

std::size_t ExperimentConfig::chunk_size() const {
    const std::size_t c = metrics.sample_chunk ? metrics.sample_chunk : train.batch_size;
    return std::min(c, metrics.samples);
}

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw ConfigError("config: experiment.seeds must not be empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        throw ConfigError("config: experiment.seeds must be distinct");
    }
    if (data.noise_scale < 0.0) throw ConfigError("config: data.noise must be non-negative");
    model.validate();
    train.validate(model);
    integrate.validate();
    if (metrics.samples < 2) throw ConfigError("config: metrics.samples must be at least 2");
    if (metrics.knn_k < 1 || metrics.samples <= metrics.knn_k) {
        throw ConfigError("config: metrics.knn_k must lie in [1, samples - 1]");
    }
    if (metrics.projections == 0) throw ConfigError("config: metrics.projections must be positive");
    if (metrics.nfe_repeats == 0) throw ConfigError("config: metrics.nfe_repeats must be positive");
    const bool graph = model.variant != velocity::DiffusionVariant::None;
    const bool knn = graph && model.adjacency == velocity::AdjacencyPolicy::Knn && !model.identity_override;
    // chunks are balanced, so the smallest one is floor(samples / count)
    const std::size_t chunk = chunk_size();
    const std::size_t count = (metrics.samples + chunk - 1) / chunk;
    const std::size_t smallest = metrics.samples / count;
    if (graph && smallest < 2) throw ConfigError("config: graph variants need sampling chunks of at least 2");
    if (knn && (model.knn_k >= train.batch_size || model.knn_k >= smallest)) {
        throw ConfigError("config: model.knn_k must be below the training batch and the sampling chunk");
    }
}

// ---- runs ----------------------------------------------------------------

namespace {

std::string adjacency_label(const velocity::FieldSpec& m) {
    if (m.variant == velocity::DiffusionVariant::None) return "none";
    return std::string(velocity::adjacency_name(m.effective_adjacency()));
}

} // namespace

std::string run_id(const ExperimentConfig& c, std::uint64_t seed) {
    std::string id = c.name + "-" + std::string(velocity::variant_name(c.model.variant)) + "-" +
                     adjacency_label(c.model);
    if (c.model.variant != velocity::DiffusionVariant::None && c.model.effective_adjacency() == velocity::AdjacencyPolicy::Knn) {
        id += std::to_string(c.model.knn_k);
    }
    return id + "-s" + std::to_string(seed);
}

Generated generate(velocity::CompositeField& field, const ExperimentConfig& c, std::uint64_t seed) {
    const std::size_t n = c.metrics.samples;
    const std::size_t chunk = c.chunk_size();
    const std::size_t count = (n + chunk - 1) / chunk;
    const std::size_t dim = field.spec().dim;
    Generated out;
    out.samples = Tensor(n, dim);
    std::size_t row = 0;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t size = n / count + (k < n % count ? 1 : 0);
        ode::IntegratorConfig ic = c.integrate;
        ic.store_states = k == 0 && c.metrics.trajectory_paths > 0;
        const auto g = ode::sample_generation(field, size, dim, stream_seed(seed, "sample", k), ic, c.train.convention);
        for (std::size_t i = 0; i < size; ++i)
            for (std::size_t f = 0; f < dim; ++f) out.samples(row + i, f) = g.samples.points(i, f);
        row += size;
        if (ic.store_states) {
            const std::size_t p = std::min(c.metrics.trajectory_paths, size);
            out.path_times = g.trajectory.times;
            for (const Tensor& s : g.trajectory.states) {
                Tensor head(p, dim);
                std::copy(s.data(), s.data() + p * dim, head.data());
                out.paths.push_back(std::move(head));
            }
            if (c.train.convention == train::TimeConvention::NoiseAtOne) {
                for (double& t : out.path_times) t = 1.0 - t;
            }
        }
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

Scores score(const Tensor& samples, const ExperimentConfig& c, std::uint64_t seed) {
    Scores s;
    s.target = data::sample_target(c.data, samples.rows(), stream_seed(seed, "metrics.target")).points;
    s.energy_distance = metrics::energy_distance(samples, s.target);
    s.sliced_w2 = metrics::sliced_w2(samples, s.target, c.metrics.projections, stream_seed(seed, "metrics.sliced"));
    s.knn_recall = metrics::knn_recall(s.target, samples, c.metrics.knn_k);
    return s;
}

std::pair<double, double> nfe_stats(velocity::CompositeField& field, const ExperimentConfig& c, std::uint64_t seed) {
    // fixed-step methods spend a known number of evaluations
    if (c.integrate.method == ode::Method::Euler) return {static_cast<double>(c.integrate.steps), 0.0};
    if (c.integrate.method == ode::Method::Rk4) return {4.0 * static_cast<double>(c.integrate.steps), 0.0};
    std::vector<double> nfe;
    ode::IntegratorConfig ic = c.integrate;
    ic.store_states = false;
    for (std::size_t r = 0; r < c.metrics.nfe_repeats; ++r) {
        const auto g = ode::sample_generation(field, c.chunk_size(), field.spec().dim, stream_seed(seed, "nfe", r), ic,
                                              c.train.convention);
        nfe.push_back(static_cast<double>(g.nfe));
    }
    return {mean_of(nfe), std_of(nfe)};
}

RunRecord run_single(const ExperimentConfig& config, std::uint64_t seed) {
    ExperimentConfig c = config;
    c.model.dim = data::DatasetSpec::dim;
    RunRecord r;
    r.run_id = run_id(c, seed);
    r.seed = seed;
    r.variant = velocity::variant_name(c.model.variant);
    r.adjacency = adjacency_label(c.model);
    r.dataset = data::dataset_name(c.data.name);

    velocity::CompositeField field(c.model, seed);
    r.params_reaction = field.reaction_parameter_count();
    r.params_diff = field.diffusion_parameter_count();
    r.params_total = field.parameter_count();

    train::TrainConfig tc = c.train;
    tc.seed = seed;
    try {
        const train::TrainLog log = train::train(field, c.data, tc);
        r.final_loss = log.final_loss();

        const auto logs = c.output_dir / "logs" / (r.run_id + ".csv");
        std::ofstream lo = open_out(logs);
        lo << "iteration,loss,lr,wall_time_s\n";
        for (const auto& it : log.iterations) {
            lo << it.iteration << "," << fmt(it.loss) << "," << fmt(it.lr) << "," << fmt(it.wall_time_s) << "\n";
        }
        for (const auto& e : log.evals) lo << "# eval " << e.iteration << " " << e.metric << " " << fmt(e.value) << "\n";
        close_out(lo, logs);

        r.checkpoint = c.output_dir / "checkpoints" / (r.run_id + ".ckpt");
        ensure_dir(r.checkpoint.parent_path());
        ExperimentConfig echo = c;
        echo.seeds = {seed};
        train::write_checkpoint(r.checkpoint, train::make_checkpoint(field, seed, to_text(echo)));

        Generated g = generate(field, c, seed);
        r.samples = std::move(g.samples);
        r.time_per_sample_s = g.seconds / static_cast<double>(c.metrics.samples);
        r.path_times = std::move(g.path_times);
        r.paths = std::move(g.paths);

        Scores s = score(r.samples, c, seed);
        r.energy_distance = s.energy_distance;
        r.sliced_w2 = s.sliced_w2;
        r.knn_recall = s.knn_recall;
        r.target = std::move(s.target);

        std::tie(r.nfe_mean, r.nfe_std) = nfe_stats(field, c, seed);
    } catch (const train::TrainingAborted& e) {
        r.status = e.what();
        r.final_loss = e.log().final_loss();
        r.energy_distance = r.sliced_w2 = r.knn_recall = r.nfe_mean = r.nfe_std = r.time_per_sample_s = NAN;
    } catch (const NumericFailure& e) {
        r.status = e.what();
        r.energy_distance = r.sliced_w2 = r.knn_recall = r.nfe_mean = r.nfe_std = r.time_per_sample_s = NAN;
    }
    return r;
}

std::vector<RunRecord> run_experiment(const ExperimentConfig& config) {
    config.validate();
    ensure_dir(config.output_dir);
    {
        const auto p = config.output_dir / "config.ini";
        std::ofstream o = open_out(p);
        o << to_text(config);
        close_out(o, p);
    }
    std::vector<RunRecord> records;
    for (std::uint64_t seed : config.seeds) records.push_back(run_single(config, seed));
    emit_report(records, config.output_dir);
    return records;
}

AblationResult ablate_adjacency(const ExperimentConfig& config) {
    using velocity::DiffusionVariant;
    if (config.model.variant == DiffusionVariant::Mpnn) {
        throw ConfigError("ablate: mpnn cannot be ablated with A = I: the graph gradient of an identity adjacency "
                          "has no edges, so the diffusion term is identically zero rather than a local-only twin");
    }
    if (config.model.variant != DiffusionVariant::GpsLite && config.model.variant != DiffusionVariant::LaplacianKnn) {
        throw ConfigError("ablate: variant must be gps-lite or laplacian-knn");
    }
    if (config.model.identity_override) throw ConfigError("ablate: the configured model already uses A = I");
    config.validate();
    ExperimentConfig twin = config;
    twin.model.identity_override = true;

    AblationResult out;
    for (std::uint64_t seed : config.seeds) {
        out.graph.push_back(run_single(config, seed));
        out.identity.push_back(run_single(twin, seed));
    }
    std::vector<RunRecord> all = out.graph;
    all.insert(all.end(), out.identity.begin(), out.identity.end());
    emit_report(all, config.output_dir);
    write_ablation_csv(out, config.output_dir / "ablation.csv");
    return out;
}

SweepResult sweep_knn(const ExperimentConfig& config, const std::vector<std::size_t>& k_values, bool with_baseline) {
    if (config.model.variant == velocity::DiffusionVariant::None) {
        throw ConfigError("sweep-knn: needs a graph variant (mpnn, gps-lite or laplacian-knn)");
    }
    if (k_values.empty()) throw ContractViolation("sweep-knn: no k values");
    for (std::size_t k : k_values) {
        if (k == 0) {
            throw ContractViolation("sweep-knn: k = 0 is the identity adjacency; use ablate for that comparison");
        }
        if (k >= config.train.batch_size) {
            throw ContractViolation("sweep-knn: k = " + std::to_string(k) + " must be below the batch size " +
                                    std::to_string(config.train.batch_size));
        }
    }
    SweepResult out;
    out.k_values = k_values;
    std::vector<RunRecord> all;
    for (std::size_t k : k_values) {
        ExperimentConfig c = config;
        c.model.adjacency = velocity::AdjacencyPolicy::Knn;
        c.model.identity_override = false;
        c.model.knn_k = k;
        c.validate();
        std::vector<RunRecord> runs;
        for (std::uint64_t seed : c.seeds) runs.push_back(run_single(c, seed));
        all.insert(all.end(), runs.begin(), runs.end());
        out.runs.push_back(std::move(runs));
    }
    if (with_baseline) {
        ExperimentConfig b = config;
        b.model.variant = velocity::DiffusionVariant::None;
        for (std::uint64_t seed : b.seeds) out.baseline.push_back(run_single(b, seed));
        all.insert(all.end(), out.baseline.begin(), out.baseline.end());
    }
    emit_report(all, config.output_dir);
    write_sweep_csv(out, config.output_dir / "knn_sweep.csv");
    return out;
}

// ---- reports -------------------------------------------------------------

void write_metrics_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
    std::ofstream o = open_out(path);
    o << kMetricsHeader << "\n";
    for (const auto& r : records) {
        o << r.run_id << "," << r.seed << "," << r.variant << "," << r.adjacency << "," << r.dataset << ","
          << fmt(r.final_loss) << "," << fmt(r.energy_distance) << "," << fmt(r.sliced_w2) << "," << fmt(r.knn_recall)
          << "," << fmt(r.nfe_mean) << "," << fmt(r.nfe_std) << "," << fmt(r.time_per_sample_s) << ","
          << r.params_total << "," << r.params_diff << "\n";
    }
    close_out(o, path);
}

void write_samples_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
    std::size_t dim = 0;
    for (const auto& r : records) dim = std::max(dim, r.samples.cols());
    std::ofstream o = open_out(path);
    o << "run_id,sample_id";
    for (std::size_t f = 0; f < dim; ++f) o << ",x" << f;
    o << "\n";
    for (const auto& r : records) {
        for (std::size_t i = 0; i < r.samples.rows(); ++i) {
            o << r.run_id << "," << i;
            for (std::size_t f = 0; f < r.samples.cols(); ++f) o << "," << fmt(r.samples(i, f));
            o << "\n";
        }
    }
    close_out(o, path);
}

void write_ablation_csv(const AblationResult& res, const std::filesystem::path& path) {
    std::ofstream o = open_out(path);
    o << "seed,dataset,variant,adjacency,energy_distance_graph,energy_distance_identity,sliced_w2_graph,"
         "sliced_w2_identity,knn_recall_graph,knn_recall_identity,params_total\n";
    for (std::size_t i = 0; i < res.graph.size(); ++i) {
        const auto& g = res.graph[i];
        const auto& d = res.identity[i];
        o << g.seed << "," << g.dataset << "," << g.variant << "," << g.adjacency << "," << fmt(g.energy_distance)
          << "," << fmt(d.energy_distance) << "," << fmt(g.sliced_w2) << "," << fmt(d.sliced_w2) << ","
          << fmt(g.knn_recall) << "," << fmt(d.knn_recall) << "," << g.params_total << "\n";
    }
    close_out(o, path);
}

void write_sweep_csv(const SweepResult& res, const std::filesystem::path& path) {
    std::ofstream o = open_out(path);
    o << "k,runs,final_loss_mean,final_loss_std,energy_distance_mean,energy_distance_std,sliced_w2_mean,"
         "sliced_w2_std,knn_recall_mean,knn_recall_std\n";
    auto row = [&o](const std::string& label, const std::vector<RunRecord>& runs) {
        std::vector<double> fl, ed, sw, kr;
        for (const auto& r : runs) {
            if (!r.ok()) continue;
            fl.push_back(r.final_loss);
            ed.push_back(r.energy_distance);
            sw.push_back(r.sliced_w2);
            kr.push_back(r.knn_recall);
        }
        o << label << "," << ed.size() << "," << fmt(mean_of(fl)) << "," << fmt(std_of(fl)) << ","
          << fmt(mean_of(ed)) << "," << fmt(std_of(ed)) << "," << fmt(mean_of(sw)) << "," << fmt(std_of(sw)) << ","
          << fmt(mean_of(kr)) << "," << fmt(std_of(kr)) << "\n";
    };
    if (!res.baseline.empty()) row("baseline", res.baseline);
    for (std::size_t i = 0; i < res.k_values.size(); ++i) row(std::to_string(res.k_values[i]), res.runs[i]);
    close_out(o, path);
}

namespace {

struct Frame {
    double x0, x1, y0, y1;
    static constexpr double kSize = 480.0, kPad = 20.0;

    double px(double x) const { return kPad + (x - x0) / (x1 - x0) * (kSize - 2 * kPad); }
    double py(double y) const { return kSize - kPad - (y - y0) / (y1 - y0) * (kSize - 2 * kPad); }
};

Frame frame_for(std::initializer_list<const Tensor*> sets) {
    Frame f{INFINITY, -INFINITY, INFINITY, -INFINITY};
    for (const Tensor* t : sets) {
        if (t->cols() < 2) continue;
        for (std::size_t i = 0; i < t->rows(); ++i) {
            f.x0 = std::min(f.x0, (*t)(i, 0));
            f.x1 = std::max(f.x1, (*t)(i, 0));
            f.y0 = std::min(f.y0, (*t)(i, 1));
            f.y1 = std::max(f.y1, (*t)(i, 1));
        }
    }
    if (!(f.x1 > f.x0)) f.x0 -= 1, f.x1 += 1;
    if (!(f.y1 > f.y0)) f.y0 -= 1, f.y1 += 1;
    return f;
}

void svg_header(std::ofstream& o, const std::string& title) {
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" viewBox=\"0 0 480 480\">\n"
      << "<title>" << title << "</title>\n<rect width=\"480\" height=\"480\" fill=\"white\"/>\n";
}

} // namespace

void write_scatter_svg(const RunRecord& r, const std::filesystem::path& path) {
    if (r.samples.cols() < 2) return;
    const Frame f = frame_for({&r.samples, &r.target});
    std::ofstream o = open_out(path);
    svg_header(o, r.run_id + ": generated (blue) vs target (grey)");
    char buf[96];
    auto dots = [&](const Tensor& t, const char* cls, const char* colour) {
        o << "<g class=\"" << cls << "\" fill=\"" << colour << "\" fill-opacity=\"0.5\">\n";
        for (std::size_t i = 0; i < t.rows(); ++i) {
            std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"1.5\"/>\n", f.px(t(i, 0)), f.py(t(i, 1)));
            o << buf;
        }
        o << "</g>\n";
    };
    if (r.target.cols() >= 2) dots(r.target, "target", "#888888");
    dots(r.samples, "generated", "#1f4fbf");
    o << "</svg>\n";
    close_out(o, path);
}

void write_paths_svg(const RunRecord& r, const std::filesystem::path& path) {
    if (r.paths.empty() || r.paths.front().cols() < 2) return;
    std::vector<const Tensor*> all;
    Tensor stacked(r.paths.size() * r.paths.front().rows(), 2);
    for (std::size_t s = 0, row = 0; s < r.paths.size(); ++s)
        for (std::size_t i = 0; i < r.paths[s].rows(); ++i, ++row) {
            stacked(row, 0) = r.paths[s](i, 0);
            stacked(row, 1) = r.paths[s](i, 1);
        }
    const Frame f = frame_for({&stacked});
    std::ofstream o = open_out(path);
    svg_header(o, r.run_id + ": " + std::to_string(r.paths.front().rows()) + " sampling paths");
    char buf[64];
    o << "<g class=\"paths\" fill=\"none\" stroke=\"#1f4fbf\" stroke-opacity=\"0.6\">\n";
    for (std::size_t i = 0; i < r.paths.front().rows(); ++i) {
        o << "<polyline points=\"";
        for (const Tensor& s : r.paths) {
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", f.px(s(i, 0)), f.py(s(i, 1)));
            o << buf;
        }
        o << "\"/>\n";
    }
    o << "</g>\n<g class=\"endpoints\" fill=\"#c0392b\">\n";
    for (std::size_t i = 0; i < r.paths.back().rows(); ++i) {
        std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2\"/>\n", f.px(r.paths.back()(i, 0)),
                      f.py(r.paths.back()(i, 1)));
        o << buf;
    }
    o << "</g>\n</svg>\n";
    close_out(o, path);
}

void emit_report(std::vector<RunRecord> records, const std::filesystem::path& dir, bool plots) {
    if (records.empty()) throw ContractViolation("emit_report: no records");
    std::stable_sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
        return std::tie(a.variant, a.seed, a.run_id) < std::tie(b.variant, b.seed, b.run_id);
    });
    ensure_dir(dir);
    write_metrics_csv(records, dir / "metrics.csv");
    write_samples_csv(records, dir / "samples.csv");
    std::vector<const RunRecord*> failed;
    for (const auto& r : records) {
        if (!r.ok()) failed.push_back(&r);
        if (plots && r.ok()) {
            write_scatter_svg(r, dir / "plots" / (r.run_id + "_scatter.svg"));
            write_paths_svg(r, dir / "plots" / (r.run_id + "_paths.svg"));
        }
    }
    const auto fpath = dir / "failures.txt";
    if (failed.empty()) {
        std::filesystem::remove(fpath);
    } else {
        std::ofstream o = open_out(fpath);
        for (const RunRecord* r : failed) o << r->run_id << ": " << r->status << "\n";
        close_out(o, fpath);
    }
}

std::vector<RunRecord> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader) throw IoError(path.string() + ": unexpected header");
    std::vector<RunRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 14) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 14 fields");
        auto num = [&](std::size_t i) {
            const std::string s(f[i]);
            char* end = nullptr;
            const double v = std::strtod(s.c_str(), &end);
            if (s.empty() || end != s.c_str() + s.size()) {
                throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + s + "'");
            }
            return v;
        };
        auto whole = [&](std::size_t i) {
            std::uint64_t v = 0;
            const auto [p, ec] = std::from_chars(f[i].data(), f[i].data() + f[i].size(), v);
            if (ec != std::errc{} || p != f[i].data() + f[i].size()) {
                throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad integer");
            }
            return v;
        };
        RunRecord r;
        r.run_id = f[0];
        r.seed = whole(1);
        r.variant = f[2];
        r.adjacency = f[3];
        r.dataset = f[4];
        r.final_loss = num(5);
        r.energy_distance = num(6);
        r.sliced_w2 = num(7);
        r.knn_recall = num(8);
        r.nfe_mean = num(9);
        r.nfe_std = num(10);
        r.time_per_sample_s = num(11);
        r.params_total = whole(12);
        r.params_diff = whole(13);
        r.params_reaction = r.params_total - r.params_diff;
        out.push_back(std::move(r));
    }
    return out;
}

velocity::CompositeField load_field(const train::Checkpoint& ckpt) {
    ExperimentConfig c = parse_config(ckpt.config);
    velocity::CompositeField field(c.model, ckpt.seed);
    train::load_parameters(field, ckpt);
    return field;
}

} // namespace gfm::harness
