// gfm: command-line front end for training, sampling and experiment runs.

#include "CLI11.hpp"

#include "gfm/errors.hpp"
#include "gfm/harness.hpp"
#include "gfm/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>

using namespace gfm;
using namespace gfm::harness;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::string seeds;
    std::string out;
    std::string dataset, variant, adjacency;
    std::size_t iterations = 0;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "experiment config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.sets, "override a config key, section.key=value (repeatable)");
    cmd->add_option("--seed", c.seeds, "seed or comma-separated seed list");
    cmd->add_option("-o,--out", c.out, "output directory");
    cmd->add_option("--dataset", c.dataset, "data.dataset");
    cmd->add_option("--variant", c.variant, "model.variant");
    cmd->add_option("--adjacency", c.adjacency, "model.adjacency");
    cmd->add_option("--iterations", c.iterations, "train.iterations");
}

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? parse_config("") : load_config(c.config);
    for (const auto& s : c.sets) apply_override(cfg, s);
    if (!c.seeds.empty()) cfg.seeds = parse_seed_list(c.seeds);
    if (!c.out.empty()) cfg.output_dir = c.out;
    if (!c.dataset.empty()) set_value(cfg, "data", "dataset", c.dataset);
    if (!c.variant.empty()) set_value(cfg, "model", "variant", c.variant);
    if (!c.adjacency.empty()) set_value(cfg, "model", "adjacency", c.adjacency);
    if (c.iterations) cfg.train.iterations = c.iterations;
    cfg.validate();
    return cfg;
}

void print_records(const std::vector<RunRecord>& records) {
    std::printf("%-40s %10s %10s %10s %8s %8s\n", "run", "loss", "energy", "sw2", "recall", "nfe");
    for (const auto& r : records) {
        if (!r.ok()) {
            std::printf("%-40s FAILED: %s\n", r.run_id.c_str(), r.status.c_str());
            continue;
        }
        std::printf("%-40s %10.4f %10.5f %10.5f %8.3f %8.1f\n", r.run_id.c_str(), r.final_loss, r.energy_distance,
                    r.sliced_w2, r.knn_recall, r.nfe_mean);
    }
}

int cmd_train(const Common& c) {
    const ExperimentConfig cfg = resolve(c);
    fs::create_directories(cfg.output_dir / "checkpoints");
    for (std::uint64_t seed : cfg.seeds) {
        velocity::CompositeField field(cfg.model, seed);
        train::TrainConfig tc = cfg.train;
        tc.seed = seed;
        const auto log = train::train(field, cfg.data, tc);
        const std::string id = run_id(cfg, seed);
        const fs::path path = cfg.output_dir / "checkpoints" / (id + ".ckpt");
        ExperimentConfig echo = cfg;
        echo.seeds = {seed};
        train::write_checkpoint(path, train::make_checkpoint(field, seed, to_text(echo)));
        std::printf("%s: final loss %.5f (%zu iterations, %.1f s) -> %s\n", id.c_str(), log.final_loss(),
                    log.iterations.size(), log.iterations.back().wall_time_s, path.string().c_str());
    }
    return 0;
}

struct FromCheckpoint {
    std::string checkpoint;
    std::size_t n = 0;
    std::string seed;
    std::string out;
};

int cmd_sample(const FromCheckpoint& o, bool evaluate) {
    const auto ckpt = train::read_checkpoint(o.checkpoint);
    auto field = load_field(ckpt);
    ExperimentConfig cfg = parse_config(ckpt.config);
    if (o.n) cfg.metrics.samples = o.n;
    const std::uint64_t seed = o.seed.empty() ? ckpt.seed : parse_seed_list(o.seed).front();
    cfg.validate();

    RunRecord r;
    r.run_id = fs::path(o.checkpoint).stem().string();
    r.seed = seed;
    r.variant = velocity::variant_name(cfg.model.variant);
    r.adjacency = cfg.model.variant == velocity::DiffusionVariant::None
                      ? "none"
                      : std::string(velocity::adjacency_name(cfg.model.effective_adjacency()));
    r.dataset = data::dataset_name(cfg.data.name);
    r.params_total = field.parameter_count();
    r.params_reaction = field.reaction_parameter_count();
    r.params_diff = field.diffusion_parameter_count();
    r.final_loss = NAN;
    Generated g = generate(field, cfg, seed);
    r.samples = std::move(g.samples);
    r.time_per_sample_s = g.seconds / static_cast<double>(cfg.metrics.samples);

    const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
    if (!evaluate) {
        write_samples_csv({r}, dir / "samples.csv");
        std::printf("%zu samples -> %s\n", r.samples.rows(), (dir / "samples.csv").string().c_str());
        return 0;
    }
    Scores s = score(r.samples, cfg, seed);
    r.energy_distance = s.energy_distance;
    r.sliced_w2 = s.sliced_w2;
    r.knn_recall = s.knn_recall;
    r.target = std::move(s.target);
    std::tie(r.nfe_mean, r.nfe_std) = nfe_stats(field, cfg, seed);
    r.path_times = std::move(g.path_times);
    r.paths = std::move(g.paths);
    emit_report({r}, dir);
    print_records({r});
    return 0;
}

int cmd_report(const std::string& dir) {
    const auto records = read_metrics_csv(fs::path(dir) / "metrics.csv");
    struct Acc {
        std::vector<double> loss, ed, sw, kr, nfe;
    };
    std::map<std::string, Acc> groups;
    for (const auto& r : records) {
        auto& a = groups[r.dataset + " " + r.variant + " " + r.adjacency];
        if (std::isnan(r.energy_distance)) continue;
        a.loss.push_back(r.final_loss);
        a.ed.push_back(r.energy_distance);
        a.sw.push_back(r.sliced_w2);
        a.kr.push_back(r.knn_recall);
        a.nfe.push_back(r.nfe_mean);
    }
    auto ms = [](const std::vector<double>& v) {
        double m = 0, s = 0;
        for (double x : v) m += x;
        m /= std::max<std::size_t>(v.size(), 1);
        for (double x : v) s += (x - m) * (x - m);
        s = v.size() > 1 ? std::sqrt(s / (v.size() - 1)) : 0.0;
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4f +- %.4f", m, s);
        return std::string(buf);
    };
    std::printf("%-44s %4s %20s %20s %20s %20s\n", "dataset variant adjacency", "n", "final loss", "energy distance",
                "sliced w2", "knn recall");
    for (const auto& [key, a] : groups) {
        std::printf("%-44s %4zu %20s %20s %20s %20s\n", key.c_str(), a.ed.size(), ms(a.loss).c_str(),
                    ms(a.ed).c_str(), ms(a.sw).c_str(), ms(a.kr).c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph flow matching on toy 2-D data"};
    app.require_subcommand(1);

    Common train_opts, run_opts, ablate_opts, sweep_opts;
    auto* train_cmd = app.add_subcommand("train", "train one model per seed and write checkpoints");
    add_common(train_cmd, train_opts);

    FromCheckpoint sample_opts, eval_opts;
    auto* sample_cmd = app.add_subcommand("sample", "generate samples.csv from a checkpoint");
    auto* eval_cmd = app.add_subcommand("eval", "sample from a checkpoint and score against the target");
    for (auto [cmd, o] : {std::pair{sample_cmd, &sample_opts}, std::pair{eval_cmd, &eval_opts}}) {
        cmd->add_option("checkpoint", o->checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
        cmd->add_option("-n,--samples", o->n, "number of samples");
        cmd->add_option("--seed", o->seed, "sampling seed (default: the checkpoint's)");
        cmd->add_option("-o,--out", o->out, "output directory");
    }

    auto* run_cmd = app.add_subcommand("run", "train, sample, score and report every seed");
    add_common(run_cmd, run_opts);

    auto* ablate_cmd = app.add_subcommand("ablate", "configured adjacency vs the A = I twin");
    add_common(ablate_cmd, ablate_opts);

    std::string k_list = "5,10,20";
    bool no_baseline = false;
    auto* sweep_cmd = app.add_subcommand("sweep-knn", "one run set per KNN neighbourhood size");
    add_common(sweep_cmd, sweep_opts);
    sweep_cmd->add_option("--k", k_list, "comma-separated K values");
    sweep_cmd->add_flag("--no-baseline", no_baseline, "skip the reaction-only runs");

    std::string report_dir = "runs";
    auto* report_cmd = app.add_subcommand("report", "summarize metrics.csv by dataset, variant and adjacency");
    report_cmd->add_option("dir", report_dir, "run directory holding metrics.csv");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) return cmd_train(train_opts);
        if (*sample_cmd) return cmd_sample(sample_opts, false);
        if (*eval_cmd) return cmd_sample(eval_opts, true);
        if (*run_cmd) {
            print_records(run_experiment(resolve(run_opts)));
            return 0;
        }
        if (*ablate_cmd) {
            const auto res = ablate_adjacency(resolve(ablate_opts));
            print_records(res.graph);
            print_records(res.identity);
            return 0;
        }
        if (*sweep_cmd) {
            std::vector<std::size_t> ks;
            for (std::uint64_t k : parse_seed_list(k_list)) ks.push_back(static_cast<std::size_t>(k));
            const auto res = sweep_knn(resolve(sweep_opts), ks, !no_baseline);
            for (const auto& runs : res.runs) print_records(runs);
            print_records(res.baseline);
            return 0;
        }
        if (*report_cmd) return cmd_report(report_dir);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
