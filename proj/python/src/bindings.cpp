#include "gfm/errors.hpp"
#include "gfm/harness.hpp"
#include "gfm/metrics.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

namespace py = pybind11;
using namespace gfm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    if (a.ndim() != 2) throw ContractViolation("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
    const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
    return Tensor(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Tensor& t) {
    Array out({t.rows(), t.cols()});
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

py::dict record_dict(const harness::RunRecord& r) {
    py::dict d;
    d["run_id"] = r.run_id;
    d["seed"] = r.seed;
    d["variant"] = r.variant;
    d["adjacency"] = r.adjacency;
    d["dataset"] = r.dataset;
    d["final_loss"] = r.final_loss;
    d["energy_distance"] = r.energy_distance;
    d["sliced_w2"] = r.sliced_w2;
    d["knn_recall"] = r.knn_recall;
    d["nfe_mean"] = r.nfe_mean;
    d["nfe_std"] = r.nfe_std;
    d["time_per_sample_s"] = r.time_per_sample_s;
    d["params_total"] = r.params_total;
    d["params_reaction"] = r.params_reaction;
    d["params_diff"] = r.params_diff;
    d["status"] = r.status;
    d["samples"] = to_array(r.samples);
    return d;
}

/// A field together with the experiment config it was built from.
struct Model {
    harness::ExperimentConfig config;
    std::uint64_t seed;
    velocity::CompositeField field;

    Model(const std::string& text, std::uint64_t s)
        : config(harness::parse_config(text)), seed(s), field(config.model, s) {}
    Model(harness::ExperimentConfig c, std::uint64_t s, velocity::CompositeField f)
        : config(std::move(c)), seed(s), field(std::move(f)) {}
};

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Graph flow matching core";

    py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<NumericFailure>(m, "NumericFailure", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.def(
        "sample_source", [](std::size_t n, std::size_t dim, std::uint64_t seed) {
            return to_array(data::sample_source(n, dim, seed).points);
        },
        py::arg("n"), py::arg("dim") = 2, py::arg("seed") = 0);
    m.def(
        "sample_target",
        [](const std::string& name, std::size_t n, std::uint64_t seed, std::optional<double> noise) {
            auto spec = data::DatasetSpec::defaults(data::parse_dataset(name));
            if (noise) spec.noise_scale = *noise;
            return to_array(data::sample_target(spec, n, seed).points);
        },
        py::arg("dataset"), py::arg("n"), py::arg("seed") = 0, py::arg("noise") = py::none());

    m.def(
        "energy_distance", [](const Array& x, const Array& y) { return metrics::energy_distance(to_tensor(x), to_tensor(y)); },
        py::arg("x"), py::arg("y"));
    m.def(
        "sliced_w2",
        [](const Array& x, const Array& y, std::size_t projections, std::uint64_t seed) {
            return metrics::sliced_w2(to_tensor(x), to_tensor(y), projections, seed);
        },
        py::arg("x"), py::arg("y"), py::arg("projections") = 128, py::arg("seed") = 0);
    m.def(
        "knn_recall",
        [](const Array& real, const Array& gen, std::size_t k) {
            return metrics::knn_recall(to_tensor(real), to_tensor(gen), k);
        },
        py::arg("real"), py::arg("generated"), py::arg("k") = 3);

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&, std::uint64_t>(), py::arg("config") = "", py::arg("seed") = 0,
             "Builds the velocity field described by an experiment config (ini text).")
        .def_static(
            "load",
            [](const std::filesystem::path& path) {
                const auto ckpt = train::read_checkpoint(path);
                auto field = harness::load_field(ckpt);
                return Model(harness::parse_config(ckpt.config), ckpt.seed, std::move(field));
            },
            py::arg("path"))
        .def("save",
             [](Model& self, const std::filesystem::path& path) {
                 train::write_checkpoint(path, train::make_checkpoint(self.field, self.seed, harness::to_text(self.config)));
             })
        .def_property_readonly("config", [](const Model& self) { return harness::to_text(self.config); })
        .def_property_readonly("seed", [](const Model& self) { return self.seed; })
        .def_property_readonly("parameter_count", [](Model& self) { return self.field.parameter_count(); })
        .def_property_readonly("diffusion_parameter_count",
                               [](Model& self) { return self.field.diffusion_parameter_count(); })
        .def(
            "velocity", [](Model& self, const Array& x, double t) { return to_array(self.field.evaluate(to_tensor(x), t)); },
            py::arg("x"), py::arg("t"))
        .def(
            "reaction",
            [](Model& self, const Array& x, double t) { return to_array(self.field.evaluate_reaction(to_tensor(x), t)); },
            py::arg("x"), py::arg("t"))
        .def(
            "diffusion",
            [](Model& self, const Array& x, double t) { return to_array(self.field.evaluate_diffusion(to_tensor(x), t)); },
            py::arg("x"), py::arg("t"))
        .def(
            "train",
            [](Model& self) {
                train::TrainConfig tc = self.config.train;
                tc.seed = self.seed;
                train::TrainLog log;
                {
                    py::gil_scoped_release release;
                    log = train::train(self.field, self.config.data, tc);
                }
                std::vector<double> losses;
                for (const auto& r : log.iterations) losses.push_back(r.loss);
                return losses;
            },
            "Runs the configured training loop; returns per-iteration losses.")
        .def(
            "sample",
            [](Model& self, std::size_t n, std::uint64_t seed) {
                harness::ExperimentConfig c = self.config;
                c.metrics.samples = n;
                c.metrics.trajectory_paths = 0;
                Tensor out;
                {
                    py::gil_scoped_release release;
                    out = harness::generate(self.field, c, seed).samples;
                }
                return to_array(out);
            },
            py::arg("n"), py::arg("seed") = 0, "Generates n points in coupled chunks of the training batch size.")
        .def("__repr__", [](Model& self) {
            return "<gfm.Model variant=" + std::string(velocity::variant_name(self.field.spec().variant)) +
                   " params=" + std::to_string(self.field.parameter_count()) + ">";
        });
    m.def(
        "run_experiment",
        [](const std::string& text, std::optional<std::filesystem::path> output_dir) {
            auto c = harness::parse_config(text);
            if (output_dir) c.output_dir = *output_dir;
            std::vector<harness::RunRecord> records;
            {
                py::gil_scoped_release release;
                records = harness::run_experiment(c);
            }
            py::list out;
            for (const auto& r : records) out.append(record_dict(r));
            return out;
        },
        py::arg("config"), py::arg("output_dir") = py::none(),
        "Trains, samples and scores every seed of an ini config; writes the report files.");

    m.attr("METRICS_HEADER") = std::string(harness::kMetricsHeader);
}
