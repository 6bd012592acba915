// Python bindings for the main operations: training runs, hyperparameter
// sweeps, exact tabular bound verification, and the divergence estimators.
// Long-running entry points release the GIL.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "dynalab/adapt.hpp"
#include "dynalab/configfile.hpp"
#include "dynalab/errors.hpp"
#include "dynalab/harness.hpp"
#include "dynalab/theory.hpp"

namespace py = pybind11;
using namespace dynalab;

namespace {

py::dict record_dict(const harness::MetricsRecord& r) {
    py::dict d;
    d["real_step"] = r.real_step;
    d["epoch"] = r.epoch;
    d["eval_return"] = r.eval_return;
    d["model_train_loss"] = r.model_train_loss;
    d["model_val_loss"] = r.model_val_loss;
    d["eps_5"] = r.eps_5;
    d["eps_10"] = r.eps_10;
    d["eps_20"] = r.eps_20;
    d["w1_estimate"] = r.w1_estimate;
    d["l_gp"] = r.l_gp;
    d["adaptation_steps"] = r.adaptation_steps;
    d["wall_clock_s"] = r.wall_clock_s;
    return d;
}

py::dict result_dict(const harness::RunResult& r) {
    py::dict d;
    d["seed"] = r.seed;
    d["csv_path"] = r.csv_path;
    d["error"] = r.error;
    py::list records;
    for (const auto& rec : r.records) records.append(record_dict(rec));
    d["records"] = records;
    return d;
}

num::Matrix to_matrix(const std::vector<std::vector<double>>& rows, const char* side) {
    if (rows.empty()) throw UsageError(std::string(side) + " batch must not be empty");
    const int cols = static_cast<int>(rows.front().size());
    num::Matrix m(static_cast<int>(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<int>(rows[i].size()) != cols)
            throw UsageError(std::string(side) + " batch rows must share one width");
        for (int j = 0; j < cols; ++j) m(static_cast<int>(i), j) = rows[i][static_cast<std::size_t>(j)];
    }
    return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() =
        "Desk-scale laboratory for model-based RL with unsupervised model "
        "adaptation: seeded training runs, strategy sweeps, exact return-gap "
        "bound verification, and feature-divergence estimators.";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.def("version", [] { return std::string("0.1.0"); }, "Library version string.");

    m.def("metrics_header", &harness::metrics_header,
          "Exact column order of every metrics CSV.");

    m.def(
        "default_config",
        [] {
            const config::ConfigMap map =
                harness::serialize_run_config(harness::default_run_config());
            py::dict d;
            for (const std::string& key : map.keys()) d[py::str(key)] = map.raw(key);
            return d;
        },
        "All run-configuration keys with their default values, as strings.");

    m.def(
        "train",
        [](const std::string& config_path, const std::string& out_dir) {
            const harness::RunConfig cfg = harness::load_run_config(config_path);
            std::vector<harness::RunResult> results;
            {
                py::gil_scoped_release release;
                results = harness::run(cfg, out_dir);
            }
            py::list out;
            for (const auto& r : results) out.append(result_dict(r));
            return out;
        },
        py::arg("config_path"), py::arg("out_dir") = "runs",
        "Run every seed in the config; returns one dict per seed with the "
        "metrics records, CSV path and error status.");

    m.def(
        "sweep",
        [](const std::string& config_path, const std::string& axis,
           const std::vector<std::string>& values, const std::string& out_dir) {
            const harness::RunConfig cfg = harness::load_run_config(config_path);
            std::vector<harness::SweepCell> cells;
            {
                py::gil_scoped_release release;
                cells = harness::sweep(cfg, axis, values, out_dir);
            }
            py::list out;
            for (const auto& c : cells) {
                py::dict d;
                d["axis"] = c.axis;
                d["value"] = c.value;
                d["seed"] = c.seed;
                d["csv_path"] = c.csv_path;
                d["error"] = c.error;
                out.append(d);
            }
            return out;
        },
        py::arg("config_path"), py::arg("axis"), py::arg("values"), py::arg("out_dir") = "runs",
        "Cross product of axis values and config seeds; returns one dict per "
        "cell and writes a manifest CSV next to the metrics files.");

    m.def(
        "theory_check",
        [](int instances, std::uint64_t master_seed) {
            theory::SweepSummary s;
            {
                py::gil_scoped_release release;
                s = theory::verification_sweep(instances, master_seed);
            }
            py::dict d;
            d["instances_per_family"] = s.instances_per_family;
            d["lemma_violations"] = s.lemma_violations;
            d["theorem_violations"] = s.theorem_violations;
            d["identity_violations"] = s.identity_violations;
            d["companion_violations"] = s.companion_violations;
            d["theorem_vacuous"] = s.theorem_vacuous;
            d["min_lemma_slack"] = s.min_lemma_slack;
            d["min_theorem_slack"] = s.min_theorem_slack;
            d["min_companion_slack"] = s.min_companion_slack;
            d["max_identity_residual"] = s.max_identity_residual;
            d["all_hold"] = s.all_hold();
            return d;
        },
        py::arg("instances") = 500, py::arg("master_seed") = 12345,
        "Verify the return-gap bounds on randomized tabular control problems; "
        "returns violation counts, minimum slacks and the worst identity "
        "residual.");

    m.def(
        "mmd2_unbiased",
        [](const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
           const std::vector<double>& bandwidths) {
            return adapt::mmd2_unbiased(to_matrix(a, "first"), to_matrix(b, "second"), bandwidths);
        },
        py::arg("a"), py::arg("b"), py::arg("bandwidths"),
        "Unbiased kernel-mixture MMD^2 between two sample batches (rows are "
        "samples).");
}
