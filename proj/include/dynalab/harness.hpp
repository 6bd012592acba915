#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dynalab/adapt.hpp"
#include "dynalab/configfile.hpp"
#include "dynalab/dyna.hpp"
#include "dynalab/dynamics.hpp"
#include "dynalab/envs.hpp"
#include "dynalab/sac.hpp"

namespace dynalab::harness {

// Everything one training run needs, round-trippable through the flat
// key=value config format without loss.
struct RunConfig {
    // [run]
    std::string env = "pendulum";
    int env_horizon = 200;
    std::vector<std::uint64_t> seeds = {0};
    int total_real_steps = 30000;
    int pretrain_random_steps = 1000;
    int steps_per_epoch = 250;         // real steps between model-training events
    int rollout_batch = 400;           // branched rollouts per training event
    int policy_updates_per_step = 20;  // agent updates per real step
    double real_ratio = 0.05;          // real fraction of each mixed agent batch
    int eval_episodes = 5;
    std::string out_name = "run";
    // When set, the wall-clock column is written as 0.0 so repeated runs
    // with one config and seed produce bit-identical CSV files. Disable it
    // to log measured seconds for timing comparisons.
    bool deterministic_timing = true;

    // [buffers]
    int env_buffer_capacity = 30000;
    int model_buffer_capacity = 40000;

    // [rollout] branched-rollout length schedule over epochs
    dyna::RolloutSchedule k_schedule{1, 2, 1, 1};

    // [model]
    dynamics::EnsembleConfig model;

    // [agent]
    sac::SacConfig agent;

    // [adaptation]
    bool adaptation_enabled = true;
    adapt::AdaptationConfig adaptation;

    void validate() const;  // throws ConfigError
};

// Desk-scale pendulum defaults (five ensemble members).
RunConfig default_run_config();

// Strict parse: every key present in the map must be a known key, and every
// value must parse as its field's type. Missing keys keep their defaults.
RunConfig parse_run_config(const config::ConfigMap& map);
config::ConfigMap serialize_run_config(const RunConfig& cfg);

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

// One logging row. Fields appear in the CSV in exactly this order.
struct MetricsRecord {
    int real_step = 0;
    int epoch = 0;
    double eval_return = 0.0;
    double model_train_loss = 0.0;
    double model_val_loss = 0.0;
    double eps_5 = 0.0;
    double eps_10 = 0.0;
    double eps_20 = 0.0;
    double w1_estimate = 0.0;  // carries the MMD^2 value under the mmd divergence
    double l_gp = 0.0;
    int adaptation_steps = 0;  // cumulative extractor updates so far
    double wall_clock_s = 0.0;
};

std::string metrics_header();
std::string metrics_row(const MetricsRecord& r);

struct RunResult {
    std::uint64_t seed = 0;
    std::vector<MetricsRecord> records;
    std::string csv_path;
    std::string error;  // empty on success; otherwise "<class>: <message>"

    bool ok() const { return error.empty(); }
};

// DYNALAB_OUT_DIR overrides the requested output directory when set.
std::string resolve_out_dir(const std::string& requested);

// Full training loop for one seed: random pretraining, then the real-step
// loop with periodic model training, branched rollouts, adaptation events
// and per-step agent updates. Metrics stream to <out>/<out_name>_seed<seed>.csv
// row by row; a module error aborts the run, leaving the partial CSV plus a
// trailing "# error: ..." line, and is reported through RunResult::error.
RunResult run_seed(const RunConfig& cfg, std::uint64_t seed, const std::string& out_dir);

// run_seed over every seed listed in the config.
std::vector<RunResult> run(const RunConfig& cfg, const std::string& out_dir);

// Deterministic one-step mean predictor in observation space.
using MeanModel = std::function<std::vector<double>(const std::vector<double>& obs,
                                                    const std::vector<double>& action)>;

// Ensemble-mean prediction (average of member mean heads). The returned
// callable references the ensemble; it must outlive the callable.
MeanModel ensemble_mean_model(const dynamics::DynamicsEnsemble& ensemble);

// Open-loop compounding error over a replayed action sequence:
// (1/h) sum_{i=1..h} |s_hat_i - s_i|^2 with h = actions.size(), the model
// rolled from its own predictions and the truth stepped from `start`.
double compounding_error(const MeanModel& model, const envs::EnvSpec& spec,
                         const envs::EnvState& start,
                         const std::vector<std::vector<double>>& actions);

struct SweepCell {
    std::string axis;
    std::string value;
    std::uint64_t seed = 0;
    std::string csv_path;
    std::string error;  // empty if the cell ran to completion
};

// Cross product of values and the config's seed list. Every cell runs
// through run_seed with an axis/value-tagged output name; a manifest CSV
// mapping cells to metric files is written to <out>/<out_name>_manifest.csv.
// An unknown axis key raises ConfigError listing the valid axes, and every
// value is parsed and validated before any cell runs.
std::vector<SweepCell> sweep(const RunConfig& base, const std::string& axis,
                             const std::vector<std::string>& values, const std::string& out_dir);

}  // namespace dynalab::harness
