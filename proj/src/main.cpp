#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dynalab/errors.hpp"
#include "dynalab/harness.hpp"
#include "dynalab/theory.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

int run_train(const std::string& config_path, const std::string& out_dir) {
    const dynalab::harness::RunConfig cfg = dynalab::harness::load_run_config(config_path);
    const std::vector<dynalab::harness::RunResult> results = dynalab::harness::run(cfg, out_dir);
    bool any_error = false;
    for (const dynalab::harness::RunResult& res : results) {
        if (res.ok()) {
            std::printf("seed %llu: ok, %zu records -> %s\n",
                        static_cast<unsigned long long>(res.seed), res.records.size(),
                        res.csv_path.c_str());
        } else {
            any_error = true;
            std::fprintf(stderr, "seed %llu: aborted (%s), partial metrics -> %s\n",
                         static_cast<unsigned long long>(res.seed), res.error.c_str(),
                         res.csv_path.c_str());
        }
    }
    return any_error ? 1 : 0;
}

int run_theory_check(int instances, std::uint64_t master_seed) {
    const dynalab::theory::SweepSummary s =
        dynalab::theory::verification_sweep(instances, master_seed);
    std::printf("instances per family: %d\n", s.instances_per_family);
    std::printf("per-state decomposition: %d violations, min slack %.3e\n", s.lemma_violations,
                s.min_lemma_slack);
    std::printf("return-gap bound: %d violations, %d vacuous (infinite KL), min finite slack %.3e\n",
                s.theorem_violations, s.theorem_vacuous, s.min_theorem_slack);
    std::printf("telescoping identity: %d violations, max residual %.3e\n", s.identity_violations,
                s.max_identity_residual);
    std::printf("companion bound: %d violations, min slack %.3e\n", s.companion_violations,
                s.min_companion_slack);
    std::printf("%s\n", s.all_hold() ? "all bounds hold" : "BOUND VIOLATIONS FOUND");
    return s.all_hold() ? 0 : 1;
}

int run_sweep(const std::string& config_path, const std::string& axis, const std::string& values,
              const std::string& out_dir) {
    const dynalab::harness::RunConfig base = dynalab::harness::load_run_config(config_path);
    const std::vector<dynalab::harness::SweepCell> cells =
        dynalab::harness::sweep(base, axis, split_csv(values), out_dir);
    bool any_error = false;
    for (const dynalab::harness::SweepCell& cell : cells) {
        if (cell.error.empty()) {
            std::printf("%s=%s seed %llu: ok -> %s\n", cell.axis.c_str(), cell.value.c_str(),
                        static_cast<unsigned long long>(cell.seed), cell.csv_path.c_str());
        } else {
            any_error = true;
            std::fprintf(stderr, "%s=%s seed %llu: aborted (%s)\n", cell.axis.c_str(),
                         cell.value.c_str(), static_cast<unsigned long long>(cell.seed),
                         cell.error.c_str());
        }
    }
    return any_error ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale laboratory for model-based RL with unsupervised model adaptation"};
    app.require_subcommand(1);

    std::string train_config;
    std::string train_out = "runs";
    CLI::App* train = app.add_subcommand("train", "run the training loop for every configured seed");
    train->add_option("config", train_config, "key=value config file")->required();
    train->add_option("--out-dir", train_out,
                      "metrics output directory (DYNALAB_OUT_DIR overrides)");

    int instances = 500;
    std::uint64_t master_seed = 12345;
    CLI::App* theory = app.add_subcommand(
        "theory-check", "numerically verify the return-gap bounds on randomized finite MDPs");
    theory->add_option("--instances", instances, "instances per bound family (default 500)");
    theory->add_option("--master-seed", master_seed, "seed for instance generation");

    std::string sweep_config;
    std::string sweep_axis;
    std::string sweep_values;
    std::string sweep_out = "runs";
    CLI::App* sweep = app.add_subcommand("sweep", "vary one config key over the seed list");
    sweep->add_option("config", sweep_config, "key=value config file")->required();
    sweep->add_option("--axis", sweep_axis, "config key to vary, e.g. adaptation.strategy")
        ->required();
    sweep->add_option("--values", sweep_values, "comma-separated values for the axis")->required();
    sweep->add_option("--out-dir", sweep_out,
                      "metrics output directory (DYNALAB_OUT_DIR overrides)");

    CLI::App* version = app.add_subcommand("version", "print the version and exit");

    CLI11_PARSE(app, argc, argv);

    try {
        if (version->parsed()) {
            std::printf("dynalab %s\n", kVersion);
            return 0;
        }
        if (train->parsed()) return run_train(train_config, train_out);
        if (theory->parsed()) return run_theory_check(instances, master_seed);
        if (sweep->parsed()) return run_sweep(sweep_config, sweep_axis, sweep_values, sweep_out);
    } catch (const dynalab::ConfigError& e) {
        std::fprintf(stderr, "config_error: %s\n", e.what());
        return 2;
    } catch (const dynalab::UsageError& e) {
        std::fprintf(stderr, "usage_error: %s\n", e.what());
        return 3;
    } catch (const dynalab::InputError& e) {
        std::fprintf(stderr, "input_error: %s\n", e.what());
        return 4;
    } catch (const dynalab::NumericalError& e) {
        std::fprintf(stderr, "numerical_error: %s\n", e.what());
        return 5;
    } catch (const dynalab::TrainingError& e) {
        std::fprintf(stderr, "training_error: %s\n", e.what());
        return 6;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
