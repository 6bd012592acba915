#include "dynalab/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <utility>

#include "dynalab/errors.hpp"
#include "dynalab/net.hpp"
#include "dynalab/rng.hpp"

namespace dynalab::harness {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string bool_name(bool v) { return v ? "true" : "false"; }

// Filesystem-safe tag: anything outside [A-Za-z0-9_.-] becomes '_'.
std::string sanitize_tag(const std::string& s) {
    std::string out = s;
    for (char& c : out) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '_' || c == '.' || c == '-';
        if (!ok) c = '_';
    }
    return out;
}

}  // namespace

void RunConfig::validate() const {
    envs::make_env_spec(env, env_horizon);  // rejects unknown names and bad horizons
    if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
    if (total_real_steps < 0) throw ConfigError("total_real_steps must be >= 0");
    if (pretrain_random_steps < 0) throw ConfigError("pretrain_random_steps must be >= 0");
    if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
    if (rollout_batch < 1) throw ConfigError("rollout_batch must be >= 1");
    if (policy_updates_per_step < 0) throw ConfigError("policy_updates_per_step must be >= 0");
    if (real_ratio < 0.0 || real_ratio > 1.0) throw ConfigError("real_ratio must lie in [0, 1]");
    if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
    if (out_name.empty() || sanitize_tag(out_name) != out_name)
        throw ConfigError("out_name must be non-empty and use only [A-Za-z0-9_.-]");
    if (env_buffer_capacity < 1) throw ConfigError("env_buffer_capacity must be >= 1");
    if (model_buffer_capacity < 1) throw ConfigError("model_buffer_capacity must be >= 1");
    k_schedule.validate();
    model.validate();
    agent.validate();
    adaptation.validate();
}

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.model.members = 5;
    return cfg;
}

config::ConfigMap serialize_run_config(const RunConfig& c) {
    config::ConfigMap m;
    m.set("run.env", c.env);
    m.set("run.horizon", std::to_string(c.env_horizon));
    m.set("run.seeds", config::join_seeds(c.seeds));
    m.set("run.total_real_steps", std::to_string(c.total_real_steps));
    m.set("run.pretrain_random_steps", std::to_string(c.pretrain_random_steps));
    m.set("run.steps_per_epoch", std::to_string(c.steps_per_epoch));
    m.set("run.rollout_batch", std::to_string(c.rollout_batch));
    m.set("run.policy_updates_per_step", std::to_string(c.policy_updates_per_step));
    m.set("run.real_ratio", config::format_double(c.real_ratio));
    m.set("run.eval_episodes", std::to_string(c.eval_episodes));
    m.set("run.out_name", c.out_name);
    m.set("run.deterministic_timing", bool_name(c.deterministic_timing));

    m.set("buffers.env_capacity", std::to_string(c.env_buffer_capacity));
    m.set("buffers.model_capacity", std::to_string(c.model_buffer_capacity));

    m.set("rollout.k_start_epoch", std::to_string(c.k_schedule.start_epoch));
    m.set("rollout.k_end_epoch", std::to_string(c.k_schedule.end_epoch));
    m.set("rollout.k_min", std::to_string(c.k_schedule.min_len));
    m.set("rollout.k_max", std::to_string(c.k_schedule.max_len));

    m.set("model.members", std::to_string(c.model.members));
    m.set("model.hidden", config::join_ints(c.model.hidden));
    m.set("model.activation", num::act_name(c.model.activation));
    m.set("model.logvar_min_init", config::format_double(c.model.logvar_min_init));
    m.set("model.logvar_max_init", config::format_double(c.model.logvar_max_init));
    m.set("model.learning_rate", config::format_double(c.model.learning_rate));
    m.set("model.batch_size", std::to_string(c.model.batch_size));
    m.set("model.patience", std::to_string(c.model.patience));
    m.set("model.max_steps", std::to_string(c.model.max_steps));
    m.set("model.validation_fraction", config::format_double(c.model.validation_fraction));
    m.set("model.max_validation", std::to_string(c.model.max_validation));
    m.set("model.min_samples", std::to_string(c.model.min_samples));

    m.set("agent.hidden", config::join_ints(c.agent.hidden));
    m.set("agent.activation", num::act_name(c.agent.activation));
    m.set("agent.learning_rate", config::format_double(c.agent.learning_rate));
    m.set("agent.gamma", config::format_double(c.agent.gamma));
    m.set("agent.tau", config::format_double(c.agent.tau));
    m.set("agent.batch_size", std::to_string(c.agent.batch_size));
    m.set("agent.initial_temperature", config::format_double(c.agent.initial_temperature));
    m.set("agent.target_entropy_scale", config::format_double(c.agent.target_entropy_scale));
    m.set("agent.log_std_min", config::format_double(c.agent.log_std_min));
    m.set("agent.log_std_max", config::format_double(c.agent.log_std_max));

    m.set("adaptation.enabled", bool_name(c.adaptation_enabled));
    m.set("adaptation.divergence", adapt::divergence_name(c.adaptation.divergence));
    m.set("adaptation.strategy", adapt::strategy_name(c.adaptation.strategy));
    m.set("adaptation.alpha", config::format_double(c.adaptation.alpha));
    m.set("adaptation.critic_steps", std::to_string(c.adaptation.critic_steps));
    m.set("adaptation.critic_lr", config::format_double(c.adaptation.critic_lr));
    m.set("adaptation.extractor_lr", config::format_double(c.adaptation.extractor_lr));
    m.set("adaptation.batch_size", std::to_string(c.adaptation.batch_size));
    m.set("adaptation.critic_hidden", config::join_ints(c.adaptation.critic_hidden));
    m.set("adaptation.critic_activation", num::act_name(c.adaptation.critic_activation));
    m.set("adaptation.bandwidths", config::join_doubles(c.adaptation.mmd_bandwidths));
    m.set("adaptation.g2_start_epoch", std::to_string(c.adaptation.g2.start_epoch));
    m.set("adaptation.g2_end_epoch", std::to_string(c.adaptation.g2.end_epoch));
    m.set("adaptation.g2_min", std::to_string(c.adaptation.g2.min_len));
    m.set("adaptation.g2_max", std::to_string(c.adaptation.g2.max_len));
    m.set("adaptation.stop_epoch", std::to_string(c.adaptation.stop_epoch));
    return m;
}

RunConfig parse_run_config(const config::ConfigMap& m) {
    const RunConfig d = default_run_config();
    const config::ConfigMap known = serialize_run_config(d);
    for (const std::string& key : m.keys()) {
        if (!known.contains(key)) {
            std::string valid;
            for (const std::string& k : known.keys()) {
                if (!valid.empty()) valid += ", ";
                valid += k;
            }
            throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
        }
    }

    RunConfig c;
    c.env = m.get_string("run.env", d.env);
    c.env_horizon = m.get_int("run.horizon", d.env_horizon);
    c.seeds = m.contains("run.seeds") ? m.get_seed_list("run.seeds") : d.seeds;
    c.total_real_steps = m.get_int("run.total_real_steps", d.total_real_steps);
    c.pretrain_random_steps = m.get_int("run.pretrain_random_steps", d.pretrain_random_steps);
    c.steps_per_epoch = m.get_int("run.steps_per_epoch", d.steps_per_epoch);
    c.rollout_batch = m.get_int("run.rollout_batch", d.rollout_batch);
    c.policy_updates_per_step = m.get_int("run.policy_updates_per_step", d.policy_updates_per_step);
    c.real_ratio = m.get_double("run.real_ratio", d.real_ratio);
    c.eval_episodes = m.get_int("run.eval_episodes", d.eval_episodes);
    c.out_name = m.get_string("run.out_name", d.out_name);
    c.deterministic_timing = m.get_bool("run.deterministic_timing", d.deterministic_timing);

    c.env_buffer_capacity = m.get_int("buffers.env_capacity", d.env_buffer_capacity);
    c.model_buffer_capacity = m.get_int("buffers.model_capacity", d.model_buffer_capacity);

    c.k_schedule.start_epoch = m.get_int("rollout.k_start_epoch", d.k_schedule.start_epoch);
    c.k_schedule.end_epoch = m.get_int("rollout.k_end_epoch", d.k_schedule.end_epoch);
    c.k_schedule.min_len = m.get_int("rollout.k_min", d.k_schedule.min_len);
    c.k_schedule.max_len = m.get_int("rollout.k_max", d.k_schedule.max_len);

    c.model.members = m.get_int("model.members", d.model.members);
    if (m.contains("model.hidden")) c.model.hidden = m.get_int_list("model.hidden");
    c.model.activation = num::parse_act(m.get_string("model.activation", num::act_name(d.model.activation)));
    c.model.logvar_min_init = m.get_double("model.logvar_min_init", d.model.logvar_min_init);
    c.model.logvar_max_init = m.get_double("model.logvar_max_init", d.model.logvar_max_init);
    c.model.learning_rate = m.get_double("model.learning_rate", d.model.learning_rate);
    c.model.batch_size = m.get_int("model.batch_size", d.model.batch_size);
    c.model.patience = m.get_int("model.patience", d.model.patience);
    c.model.max_steps = m.get_int("model.max_steps", d.model.max_steps);
    c.model.validation_fraction = m.get_double("model.validation_fraction", d.model.validation_fraction);
    c.model.max_validation = m.get_int("model.max_validation", d.model.max_validation);
    c.model.min_samples = m.get_int("model.min_samples", d.model.min_samples);

    if (m.contains("agent.hidden")) c.agent.hidden = m.get_int_list("agent.hidden");
    c.agent.activation = num::parse_act(m.get_string("agent.activation", num::act_name(d.agent.activation)));
    c.agent.learning_rate = m.get_double("agent.learning_rate", d.agent.learning_rate);
    c.agent.gamma = m.get_double("agent.gamma", d.agent.gamma);
    c.agent.tau = m.get_double("agent.tau", d.agent.tau);
    c.agent.batch_size = m.get_int("agent.batch_size", d.agent.batch_size);
    c.agent.initial_temperature = m.get_double("agent.initial_temperature", d.agent.initial_temperature);
    c.agent.target_entropy_scale =
        m.get_double("agent.target_entropy_scale", d.agent.target_entropy_scale);
    c.agent.log_std_min = m.get_double("agent.log_std_min", d.agent.log_std_min);
    c.agent.log_std_max = m.get_double("agent.log_std_max", d.agent.log_std_max);

    c.adaptation_enabled = m.get_bool("adaptation.enabled", d.adaptation_enabled);
    c.adaptation.divergence = adapt::parse_divergence(
        m.get_string("adaptation.divergence", adapt::divergence_name(d.adaptation.divergence)));
    c.adaptation.strategy = adapt::parse_strategy(
        m.get_string("adaptation.strategy", adapt::strategy_name(d.adaptation.strategy)));
    c.adaptation.alpha = m.get_double("adaptation.alpha", d.adaptation.alpha);
    c.adaptation.critic_steps = m.get_int("adaptation.critic_steps", d.adaptation.critic_steps);
    c.adaptation.critic_lr = m.get_double("adaptation.critic_lr", d.adaptation.critic_lr);
    c.adaptation.extractor_lr = m.get_double("adaptation.extractor_lr", d.adaptation.extractor_lr);
    c.adaptation.batch_size = m.get_int("adaptation.batch_size", d.adaptation.batch_size);
    if (m.contains("adaptation.critic_hidden"))
        c.adaptation.critic_hidden = m.get_int_list("adaptation.critic_hidden");
    c.adaptation.critic_activation = num::parse_act(
        m.get_string("adaptation.critic_activation", num::act_name(d.adaptation.critic_activation)));
    if (m.contains("adaptation.bandwidths"))
        c.adaptation.mmd_bandwidths = m.get_double_list("adaptation.bandwidths");
    c.adaptation.g2.start_epoch = m.get_int("adaptation.g2_start_epoch", d.adaptation.g2.start_epoch);
    c.adaptation.g2.end_epoch = m.get_int("adaptation.g2_end_epoch", d.adaptation.g2.end_epoch);
    c.adaptation.g2.min_len = m.get_int("adaptation.g2_min", d.adaptation.g2.min_len);
    c.adaptation.g2.max_len = m.get_int("adaptation.g2_max", d.adaptation.g2.max_len);
    c.adaptation.stop_epoch = m.get_int("adaptation.stop_epoch", d.adaptation.stop_epoch);

    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    return parse_run_config(config::load_config_file(path));
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
    config::save_config_file(serialize_run_config(cfg), path);
}

std::string metrics_header() {
    return "real_step,epoch,eval_return,model_train_loss,model_val_loss,"
           "eps_5,eps_10,eps_20,w1_estimate,l_gp,adaptation_steps,wall_clock_s";
}

std::string metrics_row(const MetricsRecord& r) {
    std::string s;
    s += std::to_string(r.real_step);
    s += ',';
    s += std::to_string(r.epoch);
    s += ',';
    s += config::format_double(r.eval_return);
    s += ',';
    s += config::format_double(r.model_train_loss);
    s += ',';
    s += config::format_double(r.model_val_loss);
    s += ',';
    s += config::format_double(r.eps_5);
    s += ',';
    s += config::format_double(r.eps_10);
    s += ',';
    s += config::format_double(r.eps_20);
    s += ',';
    s += config::format_double(r.w1_estimate);
    s += ',';
    s += config::format_double(r.l_gp);
    s += ',';
    s += std::to_string(r.adaptation_steps);
    s += ',';
    s += config::format_double(r.wall_clock_s);
    return s;
}

std::string resolve_out_dir(const std::string& requested) {
    if (const char* env = std::getenv("DYNALAB_OUT_DIR"); env != nullptr && *env != '\0')
        return env;
    return requested.empty() ? std::string(".") : requested;
}

MeanModel ensemble_mean_model(const dynamics::DynamicsEnsemble& ensemble) {
    const dynamics::DynamicsEnsemble* e = &ensemble;
    return [e](const std::vector<double>& obs, const std::vector<double>& action) {
        if (e->members.empty()) throw UsageError("ensemble-mean prediction needs members");
        std::vector<double> next(obs.size(), 0.0);
        for (const dynamics::SplitNetwork& member : e->members) {
            const dynamics::GaussianHead head = dynamics::predict(member, obs, action);
            for (std::size_t d = 0; d < obs.size(); ++d) next[d] += head.mean[d];
        }
        const double inv = 1.0 / static_cast<double>(e->members.size());
        for (std::size_t d = 0; d < obs.size(); ++d) next[d] = obs[d] + next[d] * inv;
        return next;
    };
}

double compounding_error(const MeanModel& model, const envs::EnvSpec& spec,
                         const envs::EnvState& start,
                         const std::vector<std::vector<double>>& actions) {
    if (actions.empty()) throw UsageError("compounding error needs at least one action");
    envs::EnvState truth = start;
    std::vector<double> pred = start.observation;
    double acc = 0.0;
    for (const std::vector<double>& a : actions) {
        const envs::StepResult sr = envs::step(spec, truth, a);
        truth = sr.next;
        pred = model(pred, a);
        if (static_cast<int>(pred.size()) != spec.obs_dim)
            throw UsageError("model prediction has wrong observation width");
        for (int d = 0; d < spec.obs_dim; ++d) {
            const double diff = pred[static_cast<std::size_t>(d)] -
                                truth.observation[static_cast<std::size_t>(d)];
            acc += diff * diff;
        }
    }
    return acc / static_cast<double>(actions.size());
}

namespace {

struct SacPolicy final : dyna::PolicyInterface {
    const sac::SacAgent* agent;
    explicit SacPolicy(const sac::SacAgent& a) : agent(&a) {}
    std::vector<double> act(const std::vector<double>& s, Rng& rng) override {
        return sac::sample_action(*agent, s, rng);
    }
};

struct Episode {
    envs::EnvState start;
    std::vector<std::vector<double>> actions;
};

double evaluate_policy(const sac::SacAgent& agent, const envs::EnvSpec& spec, int episodes,
                       std::uint64_t seed) {
    double total = 0.0;
    for (int ep = 0; ep < episodes; ++ep) {
        envs::EnvState st = envs::reset(spec, derive_seed(seed, "episode", ep));
        while (true) {
            const envs::StepResult sr = envs::step(spec, st, sac::mean_action(agent, st.observation));
            total += sr.reward;
            st = sr.next;
            if (sr.done) break;
        }
    }
    return total / static_cast<double>(episodes);
}

double probe_eps(const MeanModel& model, const envs::EnvSpec& spec,
                 const std::optional<Episode>& episode, int h) {
    if (!episode || static_cast<int>(episode->actions.size()) < h) return kNan;
    const std::vector<std::vector<double>> prefix(episode->actions.begin(),
                                                  episode->actions.begin() + h);
    return compounding_error(model, spec, episode->start, prefix);
}

std::vector<num::Matrix> snapshot_values(const num::ParamStore& store) {
    std::vector<num::Matrix> out;
    out.reserve(store.size());
    for (const std::string& name : store.names()) out.push_back(store.value(name));
    return out;
}

bool values_bitwise_equal(const num::ParamStore& store, const std::vector<num::Matrix>& snapshot) {
    const std::vector<std::string>& names = store.names();
    if (names.size() != snapshot.size()) return false;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const num::Matrix& a = store.value(names[i]);
        const num::Matrix& b = snapshot[i];
        if (!a.same_shape(b) || a.v != b.v) return false;
    }
    return true;
}

void enforce_strategy_contract(const adapt::AdaptationState& st, adapt::Strategy strategy,
                               const std::vector<num::Matrix>& frozen_real) {
    if (strategy == adapt::Strategy::SharedWeights && &st.real() != &st.sim())
        throw TrainingError("shared_weights contract violated: extractor sides are not aliased");
    if (strategy == adapt::Strategy::FixedReal && !values_bitwise_equal(st.real(), frozen_real))
        throw TrainingError("fixed_real contract violated: the real-side extractor changed");
}

void execute_run(const RunConfig& cfg, std::uint64_t seed,
                 const std::function<void(const MetricsRecord&)>& emit) {
    const envs::EnvSpec spec = envs::make_env_spec(cfg.env, cfg.env_horizon);
    dyna::ReplayBuffer env_buffer(static_cast<std::size_t>(cfg.env_buffer_capacity),
                                  derive_seed(seed, "env_buffer"));
    dyna::ReplayBuffer model_buffer(static_cast<std::size_t>(cfg.model_buffer_capacity),
                                    derive_seed(seed, "model_buffer"));
    dynamics::DynamicsEnsemble ensemble =
        dynamics::make_ensemble(cfg.model, spec.obs_dim, spec.act_dim, derive_seed(seed, "ensemble"));
    sac::SacAgent agent = sac::make_agent(cfg.agent, spec.obs_dim, spec.act_dim, spec.action_low,
                                          spec.action_high, derive_seed(seed, "agent"));
    std::vector<std::optional<adapt::Critic>> critics(ensemble.members.size());

    Rng act_rng = make_rng(seed, "actions");
    Rng rollout_rng = make_rng(seed, "rollouts");
    Rng agent_rng = make_rng(seed, "agent_updates");

    const auto t0 = std::chrono::steady_clock::now();
    const auto elapsed = [&]() {
        if (cfg.deterministic_timing) return 0.0;
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    int episode_index = 0;
    envs::EnvState state = envs::reset(spec, derive_seed(seed, "episode", episode_index));
    Episode current{state, {}};
    std::optional<Episode> last_complete;

    const auto advance = [&](const std::vector<double>& action) {
        const envs::StepResult sr = envs::step(spec, state, action);
        dyna::Transition tr;
        tr.s = state.observation;
        tr.a = action;
        tr.s_next = sr.next.observation;
        tr.r = sr.reward;
        tr.done = false;  // episodes end at the horizon, not in a terminal state
        tr.source = dyna::Transition::Source::Real;
        env_buffer.push(std::move(tr));
        current.actions.push_back(action);
        if (sr.done) {
            last_complete = std::move(current);
            ++episode_index;
            state = envs::reset(spec, derive_seed(seed, "episode", episode_index));
            current = Episode{state, {}};
        } else {
            state = sr.next;
        }
    };

    int train_events = 0;
    double last_train_loss = kNan;
    double last_val_loss = kNan;
    const auto maybe_train_model = [&]() {
        if (static_cast<int>(env_buffer.size()) < cfg.model.min_samples) return;
        const dynamics::TrainReport report = dynamics::train_ensemble(
            ensemble, env_buffer, cfg.model, derive_seed(seed, "model_train", train_events));
        ++train_events;
        last_train_loss = report.mean_train_loss();
        last_val_loss = report.mean_val_loss();
    };

    const MeanModel mean_model = ensemble_mean_model(ensemble);
    int total_adapt_steps = 0;

    // The open-loop probes must describe the same model snapshot as the
    // training losses, so they run right after each training event, before
    // the epoch's adaptation event can displace the extractors.
    struct EpsProbe {
        double e5 = kNan, e10 = kNan, e20 = kNan;
    };
    const auto probe_all = [&]() {
        EpsProbe p;
        p.e5 = probe_eps(mean_model, spec, last_complete, 5);
        p.e10 = probe_eps(mean_model, spec, last_complete, 10);
        p.e20 = probe_eps(mean_model, spec, last_complete, 20);
        return p;
    };

    const auto make_record = [&](int real_step, int epoch, const EpsProbe& eps, double w1,
                                 double lgp) {
        MetricsRecord r;
        r.real_step = real_step;
        r.epoch = epoch;
        r.eval_return = evaluate_policy(agent, spec, cfg.eval_episodes, derive_seed(seed, "eval", epoch));
        r.model_train_loss = last_train_loss;
        r.model_val_loss = last_val_loss;
        r.eps_5 = eps.e5;
        r.eps_10 = eps.e10;
        r.eps_20 = eps.e20;
        r.w1_estimate = w1;
        r.l_gp = lgp;
        r.adaptation_steps = total_adapt_steps;
        r.wall_clock_s = elapsed();
        return r;
    };

    for (int i = 0; i < cfg.pretrain_random_steps; ++i) {
        std::vector<double> a(static_cast<std::size_t>(spec.act_dim));
        for (int d = 0; d < spec.act_dim; ++d) {
            std::uniform_real_distribution<double> u(spec.action_low[static_cast<std::size_t>(d)],
                                                     spec.action_high[static_cast<std::size_t>(d)]);
            a[static_cast<std::size_t>(d)] = u(act_rng);
        }
        advance(a);
    }
    maybe_train_model();
    emit(make_record(cfg.pretrain_random_steps, 0, probe_all(), kNan, kNan));

    std::uint64_t adapt_step_seq = 0;
    for (int step_i = 1; step_i <= cfg.total_real_steps; ++step_i) {
        advance(sac::sample_action(agent, state.observation, act_rng));

        if (step_i % cfg.steps_per_epoch == 0) {
            const int epoch = step_i / cfg.steps_per_epoch;
            maybe_train_model();
            const EpsProbe eps = probe_all();

            const int k = dyna::schedule_eval(cfg.k_schedule, epoch);
            dynamics::EnsembleModel model_adapter(ensemble);
            SacPolicy rollout_policy(agent);
            dyna::branched_rollout(model_adapter, rollout_policy, env_buffer, model_buffer, k,
                                   cfg.rollout_batch, rollout_rng);

            double w1 = kNan;
            double lgp = kNan;
            if (cfg.adaptation_enabled && epoch <= cfg.adaptation.stop_epoch &&
                !model_buffer.empty() && !env_buffer.empty()) {
                const int g2 = dyna::schedule_eval(cfg.adaptation.g2, epoch);
                if (g2 > 0) {
                    double w1_sum = 0.0;
                    double gp_sum = 0.0;
                    int measured = 0;
                    for (std::size_t b = 0; b < ensemble.members.size(); ++b) {
                        dynamics::SplitNetwork& member = ensemble.members[b];
                        adapt::AdaptationState st = adapt::begin_adaptation(
                            member, cfg.adaptation, critics[b] ? &*critics[b] : nullptr,
                            derive_seed(seed, "adapt_init",
                                        static_cast<std::uint64_t>(epoch) * 1024 + b));
                        std::vector<num::Matrix> frozen;
                        if (cfg.adaptation.strategy == adapt::Strategy::FixedReal)
                            frozen = snapshot_values(st.real());
                        adapt::AdaptStepLog log{};
                        for (int u = 0; u < g2; ++u) {
                            log = adapt::adapt_step(st, env_buffer, model_buffer, cfg.adaptation,
                                                    derive_seed(seed, "adapt", adapt_step_seq++));
                        }
                        enforce_strategy_contract(st, cfg.adaptation.strategy, frozen);
                        adapt::finish_adaptation(st, member);
                        critics[b] = std::move(st.critic);
                        total_adapt_steps += g2;
                        if (!log.aborted) {
                            w1_sum += std::fabs(log.l_div);
                            gp_sum += log.l_gp;
                            ++measured;
                        }
                    }
                    if (measured > 0) {
                        w1 = w1_sum / measured;
                        lgp = gp_sum / measured;
                    }
                }
            }
            emit(make_record(cfg.pretrain_random_steps + step_i, epoch, eps, w1, lgp));
        }

        for (int u = 0; u < cfg.policy_updates_per_step; ++u) {
            const std::vector<dyna::Transition> batch_t =
                model_buffer.empty()
                    ? env_buffer.sample(static_cast<std::size_t>(cfg.agent.batch_size))
                    : dyna::sample_mixed(env_buffer, model_buffer,
                                         static_cast<std::size_t>(cfg.agent.batch_size),
                                         cfg.real_ratio);
            sac::update(agent, sac::make_batch(batch_t), agent_rng);
        }
    }
}

std::string classify_error(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
    if (dynamic_cast<const UsageError*>(&e)) return "usage_error";
    if (dynamic_cast<const InputError*>(&e)) return "input_error";
    if (dynamic_cast<const NumericalError*>(&e)) return "numerical_error";
    if (dynamic_cast<const TrainingError*>(&e)) return "training_error";
    return "error";
}

}  // namespace

RunResult run_seed(const RunConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
    cfg.validate();
    const std::string dir = resolve_out_dir(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);

    RunResult res;
    res.seed = seed;
    res.csv_path =
        (std::filesystem::path(dir) / (cfg.out_name + "_seed" + std::to_string(seed) + ".csv"))
            .string();
    std::ofstream out(res.csv_path);
    if (!out) throw InputError("cannot open metrics file for writing: " + res.csv_path);
    out << metrics_header() << '\n' << std::flush;

    try {
        execute_run(cfg, seed, [&](const MetricsRecord& r) {
            res.records.push_back(r);
            out << metrics_row(r) << '\n' << std::flush;
        });
    } catch (const std::exception& e) {
        res.error = classify_error(e) + ": " + e.what();
        out << "# error: " << res.error << '\n' << std::flush;
    }
    return res;
}

std::vector<RunResult> run(const RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    std::vector<RunResult> results;
    results.reserve(cfg.seeds.size());
    for (const std::uint64_t seed : cfg.seeds) results.push_back(run_seed(cfg, seed, out_dir));
    return results;
}

std::vector<SweepCell> sweep(const RunConfig& base, const std::string& axis,
                             const std::vector<std::string>& values, const std::string& out_dir) {
    base.validate();
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    const config::ConfigMap base_map = serialize_run_config(base);
    if (!base_map.contains(axis)) {
        std::string valid;
        for (const std::string& k : base_map.keys()) {
            if (!valid.empty()) valid += ", ";
            valid += k;
        }
        throw ConfigError("unknown sweep axis '" + axis + "'; valid axes: " + valid);
    }

    // Parse and validate every cell's config before running anything.
    std::vector<RunConfig> cell_configs;
    cell_configs.reserve(values.size());
    for (const std::string& value : values) {
        config::ConfigMap cell_map = base_map;
        cell_map.set(axis, value);
        RunConfig cell_cfg = parse_run_config(cell_map);
        cell_cfg.out_name = base.out_name + "_" + sanitize_tag(axis) + "-" + sanitize_tag(value);
        cell_configs.push_back(std::move(cell_cfg));
    }

    const std::string dir = resolve_out_dir(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    const std::string manifest_path =
        (std::filesystem::path(dir) / (base.out_name + "_manifest.csv")).string();
    std::ofstream manifest(manifest_path);
    if (!manifest) throw InputError("cannot open sweep manifest for writing: " + manifest_path);
    manifest << "axis,value,seed,csv_path,status,error\n" << std::flush;

    std::vector<SweepCell> cells;
    for (std::size_t v = 0; v < values.size(); ++v) {
        for (const std::uint64_t seed : cell_configs[v].seeds) {
            const RunResult res = run_seed(cell_configs[v], seed, out_dir);
            SweepCell cell;
            cell.axis = axis;
            cell.value = values[v];
            cell.seed = seed;
            cell.csv_path = res.csv_path;
            cell.error = res.error;
            std::string manifest_error = cell.error;
            for (char& ch : manifest_error)
                if (ch == ',' || ch == '\n') ch = ';';
            manifest << sanitize_tag(axis) << ',' << sanitize_tag(values[v]) << ',' << seed << ','
                     << res.csv_path << ',' << (cell.error.empty() ? "ok" : "error") << ','
                     << manifest_error << '\n'
                     << std::flush;
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

}  // namespace dynalab::harness
