#include "dynalab/sac.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "dynalab/errors.hpp"
#include "dynalab/tape.hpp"

namespace dynalab::sac {

namespace {

constexpr double kLogTwoPi = 1.8378770664093453;
constexpr double kLogTwo = 0.6931471805599453;

double softplus(double x) {
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

// log(1 - tanh(u)^2), stable for any u
double log_one_minus_tanh_sq(double u) { return 2.0 * (kLogTwo - u - softplus(-2.0 * u)); }

num::MlpSpec policy_spec(const SacConfig& cfg, int obs_dim, int act_dim) {
    std::vector<int> sizes;
    sizes.push_back(obs_dim);
    for (int h : cfg.hidden) sizes.push_back(h);
    sizes.push_back(2 * act_dim);
    return num::MlpSpec::uniform(sizes, cfg.activation);
}

num::MlpSpec q_spec(const SacConfig& cfg, int obs_dim, int act_dim) {
    std::vector<int> sizes;
    sizes.push_back(obs_dim + act_dim);
    for (int h : cfg.hidden) sizes.push_back(h);
    sizes.push_back(1);
    return num::MlpSpec::uniform(sizes, cfg.activation);
}

Matrix join_obs_act(const Matrix& obs, const Matrix& act) {
    if (obs.rows != act.rows) throw UsageError("observation and action batches differ in size");
    Matrix sa(obs.rows, obs.cols + act.cols);
    for (int i = 0; i < obs.rows; ++i) {
        for (int j = 0; j < obs.cols; ++j) sa(i, j) = obs(i, j);
        for (int j = 0; j < act.cols; ++j) sa(i, obs.cols + j) = act(i, j);
    }
    return sa;
}

void check_obs(const SacAgent& agent, const Matrix& obs) {
    if (obs.cols != agent.obs_dim)
        throw UsageError("observation batch has width " + std::to_string(obs.cols) +
                         ", agent expects " + std::to_string(agent.obs_dim));
    if (obs.rows < 1) throw UsageError("empty observation batch");
}

}  // namespace

void SacConfig::validate() const {
    if (hidden.empty()) throw ConfigError("agent networks need at least one hidden layer");
    for (int h : hidden)
        if (h < 1) throw ConfigError("hidden layer sizes must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(initial_temperature > 0.0)) throw ConfigError("initial_temperature must be positive");
    if (!(log_std_min < log_std_max)) throw ConfigError("log_std_min must be below log_std_max");
    if (!std::isfinite(target_entropy_scale))
        throw ConfigError("target_entropy_scale must be finite");
}

double SacAgent::alpha() const { return std::exp(temperature.value("log_alpha")(0, 0)); }

double SacAgent::target_entropy() const {
    return -cfg.target_entropy_scale * static_cast<double>(act_dim);
}

SacAgent make_agent(const SacConfig& cfg, int obs_dim, int act_dim,
                    const std::vector<double>& action_low,
                    const std::vector<double>& action_high, std::uint64_t seed) {
    cfg.validate();
    if (obs_dim < 1 || act_dim < 1) throw UsageError("agent needs positive dimensions");
    if (static_cast<int>(action_low.size()) != act_dim ||
        static_cast<int>(action_high.size()) != act_dim)
        throw UsageError("action bounds must have one entry per action dimension");
    for (int d = 0; d < act_dim; ++d) {
        if (!std::isfinite(action_low[d]) || !std::isfinite(action_high[d]) ||
            !(action_low[d] < action_high[d]))
            throw UsageError("action bounds must be finite with low < high");
    }

    SacAgent agent;
    agent.cfg = cfg;
    agent.obs_dim = obs_dim;
    agent.act_dim = act_dim;
    agent.action_low = action_low;
    agent.action_high = action_high;

    agent.policy.spec = policy_spec(cfg, obs_dim, act_dim);
    Rng pr = make_rng(seed, "policy_init");
    num::init_mlp(agent.policy.params, agent.policy.spec, pr);

    agent.q1.spec = q_spec(cfg, obs_dim, act_dim);
    agent.q2.spec = agent.q1.spec;
    Rng q1r = make_rng(seed, "q1_init");
    Rng q2r = make_rng(seed, "q2_init");
    num::init_mlp(agent.q1.params, agent.q1.spec, q1r);
    num::init_mlp(agent.q2.params, agent.q2.spec, q2r);
    agent.q1_target = agent.q1;
    agent.q2_target = agent.q2;

    agent.temperature.insert("log_alpha", Matrix(1, 1, {std::log(cfg.initial_temperature)}));
    return agent;
}

HeadsEval policy_heads(const SacAgent& agent, const Matrix& obs) {
    check_obs(agent, obs);
    const Matrix out = num::mlp_eval(agent.policy.spec, agent.policy.params, obs);
    HeadsEval h;
    h.mean = Matrix(obs.rows, agent.act_dim);
    h.log_std = Matrix(obs.rows, agent.act_dim);
    const double lo = agent.cfg.log_std_min;
    const double hi = agent.cfg.log_std_max;
    for (int i = 0; i < obs.rows; ++i) {
        for (int j = 0; j < agent.act_dim; ++j) {
            h.mean(i, j) = out(i, j);
            const double raw = out(i, agent.act_dim + j);
            h.log_std(i, j) = lo + 0.5 * (hi - lo) * (std::tanh(raw) + 1.0);
        }
    }
    return h;
}

ActionDraw draw_actions(const SacAgent& agent, const Matrix& obs, Rng& rng) {
    const HeadsEval h = policy_heads(agent, obs);
    std::normal_distribution<double> nd(0.0, 1.0);
    ActionDraw d;
    d.actions = Matrix(obs.rows, agent.act_dim);
    d.log_pi.assign(static_cast<std::size_t>(obs.rows), 0.0);
    for (int i = 0; i < obs.rows; ++i) {  // draws consumed row-major
        double lp = 0.0;
        for (int j = 0; j < agent.act_dim; ++j) {
            const double eps = nd(rng);
            const double log_std = h.log_std(i, j);
            const double u = h.mean(i, j) + std::exp(log_std) * eps;
            const double half = 0.5 * (agent.action_high[j] - agent.action_low[j]);
            const double center = 0.5 * (agent.action_high[j] + agent.action_low[j]);
            d.actions(i, j) = center + half * std::tanh(u);
            lp += -0.5 * eps * eps - log_std - 0.5 * kLogTwoPi;  // base density
            lp -= std::log(half) + log_one_minus_tanh_sq(u);     // squash volume change
        }
        d.log_pi[static_cast<std::size_t>(i)] = lp;
    }
    return d;
}

std::vector<double> sample_action(const SacAgent& agent, const std::vector<double>& obs,
                                  Rng& rng) {
    Matrix row(1, static_cast<int>(obs.size()));
    for (std::size_t j = 0; j < obs.size(); ++j) row(0, static_cast<int>(j)) = obs[j];
    const ActionDraw d = draw_actions(agent, row, rng);
    return d.actions.v;
}

std::vector<double> mean_action(const SacAgent& agent, const std::vector<double>& obs) {
    Matrix row(1, static_cast<int>(obs.size()));
    for (std::size_t j = 0; j < obs.size(); ++j) row(0, static_cast<int>(j)) = obs[j];
    const HeadsEval h = policy_heads(agent, row);
    std::vector<double> a(static_cast<std::size_t>(agent.act_dim));
    for (int j = 0; j < agent.act_dim; ++j) {
        const double half = 0.5 * (agent.action_high[j] - agent.action_low[j]);
        const double center = 0.5 * (agent.action_high[j] + agent.action_low[j]);
        a[static_cast<std::size_t>(j)] = center + half * std::tanh(h.mean(0, j));
    }
    return a;
}

double action_log_density(const SacAgent& agent, const std::vector<double>& obs,
                          const std::vector<double>& action) {
    if (static_cast<int>(action.size()) != agent.act_dim)
        throw UsageError("action has the wrong dimension");
    Matrix row(1, static_cast<int>(obs.size()));
    for (std::size_t j = 0; j < obs.size(); ++j) row(0, static_cast<int>(j)) = obs[j];
    const HeadsEval h = policy_heads(agent, row);
    double lp = 0.0;
    for (int j = 0; j < agent.act_dim; ++j) {
        const double half = 0.5 * (agent.action_high[j] - agent.action_low[j]);
        const double center = 0.5 * (agent.action_high[j] + agent.action_low[j]);
        const double x = (action[static_cast<std::size_t>(j)] - center) / half;
        if (!(std::fabs(x) < 1.0))
            throw UsageError("action lies on or outside the bounds; density undefined");
        const double u = 0.5 * std::log((1.0 + x) / (1.0 - x));
        const double log_std = h.log_std(0, j);
        const double z = (u - h.mean(0, j)) / std::exp(log_std);
        lp += -0.5 * z * z - log_std - 0.5 * kLogTwoPi;
        lp -= std::log(half) + log_one_minus_tanh_sq(u);
    }
    return lp;
}

Batch make_batch(const std::vector<dyna::Transition>& transitions) {
    if (transitions.empty()) throw UsageError("cannot build a batch from zero transitions");
    const int n = static_cast<int>(transitions.size());
    const int obs_dim = static_cast<int>(transitions[0].s.size());
    const int act_dim = static_cast<int>(transitions[0].a.size());
    Batch b;
    b.obs = Matrix(n, obs_dim);
    b.act = Matrix(n, act_dim);
    b.next_obs = Matrix(n, obs_dim);
    b.rew.assign(static_cast<std::size_t>(n), 0.0);
    b.done.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const dyna::Transition& t = transitions[static_cast<std::size_t>(i)];
        if (static_cast<int>(t.s.size()) != obs_dim || static_cast<int>(t.a.size()) != act_dim ||
            static_cast<int>(t.s_next.size()) != obs_dim)
            throw UsageError("transitions in one batch must share dimensions");
        for (int j = 0; j < obs_dim; ++j) {
            b.obs(i, j) = t.s[static_cast<std::size_t>(j)];
            b.next_obs(i, j) = t.s_next[static_cast<std::size_t>(j)];
        }
        for (int j = 0; j < act_dim; ++j) b.act(i, j) = t.a[static_cast<std::size_t>(j)];
        b.rew[static_cast<std::size_t>(i)] = t.r;
        b.done[static_cast<std::size_t>(i)] = t.done ? 1.0 : 0.0;
    }
    return b;
}

std::vector<double> q_targets(const SacAgent& agent, const Batch& batch,
                              const ActionDraw& next_draw) {
    const int n = batch.obs.rows;
    if (next_draw.actions.rows != n || static_cast<int>(next_draw.log_pi.size()) != n)
        throw UsageError("next-action draw does not match the batch size");
    const Matrix sa = join_obs_act(batch.next_obs, next_draw.actions);
    const Matrix t1 = num::mlp_eval(agent.q1_target.spec, agent.q1_target.params, sa);
    const Matrix t2 = num::mlp_eval(agent.q2_target.spec, agent.q2_target.params, sa);
    const double a = agent.alpha();
    std::vector<double> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double qmin = std::min(t1(i, 0), t2(i, 0));
        const double soft = qmin - a * next_draw.log_pi[static_cast<std::size_t>(i)];
        y[static_cast<std::size_t>(i)] =
            batch.rew[static_cast<std::size_t>(i)] +
            agent.cfg.gamma * (1.0 - batch.done[static_cast<std::size_t>(i)]) * soft;
    }
    return y;
}

LossGrads q_loss_grads(const QNetwork& q, const Matrix& obs, const Matrix& act,
                       const std::vector<double>& targets) {
    if (static_cast<int>(targets.size()) != obs.rows)
        throw UsageError("one target per batch row required");
    thread_local num::Tape tape;
    tape.reset();
    const Matrix sa = join_obs_act(obs, act);
    Matrix ycol(obs.rows, 1);
    for (int i = 0; i < obs.rows; ++i) ycol(i, 0) = targets[static_cast<std::size_t>(i)];

    std::vector<std::pair<std::string, int>> leaves;
    const int x = tape.constant(sa);
    const int pred = num::mlp_forward(tape, q.spec, q.params, x, leaves);
    const int diff = tape.sub(pred, tape.constant(ycol));
    const int loss = tape.mean_all(tape.mul(diff, diff));
    tape.backward(loss);

    LossGrads out;
    out.value = tape.scalar(loss);
    out.grads = num::collect_grads(tape, leaves, q.params);
    return out;
}

PolicyLossResult policy_loss_grads(const SacAgent& agent, const Matrix& obs, const Matrix& eps) {
    check_obs(agent, obs);
    if (eps.rows != obs.rows || eps.cols != agent.act_dim)
        throw UsageError("noise draws must be one row per observation, one column per action");
    const int n = obs.rows;
    const int ad = agent.act_dim;
    const double lo = agent.cfg.log_std_min;
    const double hi = agent.cfg.log_std_max;

    thread_local num::Tape tape;
    tape.reset();
    std::vector<std::pair<std::string, int>> policy_leaves;
    const int x = tape.constant(obs);
    const int heads = num::mlp_forward(tape, agent.policy.spec, agent.policy.params, x,
                                       policy_leaves);
    const int mean = tape.slice_cols(heads, 0, ad);
    const int raw = tape.slice_cols(heads, ad, 2 * ad);
    // rescale raw head into [lo, hi]
    const int log_std =
        tape.add_scalar(tape.scale(tape.add_scalar(tape.tanh(raw), 1.0), 0.5 * (hi - lo)), lo);
    const int std_node = tape.exp(log_std);
    const int u = tape.add(mean, tape.mul(std_node, tape.constant(eps)));

    // Gaussian log-density of u under (mean, std)
    const int z = tape.div(tape.sub(u, mean), std_node);
    int log_pi = tape.add_scalar(tape.sub(tape.scale(tape.mul(z, z), -0.5), log_std),
                                 -0.5 * kLogTwoPi);
    // change of variables through center + half * tanh(u)
    const int omt =
        tape.scale(tape.add_scalar(tape.add(tape.scale(u, -1.0),
                                            tape.scale(tape.softplus(tape.scale(u, -2.0)), -1.0)),
                                   kLogTwo),
                   2.0);
    Matrix log_half_row(1, ad), half_row(1, ad), center_row(1, ad);
    for (int j = 0; j < ad; ++j) {
        const double half = 0.5 * (agent.action_high[j] - agent.action_low[j]);
        half_row(0, j) = half;
        log_half_row(0, j) = std::log(half);
        center_row(0, j) = 0.5 * (agent.action_high[j] + agent.action_low[j]);
    }
    log_pi = tape.sub(log_pi, tape.add(omt, tape.broadcast_rows(tape.constant(log_half_row), n)));
    const int log_pi_col = tape.sum_cols(log_pi);

    const int actions = tape.add(tape.mul(tape.tanh(u), tape.broadcast_rows(tape.constant(half_row), n)),
                                 tape.broadcast_rows(tape.constant(center_row), n));
    const int sa = tape.hcat(x, actions);
    std::vector<std::pair<std::string, int>> q1_leaves, q2_leaves;
    const int q1o = num::mlp_forward(tape, agent.q1.spec, agent.q1.params, sa, q1_leaves);
    const int q2o = num::mlp_forward(tape, agent.q2.spec, agent.q2.params, sa, q2_leaves);
    const int qmin = tape.minimum(q1o, q2o);

    const int loss = tape.mean_all(tape.sub(tape.scale(log_pi_col, agent.alpha()), qmin));
    const int mean_lp = tape.mean_all(log_pi_col);
    tape.backward(loss);

    PolicyLossResult out;
    out.value = tape.scalar(loss);
    out.mean_log_pi = tape.scalar(mean_lp);
    out.grads = num::collect_grads(tape, policy_leaves, agent.policy.params);
    return out;
}

QUpdateLog q_update(SacAgent& agent, const Batch& batch, Rng& rng) {
    const ActionDraw next_draw = draw_actions(agent, batch.next_obs, rng);
    const std::vector<double> y = q_targets(agent, batch, next_draw);
    QUpdateLog log;
    const LossGrads l1 = q_loss_grads(agent.q1, batch.obs, batch.act, y);
    num::adam_step(agent.q1.params, l1.grads, agent.cfg.learning_rate);
    const LossGrads l2 = q_loss_grads(agent.q2, batch.obs, batch.act, y);
    num::adam_step(agent.q2.params, l2.grads, agent.cfg.learning_rate);
    log.q1_loss = l1.value;
    log.q2_loss = l2.value;
    return log;
}

PolicyUpdateLog policy_update(SacAgent& agent, const Batch& batch, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix eps(batch.obs.rows, agent.act_dim);
    for (int i = 0; i < eps.rows; ++i)  // row-major, matching draw_actions
        for (int j = 0; j < eps.cols; ++j) eps(i, j) = nd(rng);
    const PolicyLossResult r = policy_loss_grads(agent, batch.obs, eps);
    num::adam_step(agent.policy.params, r.grads, agent.cfg.learning_rate);
    return {r.value, r.mean_log_pi};
}

double temperature_update(SacAgent& agent, double mean_log_pi) {
    // d/dlog_alpha of -log_alpha * (mean_log_pi + target_entropy)
    num::NamedGrads g;
    g.emplace_back("log_alpha", Matrix(1, 1, {-(mean_log_pi + agent.target_entropy())}));
    num::adam_step(agent.temperature, g, agent.cfg.learning_rate);
    return agent.alpha();
}

void polyak_update(SacAgent& agent, double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw UsageError("tau must lie in (0, 1]");
    auto track = [tau](num::ParamStore& target, const num::ParamStore& online) {
        for (const std::string& name : target.names()) {
            Matrix& tv = target.value(name);
            const Matrix& ov = online.value(name);
            for (std::size_t i = 0; i < tv.size(); ++i)
                tv.v[i] = (1.0 - tau) * tv.v[i] + tau * ov.v[i];
        }
    };
    track(agent.q1_target.params, agent.q1.params);
    track(agent.q2_target.params, agent.q2.params);
}

UpdateLog update(SacAgent& agent, const Batch& batch, Rng& rng) {
    UpdateLog log;
    const QUpdateLog ql = q_update(agent, batch, rng);
    const PolicyUpdateLog pl = policy_update(agent, batch, rng);
    log.q1_loss = ql.q1_loss;
    log.q2_loss = ql.q2_loss;
    log.policy_loss = pl.loss;
    log.mean_log_pi = pl.mean_log_pi;
    log.alpha = temperature_update(agent, pl.mean_log_pi);
    polyak_update(agent, agent.cfg.tau);
    return log;
}

}  // namespace dynalab::sac
