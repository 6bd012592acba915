#pragma once

#include <cstdint>
#include <vector>

#include "dynalab/dyna.hpp"
#include "dynalab/net.hpp"
#include "dynalab/rng.hpp"

// Soft actor-critic for continuous control: a squashed-Gaussian policy with
// exact log-density, twin Q networks with slowly tracking target copies, and
// a learned temperature tuned toward a fixed entropy target.
namespace dynalab::sac {

using num::Matrix;

struct SacConfig {
    std::vector<int> hidden = {64, 64};
    num::Act activation = num::Act::Relu;
    double learning_rate = 3e-4;
    double gamma = 0.99;
    double tau = 0.005;             // target-network tracking rate
    int batch_size = 64;
    double initial_temperature = 1.0;
    double target_entropy_scale = 1.0;  // entropy target is -scale * act_dim
    double log_std_min = -20.0;
    double log_std_max = 2.0;

    void validate() const;
};

struct PolicyNetwork {
    num::MlpSpec spec;  // obs -> 2*act_dim columns: [mean | raw log-std]
    num::ParamStore params;
};

struct QNetwork {
    num::MlpSpec spec;  // (obs, act) -> scalar value
    num::ParamStore params;
};

struct SacAgent {
    SacConfig cfg;
    int obs_dim = 0;
    int act_dim = 0;
    std::vector<double> action_low;
    std::vector<double> action_high;
    PolicyNetwork policy;
    QNetwork q1, q2;
    QNetwork q1_target, q2_target;
    num::ParamStore temperature;  // single 1x1 entry "log_alpha"

    double alpha() const;
    double target_entropy() const;
};

SacAgent make_agent(const SacConfig& cfg, int obs_dim, int act_dim,
                    const std::vector<double>& action_low,
                    const std::vector<double>& action_high, std::uint64_t seed);

// --- acting ---

// Stochastic action for data collection: squash(mean + std * eps).
std::vector<double> sample_action(const SacAgent& agent, const std::vector<double>& obs,
                                  Rng& rng);

// Deterministic action for evaluation: squash(mean).
std::vector<double> mean_action(const SacAgent& agent, const std::vector<double>& obs);

// Exact log-density of `action` under the current policy (change of
// variables through the tanh squash and the bound rescaling). The action
// must lie strictly inside the bounds.
double action_log_density(const SacAgent& agent, const std::vector<double>& obs,
                          const std::vector<double>& action);

// --- batched pieces, exposed so each can be verified in isolation ---

struct HeadsEval {
    Matrix mean;     // batch x act_dim, pre-squash
    Matrix log_std;  // batch x act_dim, rescaled into [log_std_min, log_std_max]
};
HeadsEval policy_heads(const SacAgent& agent, const Matrix& obs);

struct ActionDraw {
    Matrix actions;              // batch x act_dim, inside bounds
    std::vector<double> log_pi;  // exact log-density of each row
};
ActionDraw draw_actions(const SacAgent& agent, const Matrix& obs, Rng& rng);

struct Batch {
    Matrix obs;
    Matrix act;
    Matrix next_obs;
    std::vector<double> rew;
    std::vector<double> done;  // 1.0 at terminal transitions, else 0.0
};
Batch make_batch(const std::vector<dyna::Transition>& transitions);

// Soft Bellman targets y = r + gamma (1-done) (min_i Q'_i(s',a') - alpha log pi(a'|s'))
// for the given draw of next actions.
std::vector<double> q_targets(const SacAgent& agent, const Batch& batch,
                              const ActionDraw& next_draw);

struct LossGrads {
    double value = 0.0;
    num::NamedGrads grads;
};
// Mean squared Bellman error of one Q network against fixed targets.
LossGrads q_loss_grads(const QNetwork& q, const Matrix& obs, const Matrix& act,
                       const std::vector<double>& targets);

struct PolicyLossResult {
    double value = 0.0;        // mean(alpha log pi - min_i Q_i)
    double mean_log_pi = 0.0;  // entropy estimate for the temperature update
    num::NamedGrads grads;     // w.r.t. policy parameters only
};
// Reparameterized policy loss with the given standard-normal draws
// (batch x act_dim); the Q networks are differentiated through their action
// input but their parameters receive no update from this loss.
PolicyLossResult policy_loss_grads(const SacAgent& agent, const Matrix& obs, const Matrix& eps);

// --- updates ---

struct QUpdateLog {
    double q1_loss = 0.0;
    double q2_loss = 0.0;
};
QUpdateLog q_update(SacAgent& agent, const Batch& batch, Rng& rng);

struct PolicyUpdateLog {
    double loss = 0.0;
    double mean_log_pi = 0.0;
};
PolicyUpdateLog policy_update(SacAgent& agent, const Batch& batch, Rng& rng);

// Moves log_alpha one step toward matching the entropy target; returns the
// updated temperature.
double temperature_update(SacAgent& agent, double mean_log_pi);

// target <- (1-tau) target + tau online, for both Q targets.
void polyak_update(SacAgent& agent, double tau);

struct UpdateLog {
    double q1_loss = 0.0;
    double q2_loss = 0.0;
    double policy_loss = 0.0;
    double mean_log_pi = 0.0;
    double alpha = 0.0;
};
// One full agent step: Q regression, policy ascent, temperature step, target
// tracking at cfg.tau.
UpdateLog update(SacAgent& agent, const Batch& batch, Rng& rng);

}  // namespace dynalab::sac
