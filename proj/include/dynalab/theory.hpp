#pragma once

#include <vector>

#include "dynalab/rng.hpp"

namespace dynalab::theory {

// Finite MDP with dense transition tensor T[s][a][s'], reward table r[s][a],
// discount gamma, initial distribution mu0. Small enough that occupancy
// measures and value functions are exact linear algebra.
struct TabularMDP {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> transition;  // s*A*S + a*S + s'
    std::vector<double> reward;      // s*A + a
    double gamma = 0.9;
    std::vector<double> init_dist;

    double t(int s, int a, int s2) const {
        return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
    }
    double& t(int s, int a, int s2) {
        return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
    }
    double r(int s, int a) const { return reward[static_cast<std::size_t>(s) * n_actions + a]; }
    double& r(int s, int a) { return reward[static_cast<std::size_t>(s) * n_actions + a]; }

    double max_abs_reward() const;
    void validate() const;  // throws ConfigError
};

struct TabularPolicy {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> probs;  // s*A + a

    double p(int s, int a) const { return probs[static_cast<std::size_t>(s) * n_actions + a]; }
    double& p(int s, int a) { return probs[static_cast<std::size_t>(s) * n_actions + a]; }

    void validate() const;
};

struct Occupancy {
    std::vector<double> state;         // nu, normalized discounted state visitation
    std::vector<double> state_action;  // rho[s][a] = nu[s] * pi(a|s)
};

// Solves (I - gamma P_pi^T) nu = (1-gamma) mu0.
Occupancy occupancy(const TabularMDP& mdp, const TabularPolicy& pi);

// Unnormalized value function: (I - gamma P_pi) V = r_pi.
std::vector<double> policy_value(const TabularMDP& mdp, const TabularPolicy& pi);

// Normalized expected return sum_{s,a} rho[s][a] r[s][a]
// (equals (1-gamma) mu0' V).
double expected_return(const TabularMDP& mdp, const TabularPolicy& pi);

// Half L1 between same-shaped distributions.
double tv_distance(const std::vector<double>& p, const std::vector<double>& q);

// KL(p || q) over one row; +inf where p > 0 meets q = 0.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

inline constexpr double kBoundSlack = 1e-9;

// Per-state decomposition check: the gap between the real-data state visit
// distribution and the model one is covered by an occupancy IPM plus the
// model's per-state prediction error. The witness class for state s' is the
// sup-norm ball of radius c_{s'} = max_{s,a} model.t(s,a,s'), the smallest
// one containing the model's prediction function for s'; its IPM is
// 2 c_{s'} TV.
struct LemmaStateReport {
    double lhs = 0;             // |nu_true^{pi_D}(s') - nu_model^{pi}(s')|
    double ipm_term = 0;        // gamma * 2 c_{s'} * TV(rho_true^{pi_D}, rho_model^{pi})
    double model_err_term = 0;  // gamma * E_rho |T - That|(s')
    double slack = 0;           // rhs - lhs
    bool holds = false;
};

struct LemmaReport {
    std::vector<LemmaStateReport> states;
    double min_slack = 0;
    bool all_hold = false;
};

LemmaReport lemma1_check(const TabularMDP& mdp_true, const TabularMDP& mdp_model,
                         const TabularPolicy& pi, const TabularPolicy& pi_D);

// Return-gap lower bound: eta >= eta_hat - R*eps_pi - gamma R d_F Vol(S)
// - gamma R E sqrt(2 KL), with eps_pi = 2 TV(nu^pi, nu^{pi_D}) on the true
// dynamics, d_F = 2 (max That) TV(rho_true^{pi_D}, rho_model^{pi}), and
// Vol(S) = n_states.
struct BoundReport {
    double lhs = 0;      // eta[pi] on the true MDP
    double eta_hat = 0;  // eta[pi] on the model
    double policy_shift_term = 0;  // R * eps_pi
    double ipm_term = 0;           // gamma R d_F Vol(S)
    double kl_term = 0;            // gamma R E sqrt(2 KL)
    bool kl_infinite = false;      // KL undefined somewhere: bound vacuous
    double slack = 0;              // lhs - (eta_hat - penalties)
    bool holds = false;
};

BoundReport theorem1_check(const TabularMDP& mdp_true, const TabularMDP& mdp_model,
                           const TabularPolicy& pi, const TabularPolicy& pi_D);

// Telescoping identity eta_hat - eta = gamma E_{rho_model}[G], with
// G(s,a) = E_{That}[V] - E_T[V] and V the true value function of pi, plus
// the companion bound with witness classes F1 (sup-norm ball of radius
// max|G|) and F2 (radius ||V||_inf).
struct AppendixEReport {
    double eta = 0;
    double eta_hat = 0;
    double identity_residual = 0;
    double max_abs_g = 0;
    double f1_term = 0;  // gamma * 2 max|G| * TV(rho_true, rho_model)
    double f2_term = 0;  // gamma * E_rho_true[ 2 ||V||_inf TV(That, T) ]
    double slack = 0;
    bool holds = false;
};

AppendixEReport appendixE_check(const TabularMDP& mdp_true, const TabularMDP& mdp_model,
                                const TabularPolicy& pi);

// Instance generators for the randomized suites: Dirichlet(1) transition
// rows, rewards uniform in [-1, 1]; the model is the true tensor with
// Dirichlet noise of weight eps folded in and rows renormalized.
TabularMDP random_mdp(int n_states, int n_actions, double gamma, Rng& rng);
TabularMDP perturb_mdp(const TabularMDP& base, double eps, Rng& rng);
TabularPolicy random_policy(int n_states, int n_actions, Rng& rng);

// Randomized numerical verification of all three bound families. Each
// instance draws 2-10 states, 1-4 actions, a discount from {0.5, 0.9, 0.99}
// and a model-error weight from {0, 0.05, 0.3}, then checks the per-state
// decomposition, the return-gap lower bound and the telescoping identity
// with its companion bound on the same instance.
struct SweepSummary {
    int instances_per_family = 0;
    int lemma_violations = 0;
    int theorem_violations = 0;
    int identity_violations = 0;  // telescoping residual above kBoundSlack
    int companion_violations = 0;
    int theorem_vacuous = 0;  // infinite KL term: bound holds trivially
    double min_lemma_slack = 0.0;
    double min_theorem_slack = 0.0;  // over non-vacuous instances
    double min_companion_slack = 0.0;
    double max_identity_residual = 0.0;

    bool all_hold() const {
        return lemma_violations == 0 && theorem_violations == 0 && identity_violations == 0 &&
               companion_violations == 0;
    }
};

SweepSummary verification_sweep(int instances_per_family, std::uint64_t master_seed);

}  // namespace dynalab::theory
