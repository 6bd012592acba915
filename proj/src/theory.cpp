#include "dynalab/theory.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "dynalab/errors.hpp"

namespace dynalab::theory {

namespace {

constexpr double kRowTol = 1e-12;

Eigen::MatrixXd policy_transition(const TabularMDP& mdp, const TabularPolicy& pi) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) {
            const double pa = pi.p(s, a);
            if (pa == 0.0) continue;
            for (int s2 = 0; s2 < mdp.n_states; ++s2) P(s, s2) += pa * mdp.t(s, a, s2);
        }
    return P;
}

void check_compatible(const TabularMDP& a, const TabularMDP& b) {
    a.validate();
    b.validate();
    if (a.n_states != b.n_states || a.n_actions != b.n_actions)
        throw UsageError("MDPs disagree on state or action space size");
    if (a.gamma != b.gamma) throw UsageError("MDPs disagree on the discount");
    for (int s = 0; s < a.n_states; ++s)
        if (std::fabs(a.init_dist[s] - b.init_dist[s]) > kRowTol)
            throw UsageError("MDPs disagree on the initial distribution");
    for (std::size_t i = 0; i < a.reward.size(); ++i)
        if (a.reward[i] != b.reward[i])
            throw UsageError("MDPs disagree on the reward table; the return-gap bounds assume a shared reward");
}

void check_policy(const TabularMDP& mdp, const TabularPolicy& pi) {
    pi.validate();
    if (pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions)
        throw UsageError("policy shape does not match the MDP");
}

}  // namespace

double TabularMDP::max_abs_reward() const {
    double m = 0;
    for (double x : reward) m = std::max(m, std::fabs(x));
    return m;
}

void TabularMDP::validate() const {
    if (n_states < 1 || n_actions < 1) throw ConfigError("MDP needs at least one state and action");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
    if (transition.size() != static_cast<std::size_t>(n_states) * n_actions * n_states ||
        reward.size() != static_cast<std::size_t>(n_states) * n_actions ||
        init_dist.size() != static_cast<std::size_t>(n_states))
        throw ConfigError("MDP table sizes disagree with n_states/n_actions");
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_actions; ++a) {
            double sum = 0;
            for (int s2 = 0; s2 < n_states; ++s2) {
                const double p = t(s, a, s2);
                if (p < 0) throw ConfigError("negative transition probability");
                sum += p;
            }
            if (std::fabs(sum - 1.0) > kRowTol)
                throw ConfigError("transition row (" + std::to_string(s) + "," + std::to_string(a) +
                                  ") sums to " + std::to_string(sum));
        }
    double mu = 0;
    for (double p : init_dist) {
        if (p < 0) throw ConfigError("negative initial probability");
        mu += p;
    }
    if (std::fabs(mu - 1.0) > kRowTol) throw ConfigError("initial distribution does not sum to 1");
    for (double x : reward)
        if (!std::isfinite(x)) throw ConfigError("non-finite reward");
}

void TabularPolicy::validate() const {
    if (n_states < 1 || n_actions < 1) throw ConfigError("policy needs at least one state and action");
    if (probs.size() != static_cast<std::size_t>(n_states) * n_actions)
        throw ConfigError("policy table size mismatch");
    for (int s = 0; s < n_states; ++s) {
        double sum = 0;
        for (int a = 0; a < n_actions; ++a) {
            if (p(s, a) < 0) throw ConfigError("negative action probability");
            sum += p(s, a);
        }
        if (std::fabs(sum - 1.0) > kRowTol)
            throw ConfigError("policy row " + std::to_string(s) + " sums to " + std::to_string(sum));
    }
}

Occupancy occupancy(const TabularMDP& mdp, const TabularPolicy& pi) {
    mdp.validate();
    check_policy(mdp, pi);
    const int n = mdp.n_states;
    const Eigen::MatrixXd P = policy_transition(mdp, pi);
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - mdp.gamma * P.transpose();
    Eigen::VectorXd b(n);
    for (int s = 0; s < n; ++s) b(s) = (1.0 - mdp.gamma) * mdp.init_dist[s];
    const Eigen::VectorXd nu = A.partialPivLu().solve(b);
    if (!nu.allFinite() || (A * nu - b).lpNorm<Eigen::Infinity>() > 1e-9)
        throw NumericalError("occupancy solve failed");

    Occupancy occ;
    occ.state.assign(nu.data(), nu.data() + n);
    occ.state_action.resize(static_cast<std::size_t>(n) * mdp.n_actions);
    for (int s = 0; s < n; ++s)
        for (int a = 0; a < mdp.n_actions; ++a)
            occ.state_action[static_cast<std::size_t>(s) * mdp.n_actions + a] =
                occ.state[s] * pi.p(s, a);
    return occ;
}

std::vector<double> policy_value(const TabularMDP& mdp, const TabularPolicy& pi) {
    mdp.validate();
    check_policy(mdp, pi);
    const int n = mdp.n_states;
    const Eigen::MatrixXd P = policy_transition(mdp, pi);
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - mdp.gamma * P;
    Eigen::VectorXd rpi(n);
    for (int s = 0; s < n; ++s) {
        double acc = 0;
        for (int a = 0; a < mdp.n_actions; ++a) acc += pi.p(s, a) * mdp.r(s, a);
        rpi(s) = acc;
    }
    const Eigen::VectorXd v = A.partialPivLu().solve(rpi);
    if (!v.allFinite() || (A * v - rpi).lpNorm<Eigen::Infinity>() > 1e-9)
        throw NumericalError("value solve failed");
    return std::vector<double>(v.data(), v.data() + n);
}

double expected_return(const TabularMDP& mdp, const TabularPolicy& pi) {
    const Occupancy occ = occupancy(mdp, pi);
    double eta = 0;
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a)
            eta += occ.state_action[static_cast<std::size_t>(s) * mdp.n_actions + a] * mdp.r(s, a);
    return eta;
}

double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw UsageError("tv_distance shape mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::fabs(p[i] - q[i]);
    return 0.5 * acc;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw UsageError("kl_divergence shape mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
        acc += p[i] * std::log(p[i] / q[i]);
    }
    return acc;
}

LemmaReport lemma1_check(const TabularMDP& mdp_true, const TabularMDP& mdp_model,
                         const TabularPolicy& pi, const TabularPolicy& pi_D) {
    check_compatible(mdp_true, mdp_model);
    check_policy(mdp_true, pi);
    check_policy(mdp_true, pi_D);

    const Occupancy data = occupancy(mdp_true, pi_D);    // rho_T^{pi_D}
    const Occupancy sim = occupancy(mdp_model, pi);      // rho_That^{pi}
    const double tv_rho = tv_distance(data.state_action, sim.state_action);
    const double gamma = mdp_true.gamma;

    LemmaReport report;
    report.states.resize(mdp_true.n_states);
    report.min_slack = std::numeric_limits<double>::infinity();
    report.all_hold = true;
    for (int s2 = 0; s2 < mdp_true.n_states; ++s2) {
        double c = 0;        // witness radius: largest model probability of landing in s2
        double moderr = 0;   // E_{rho_T^{pi_D}} |T - That|(s2)
        for (int s = 0; s < mdp_true.n_states; ++s)
            for (int a = 0; a < mdp_true.n_actions; ++a) {
                c = std::max(c, mdp_model.t(s, a, s2));
                const double rho = data.state_action[static_cast<std::size_t>(s) * mdp_true.n_actions + a];
                moderr += rho * std::fabs(mdp_true.t(s, a, s2) - mdp_model.t(s, a, s2));
            }
        LemmaStateReport& st = report.states[s2];
        st.lhs = std::fabs(data.state[s2] - sim.state[s2]);
        st.ipm_term = gamma * 2.0 * c * tv_rho;
        st.model_err_term = gamma * moderr;
        st.slack = st.ipm_term + st.model_err_term - st.lhs;
        st.holds = st.slack >= -kBoundSlack;
        report.min_slack = std::min(report.min_slack, st.slack);
        report.all_hold = report.all_hold && st.holds;
    }
    return report;
}

BoundReport theorem1_check(const TabularMDP& mdp_true, const TabularMDP& mdp_model,
                           const TabularPolicy& pi, const TabularPolicy& pi_D) {
    check_compatible(mdp_true, mdp_model);
    check_policy(mdp_true, pi);
    check_policy(mdp_true, pi_D);

    const double gamma = mdp_true.gamma;
    const double R = mdp_true.max_abs_reward();

    const Occupancy on_true = occupancy(mdp_true, pi);
    const Occupancy data = occupancy(mdp_true, pi_D);
    const Occupancy sim = occupancy(mdp_model, pi);

    BoundReport rep;
    rep.lhs = expected_return(mdp_true, pi);
    rep.eta_hat = expected_return(mdp_model, pi);

    const double eps_pi = 2.0 * tv_distance(on_true.state, data.state);
    rep.policy_shift_term = R * eps_pi;

    double c = 0;  // union witness class radius: max over all (s,a,s') of the model tensor
    for (double p : mdp_model.transition) c = std::max(c, p);
    const double d_f = 2.0 * c * tv_distance(data.state_action, sim.state_action);
    rep.ipm_term = gamma * R * d_f * mdp_true.n_states;

    double kl_acc = 0;
    std::vector<double> prow(mdp_true.n_states), qrow(mdp_true.n_states);
    for (int s = 0; s < mdp_true.n_states && !rep.kl_infinite; ++s)
        for (int a = 0; a < mdp_true.n_actions; ++a) {
            const double rho = data.state_action[static_cast<std::size_t>(s) * mdp_true.n_actions + a];
            for (int s2 = 0; s2 < mdp_true.n_states; ++s2) {
                prow[s2] = mdp_true.t(s, a, s2);
                qrow[s2] = mdp_model.t(s, a, s2);
            }
            const double kl = kl_divergence(prow, qrow);
            if (std::isinf(kl)) {
                if (rho > 0.0) {
                    rep.kl_infinite = true;
                    break;
                }
                continue;  // unreachable state-action: contributes nothing
            }
            kl_acc += rho * std::sqrt(2.0 * kl);
        }
    rep.kl_term = rep.kl_infinite ? std::numeric_limits<double>::infinity() : gamma * R * kl_acc;

    const double rhs = rep.eta_hat - rep.policy_shift_term - rep.ipm_term - rep.kl_term;
    rep.slack = rep.lhs - rhs;
    rep.holds = rep.kl_infinite || rep.slack >= -kBoundSlack;
    return rep;
}

AppendixEReport appendixE_check(const TabularMDP& mdp_true, const TabularMDP& mdp_model,
                                const TabularPolicy& pi) {
    check_compatible(mdp_true, mdp_model);
    check_policy(mdp_true, pi);

    const double gamma = mdp_true.gamma;
    const std::vector<double> v = policy_value(mdp_true, pi);
    double v_inf = 0;
    for (double x : v) v_inf = std::max(v_inf, std::fabs(x));

    const Occupancy on_true = occupancy(mdp_true, pi);
    const Occupancy on_model = occupancy(mdp_model, pi);

    AppendixEReport rep;
    rep.eta = expected_return(mdp_true, pi);
    rep.eta_hat = expected_return(mdp_model, pi);

    double e_rho_model_g = 0;  // E_{rho_model}[G]
    double f2_acc = 0;         // E_{rho_true}[ 2 ||V||_inf TV(That, T) ]
    for (int s = 0; s < mdp_true.n_states; ++s)
        for (int a = 0; a < mdp_true.n_actions; ++a) {
            double g = 0, l1 = 0;
            for (int s2 = 0; s2 < mdp_true.n_states; ++s2) {
                const double diff = mdp_model.t(s, a, s2) - mdp_true.t(s, a, s2);
                g += diff * v[s2];
                l1 += std::fabs(diff);
            }
            rep.max_abs_g = std::max(rep.max_abs_g, std::fabs(g));
            const std::size_t idx = static_cast<std::size_t>(s) * mdp_true.n_actions + a;
            e_rho_model_g += on_model.state_action[idx] * g;
            f2_acc += on_true.state_action[idx] * v_inf * l1;  // 2 v_inf * (l1/2)
        }

    rep.identity_residual = std::fabs((rep.eta_hat - rep.eta) - gamma * e_rho_model_g);
    rep.f1_term =
        gamma * 2.0 * rep.max_abs_g * tv_distance(on_true.state_action, on_model.state_action);
    rep.f2_term = gamma * f2_acc;
    rep.slack = rep.eta - (rep.eta_hat - rep.f1_term - rep.f2_term);
    rep.holds = rep.slack >= -kBoundSlack;
    return rep;
}

TabularMDP random_mdp(int n_states, int n_actions, double gamma, Rng& rng) {
    std::exponential_distribution<double> expo(1.0);
    std::uniform_real_distribution<double> urew(-1.0, 1.0);
    TabularMDP mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.gamma = gamma;
    mdp.transition.resize(static_cast<std::size_t>(n_states) * n_actions * n_states);
    mdp.reward.resize(static_cast<std::size_t>(n_states) * n_actions);
    mdp.init_dist.resize(n_states);

    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_actions; ++a) {
            double sum = 0;
            for (int s2 = 0; s2 < n_states; ++s2) {
                const double e = expo(rng);  // Dirichlet(1) row via normalized exponentials
                mdp.t(s, a, s2) = e;
                sum += e;
            }
            for (int s2 = 0; s2 < n_states; ++s2) mdp.t(s, a, s2) /= sum;
            mdp.r(s, a) = urew(rng);
        }
    double mu_sum = 0;
    for (int s = 0; s < n_states; ++s) {
        mdp.init_dist[s] = expo(rng);
        mu_sum += mdp.init_dist[s];
    }
    for (int s = 0; s < n_states; ++s) mdp.init_dist[s] /= mu_sum;
    mdp.validate();
    return mdp;
}

TabularMDP perturb_mdp(const TabularMDP& base, double eps, Rng& rng) {
    std::exponential_distribution<double> expo(1.0);
    TabularMDP out = base;
    if (eps == 0.0) return out;
    for (int s = 0; s < base.n_states; ++s)
        for (int a = 0; a < base.n_actions; ++a) {
            double noise_sum = 0;
            std::vector<double> noise(base.n_states);
            for (int s2 = 0; s2 < base.n_states; ++s2) {
                noise[s2] = expo(rng);
                noise_sum += noise[s2];
            }
            double row_sum = 0;
            for (int s2 = 0; s2 < base.n_states; ++s2) {
                out.t(s, a, s2) = base.t(s, a, s2) + eps * noise[s2] / noise_sum;
                row_sum += out.t(s, a, s2);
            }
            for (int s2 = 0; s2 < base.n_states; ++s2) out.t(s, a, s2) /= row_sum;
        }
    out.validate();
    return out;
}

TabularPolicy random_policy(int n_states, int n_actions, Rng& rng) {
    std::exponential_distribution<double> expo(1.0);
    TabularPolicy pi;
    pi.n_states = n_states;
    pi.n_actions = n_actions;
    pi.probs.resize(static_cast<std::size_t>(n_states) * n_actions);
    for (int s = 0; s < n_states; ++s) {
        double sum = 0;
        for (int a = 0; a < n_actions; ++a) {
            pi.p(s, a) = expo(rng);
            sum += pi.p(s, a);
        }
        for (int a = 0; a < n_actions; ++a) pi.p(s, a) /= sum;
    }
    pi.validate();
    return pi;
}

SweepSummary verification_sweep(int instances_per_family, std::uint64_t master_seed) {
    if (instances_per_family < 1) throw ConfigError("verification sweep needs >= 1 instance");
    SweepSummary sum;
    sum.instances_per_family = instances_per_family;
    sum.min_lemma_slack = std::numeric_limits<double>::infinity();
    sum.min_theorem_slack = std::numeric_limits<double>::infinity();
    sum.min_companion_slack = std::numeric_limits<double>::infinity();

    const double gammas[] = {0.5, 0.9, 0.99};
    const double epsilons[] = {0.0, 0.05, 0.3};
    for (int i = 0; i < instances_per_family; ++i) {
        Rng rng = make_rng(master_seed, "verification_instance", static_cast<std::uint64_t>(i));
        const int n_states = 2 + static_cast<int>(rng() % 9);
        const int n_actions = 1 + static_cast<int>(rng() % 4);
        const double gamma = gammas[rng() % 3];
        const double eps = epsilons[rng() % 3];
        const TabularMDP truth = random_mdp(n_states, n_actions, gamma, rng);
        const TabularMDP model = perturb_mdp(truth, eps, rng);
        const TabularPolicy pi = random_policy(n_states, n_actions, rng);
        const TabularPolicy pi_d = random_policy(n_states, n_actions, rng);

        const LemmaReport lemma = lemma1_check(truth, model, pi, pi_d);
        if (!lemma.all_hold) ++sum.lemma_violations;
        sum.min_lemma_slack = std::min(sum.min_lemma_slack, lemma.min_slack);

        const BoundReport bound = theorem1_check(truth, model, pi, pi_d);
        if (!bound.holds) ++sum.theorem_violations;
        if (bound.kl_infinite)
            ++sum.theorem_vacuous;
        else
            sum.min_theorem_slack = std::min(sum.min_theorem_slack, bound.slack);

        const AppendixEReport tele = appendixE_check(truth, model, pi);
        if (tele.identity_residual > kBoundSlack) ++sum.identity_violations;
        if (!tele.holds) ++sum.companion_violations;
        sum.max_identity_residual = std::max(sum.max_identity_residual, tele.identity_residual);
        sum.min_companion_slack = std::min(sum.min_companion_slack, tele.slack);
    }
    return sum;
}

}  // namespace dynalab::theory
