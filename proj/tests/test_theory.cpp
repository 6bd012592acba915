#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dynalab/errors.hpp"
#include "dynalab/theory.hpp"

using namespace dynalab;
using namespace dynalab::theory;

namespace {

TabularMDP single_state_mdp() {
    TabularMDP m;
    m.n_states = 1;
    m.n_actions = 2;
    m.transition = {1.0, 1.0};
    m.reward = {0.5, -0.5};
    m.gamma = 0.9;
    m.init_dist = {1.0};
    return m;
}

TabularPolicy uniform_policy(int n_states, int n_actions) {
    TabularPolicy pi;
    pi.n_states = n_states;
    pi.n_actions = n_actions;
    pi.probs.assign(static_cast<std::size_t>(n_states) * n_actions, 1.0 / n_actions);
    return pi;
}

struct Instance {
    TabularMDP truth;
    TabularMDP model;
    TabularPolicy pi;
    TabularPolicy pi_d;
};

Instance random_instance(std::uint64_t seed) {
    Rng rng = make_rng(seed, "theory_instance");
    const int n_states = 2 + static_cast<int>(rng() % 9);   // 2..10
    const int n_actions = 1 + static_cast<int>(rng() % 4);  // 1..4
    const double gammas[] = {0.5, 0.9, 0.99};
    const double epsilons[] = {0.0, 0.05, 0.3};
    const double gamma = gammas[rng() % 3];
    const double eps = epsilons[rng() % 3];
    Instance inst;
    inst.truth = random_mdp(n_states, n_actions, gamma, rng);
    inst.model = perturb_mdp(inst.truth, eps, rng);
    inst.pi = random_policy(n_states, n_actions, rng);
    inst.pi_d = random_policy(n_states, n_actions, rng);
    return inst;
}

}  // namespace

TEST_CASE("single-state occupancy is the point mass") {
    const TabularMDP m = single_state_mdp();
    const TabularPolicy pi = uniform_policy(1, 2);
    const Occupancy occ = occupancy(m, pi);
    CHECK(occ.state.size() == 1);
    CHECK(occ.state[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("two-state deterministic cycle splits occupancy evenly") {
    TabularMDP m;
    m.n_states = 2;
    m.n_actions = 1;
    m.transition = {0.0, 1.0, 1.0, 0.0};  // 0 -> 1 -> 0
    m.reward = {1.0, 0.0};
    m.gamma = 0.5;
    m.init_dist = {0.5, 0.5};
    const TabularPolicy pi = uniform_policy(2, 1);
    const Occupancy occ = occupancy(m, pi);
    CHECK(occ.state[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(occ.state[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("occupancy matches the truncated power series") {
    Rng rng = make_rng(4, "powerseries");
    const TabularMDP m = random_mdp(6, 3, 0.9, rng);
    const TabularPolicy pi = random_policy(6, 3, rng);
    const Occupancy occ = occupancy(m, pi);

    // nu = (1-gamma) sum_t gamma^t P_t with P_0 = mu0
    std::vector<double> pt = m.init_dist;
    std::vector<double> nu(6, 0.0);
    double scale = 1.0 - m.gamma;
    for (int t = 0; t <= 200; ++t) {
        for (int s = 0; s < 6; ++s) nu[s] += scale * pt[s];
        std::vector<double> next(6, 0.0);
        for (int s = 0; s < 6; ++s)
            for (int a = 0; a < 3; ++a)
                for (int s2 = 0; s2 < 6; ++s2) next[s2] += pt[s] * pi.p(s, a) * m.t(s, a, s2);
        pt = next;
        scale *= m.gamma;
    }
    for (int s = 0; s < 6; ++s) CHECK(std::fabs(occ.state[s] - nu[s]) < 1e-8);

    SUBCASE("occupancy is normalized") {
        double sum_nu = 0, sum_rho = 0;
        for (double x : occ.state) sum_nu += x;
        for (double x : occ.state_action) sum_rho += x;
        CHECK(std::fabs(sum_nu - 1.0) < 1e-10);
        CHECK(std::fabs(sum_rho - 1.0) < 1e-10);
    }
}

TEST_CASE("two routes to the expected return agree") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Instance inst = random_instance(seed);
        const double eta_rho = expected_return(inst.truth, inst.pi);
        const std::vector<double> v = policy_value(inst.truth, inst.pi);
        double eta_v = 0;
        for (int s = 0; s < inst.truth.n_states; ++s)
            eta_v += (1.0 - inst.truth.gamma) * inst.truth.init_dist[s] * v[s];
        CHECK(std::fabs(eta_rho - eta_v) < 1e-10);
    }
}

TEST_CASE("total variation basics") {
    const std::vector<double> p = {0.2, 0.8};
    CHECK(tv_distance(p, p) == 0.0);
    CHECK(tv_distance({1.0, 0.0}, {0.0, 1.0}) == 1.0);

    Rng rng = make_rng(2, "tv");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> a(8), b(8);
    double sa = 0, sb = 0;
    for (int i = 0; i < 8; ++i) {
        a[i] = u(rng);
        b[i] = u(rng);
        sa += a[i];
        sb += b[i];
    }
    double half_l1 = 0;
    for (int i = 0; i < 8; ++i) {
        a[i] /= sa;
        b[i] /= sb;
        half_l1 += std::fabs(a[i] - b[i]);
    }
    half_l1 *= 0.5;
    CHECK(tv_distance(a, b) == doctest::Approx(half_l1).epsilon(1e-12));
    CHECK_THROWS_AS(tv_distance(a, {0.5, 0.5}), UsageError);
}

TEST_CASE("pinsker holds on evaluated rows") {
    Rng rng = make_rng(3, "pinsker");
    for (int trial = 0; trial < 200; ++trial) {
        const TabularMDP m = random_mdp(5, 2, 0.9, rng);
        const TabularMDP mh = perturb_mdp(m, 0.3, rng);
        for (int s = 0; s < 5; ++s)
            for (int a = 0; a < 2; ++a) {
                std::vector<double> p(5), q(5);
                for (int s2 = 0; s2 < 5; ++s2) {
                    p[s2] = m.t(s, a, s2);
                    q[s2] = mh.t(s, a, s2);
                }
                const double tv = tv_distance(p, q);
                const double kl = kl_divergence(p, q);
                CHECK(2.0 * tv * tv <= kl + 1e-12);
            }
    }
}

TEST_CASE("identical systems give a zero-gap decomposition") {
    const Instance inst = random_instance(77);
    const LemmaReport rep = lemma1_check(inst.truth, inst.truth, inst.pi, inst.pi);
    CHECK(rep.all_hold);
    for (const auto& st : rep.states) {
        CHECK(st.lhs < 1e-12);
        CHECK(st.model_err_term == 0.0);
    }
}

TEST_CASE("exact model with off-policy data reduces to the occupancy term") {
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const Instance inst = random_instance(seed);
        const LemmaReport rep = lemma1_check(inst.truth, inst.truth, inst.pi, inst.pi_d);
        CHECK(rep.all_hold);
        for (const auto& st : rep.states) CHECK(st.model_err_term == 0.0);
    }
}

TEST_CASE("state decomposition holds on 500 random instances") {
    int violations = 0;
    double worst = 1e9;
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        const Instance inst = random_instance(seed);
        const LemmaReport rep = lemma1_check(inst.truth, inst.model, inst.pi, inst.pi_d);
        worst = std::min(worst, rep.min_slack);
        if (!rep.all_hold) ++violations;
    }
    CHECK(violations == 0);
    CHECK(worst >= -1e-9);
}

TEST_CASE("exact on-policy model collapses the return bound to equality") {
    const Instance inst = random_instance(5);
    const BoundReport rep = theorem1_check(inst.truth, inst.truth, inst.pi, inst.pi);
    CHECK(rep.holds);
    CHECK(rep.policy_shift_term == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rep.ipm_term == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rep.kl_term == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rep.lhs == doctest::Approx(rep.eta_hat).epsilon(1e-10));
}

TEST_CASE("zero rewards give a zero-vs-penalties bound") {
    Instance inst = random_instance(6);
    std::fill(inst.truth.reward.begin(), inst.truth.reward.end(), 0.0);
    inst.model.reward = inst.truth.reward;
    const BoundReport rep = theorem1_check(inst.truth, inst.model, inst.pi, inst.pi_d);
    CHECK(rep.lhs == 0.0);
    CHECK(rep.eta_hat == 0.0);
    CHECK(rep.policy_shift_term == 0.0);  // R = 0 kills every penalty
    CHECK(rep.holds);
}

TEST_CASE("return bound holds on 500 random instances") {
    int violations = 0;
    double worst = 1e9;
    for (std::uint64_t seed = 1000; seed < 1500; ++seed) {
        const Instance inst = random_instance(seed);
        const BoundReport rep = theorem1_check(inst.truth, inst.model, inst.pi, inst.pi_d);
        if (!rep.holds) ++violations;
        if (!rep.kl_infinite) worst = std::min(worst, rep.slack);
    }
    CHECK(violations == 0);
    CHECK(worst >= -1e-9);
}

TEST_CASE("undefined KL is reported as a vacuous bound") {
    Instance inst = random_instance(8);
    TabularMDP model = inst.truth;
    // crush one row onto a single successor: KL(T || That) diverges there
    for (int s2 = 0; s2 < model.n_states; ++s2) model.t(0, 0, s2) = 0.0;
    model.t(0, 0, 0) = 1.0;
    const BoundReport rep = theorem1_check(inst.truth, model, inst.pi, inst.pi_d);
    CHECK(rep.kl_infinite);
    CHECK(rep.holds);
    CHECK(std::isinf(rep.kl_term));
}

TEST_CASE("exact model zeroes the telescoping residual") {
    const Instance inst = random_instance(9);
    const AppendixEReport rep = appendixE_check(inst.truth, inst.truth, inst.pi);
    CHECK(rep.max_abs_g == 0.0);
    CHECK(rep.identity_residual < 1e-12);
    CHECK(rep.holds);
}

TEST_CASE("a vanishing discount kills the return gap") {
    Rng rng = make_rng(10, "lowgamma");
    TabularMDP truth = random_mdp(5, 3, 0.9, rng);
    truth.gamma = 1e-6;
    TabularMDP model = perturb_mdp(truth, 0.3, rng);
    const TabularPolicy pi = random_policy(5, 3, rng);
    const AppendixEReport rep = appendixE_check(truth, model, pi);
    CHECK(std::fabs(rep.eta_hat - rep.eta) <= truth.gamma * rep.max_abs_g + 1e-12);
}

TEST_CASE("telescoping identity and bound hold on 500 random instances") {
    double worst_residual = 0;
    int violations = 0;
    for (std::uint64_t seed = 2000; seed < 2500; ++seed) {
        const Instance inst = random_instance(seed);
        const AppendixEReport rep = appendixE_check(inst.truth, inst.model, inst.pi);
        worst_residual = std::max(worst_residual, rep.identity_residual);
        if (!rep.holds) ++violations;
    }
    CHECK(worst_residual < 1e-9);
    CHECK(violations == 0);
}

TEST_CASE("incompatible systems are rejected") {
    const Instance a = random_instance(30);
    Rng rng = make_rng(31, "other");
    const TabularMDP other = random_mdp(a.truth.n_states + 1, a.truth.n_actions, a.truth.gamma, rng);
    CHECK_THROWS_AS(lemma1_check(a.truth, other, a.pi, a.pi_d), UsageError);

    TabularMDP different_reward = a.truth;
    different_reward.reward[0] += 0.5;
    CHECK_THROWS_AS(theorem1_check(a.truth, different_reward, a.pi, a.pi_d), UsageError);

    TabularMDP bad = a.truth;
    bad.t(0, 0, 0) += 0.1;  // row no longer sums to 1
    CHECK_THROWS_AS(occupancy(bad, a.pi), ConfigError);
}
