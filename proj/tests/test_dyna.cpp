#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dynalab/dyna.hpp"
#include "dynalab/envs.hpp"
#include "dynalab/errors.hpp"

using namespace dynalab;
using namespace dynalab::dyna;

namespace {

Transition tagged(double tag) {
    Transition t;
    t.s = {tag};
    t.a = {0.0};
    t.s_next = {tag + 1.0};
    t.r = tag;
    return t;
}

// ground-truth dynamics standing in for a learned model
struct TrueModel : ModelInterface {
    envs::EnvSpec spec;
    int members;
    std::vector<int> member_log;
    TrueModel(envs::EnvSpec s, int m) : spec(std::move(s)), members(m) {}
    int member_count() const override { return members; }
    void sample_next(int member, const std::vector<double>& s, const std::vector<double>& a,
                     Rng&, std::vector<double>& s_next, double& r) override {
        member_log.push_back(member);
        const envs::EnvState st = envs::state_from_observation(spec, s);
        const envs::StepResult res = envs::step(spec, st, a);
        s_next = res.next.observation;
        r = res.reward;
    }
};

struct ConstantPolicy : PolicyInterface {
    std::vector<double> action;
    std::vector<double> act(const std::vector<double>&, Rng&) override { return action; }
};

}  // namespace

TEST_CASE("replay evicts strictly oldest-first") {
    ReplayBuffer buf(8, 1);
    for (int i = 0; i < 8 + 5; ++i) buf.push(tagged(i));
    CHECK(buf.size() == 8);
    for (std::size_t i = 0; i < buf.size(); ++i) CHECK(buf.at(i).r == doctest::Approx(5.0 + i));
    CHECK_THROWS_AS(buf.at(8), UsageError);
}

TEST_CASE("uniform sampling passes a chi-square test") {
    ReplayBuffer buf(100, 7);
    for (int i = 0; i < 100; ++i) buf.push(tagged(i));
    std::vector<int> counts(100, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) counts[static_cast<int>(buf.sample_one().r)] += 1;
    double stat = 0;
    const double expected = draws / 100.0;
    for (int c : counts) stat += (c - expected) * (c - expected) / expected;
    // 99 degrees of freedom, alpha = 0.001
    CHECK(stat < 148.23);
}

TEST_CASE("recapacitating keeps the newest transitions") {
    ReplayBuffer buf(10, 2);
    for (int i = 0; i < 10; ++i) buf.push(tagged(i));
    buf.set_capacity(4);
    CHECK(buf.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(buf.at(i).r == doctest::Approx(6.0 + i));
    buf.set_capacity(16);
    CHECK(buf.size() == 4);
    buf.push(tagged(42));
    CHECK(buf.size() == 5);
    CHECK(buf.at(4).r == 42.0);

    buf.clear();
    CHECK(buf.empty());
    CHECK_THROWS_AS(buf.sample_one(), UsageError);
}

TEST_CASE("rollout schedule interpolates and clamps") {
    const RolloutSchedule sched{20, 100, 1, 15};
    CHECK(schedule_eval(sched, 20) == 1);
    CHECK(schedule_eval(sched, 150) == 15);
    CHECK(schedule_eval(sched, 0) == 1);     // clamped below the start epoch
    CHECK(schedule_eval(sched, 100) == 15);  // reaches the end value on time
    // halfway: 1 + 40/80 * 14 = 8
    CHECK(schedule_eval(sched, 60) == 8);

    const RolloutSchedule flat{20, 100, 5, 5};
    for (int e : {0, 20, 60, 100, 400}) CHECK(schedule_eval(flat, e) == 5);

    CHECK_THROWS_AS(schedule_eval(RolloutSchedule{30, 20, 1, 5}, 0), ConfigError);
    CHECK_THROWS_AS(schedule_eval(RolloutSchedule{20, 100, 7, 5}, 0), ConfigError);
    CHECK_THROWS_AS(schedule_eval(sched, -1), UsageError);
}

TEST_CASE("one-step branched rollout produces exactly batch transitions") {
    const envs::EnvSpec spec = envs::make_env_spec("pointmass2d");
    TrueModel model(spec, 2);
    ConstantPolicy policy;
    policy.action = {0.3, -0.2};
    ReplayBuffer env_buf(64, 3), model_buf(1024, 4);
    envs::EnvState st = envs::reset(spec, 1);
    for (int t = 0; t < 20; ++t) {
        const envs::StepResult r = envs::step(spec, st, {0.1, 0.0});
        Transition tr;
        tr.s = st.observation;
        tr.a = {0.1, 0.0};
        tr.s_next = r.next.observation;
        tr.r = r.reward;
        env_buf.push(tr);
        st = r.next;
    }

    Rng rng = make_rng(5, "rollout");
    const auto generated = branched_rollout(model, policy, env_buf, model_buf, 1, 13, rng);
    CHECK(generated.size() == 13);
    CHECK(model_buf.size() == 13);
    for (const auto& tr : generated) CHECK(tr.source == Transition::Source::Simulated);
}

TEST_CASE("a ground-truth model reproduces environment steps exactly") {
    const envs::EnvSpec spec = envs::make_env_spec("pointmass2d");
    TrueModel model(spec, 3);
    ConstantPolicy policy;
    policy.action = {0.5, -0.5};
    ReplayBuffer env_buf(8, 3), model_buf(256, 4);
    const envs::EnvState st = envs::reset(spec, 11);
    Transition seed_tr;
    seed_tr.s = st.observation;
    seed_tr.a = {0, 0};
    seed_tr.s_next = st.observation;
    env_buf.push(seed_tr);

    Rng rng = make_rng(6, "rollout");
    const auto generated = branched_rollout(model, policy, env_buf, model_buf, 4, 1, rng);
    REQUIRE(generated.size() == 4);

    envs::EnvState cur = envs::state_from_observation(spec, st.observation);
    for (const auto& tr : generated) {
        const envs::StepResult want = envs::step(spec, cur, policy.action);
        CHECK(tr.s == cur.observation);
        CHECK(tr.s_next == want.next.observation);  // bit-exact
        CHECK(tr.r == want.reward);
        cur = want.next;
    }
}

TEST_CASE("member selection is reproducible and uniform") {
    const envs::EnvSpec spec = envs::make_env_spec("pointmass2d");
    ConstantPolicy policy;
    policy.action = {0.0, 0.0};

    auto run = [&](TrueModel& model) {
        ReplayBuffer env_buf(8, 3), model_buf(20000, 4);
        Transition tr;
        tr.s = envs::reset(spec, 2).observation;
        tr.a = {0, 0};
        tr.s_next = tr.s;
        env_buf.push(tr);
        Rng rng = make_rng(9, "rollout");
        branched_rollout(model, policy, env_buf, model_buf, 10, 1000, rng);
    };

    TrueModel m1(spec, 2), m2(spec, 2);
    run(m1);
    run(m2);
    REQUIRE(m1.member_log.size() == 10000);
    CHECK(m1.member_log == m2.member_log);  // same seed, same member sequence

    int ones = 0;
    for (int m : m1.member_log) ones += m;
    // binomial(10000, 1/2): 3 sigma = 3 * 50
    CHECK(std::fabs(ones - 5000.0) <= 150.0);
}

TEST_CASE("mixed batches honor the ceiling split") {
    ReplayBuffer env_buf(512, 1), model_buf(512, 2);
    for (int i = 0; i < 50; ++i) {
        Transition t = tagged(i);
        t.source = Transition::Source::Real;
        env_buf.push(t);
        t.source = Transition::Source::Simulated;
        model_buf.push(t);
    }

    auto count_real = [](const std::vector<Transition>& batch) {
        int n = 0;
        for (const auto& t : batch) n += t.source == Transition::Source::Real ? 1 : 0;
        return n;
    };

    const auto all_real = sample_mixed(env_buf, model_buf, 64, 1.0);
    CHECK(count_real(all_real) == 64);
    const auto all_sim = sample_mixed(env_buf, model_buf, 64, 0.0);
    CHECK(count_real(all_sim) == 0);
    const auto split = sample_mixed(env_buf, model_buf, 256, 0.05);
    CHECK(split.size() == 256);
    CHECK(count_real(split) == 13);  // ceil(12.8)

    ReplayBuffer empty(8, 9);
    CHECK_THROWS_AS(sample_mixed(empty, model_buf, 16, 0.5), UsageError);
    CHECK_THROWS_AS(sample_mixed(env_buf, empty, 16, 0.5), UsageError);
    CHECK_THROWS_AS(sample_mixed(env_buf, model_buf, 16, 1.5), ConfigError);
}
