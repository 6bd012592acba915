#include "dynalab/envs.hpp"

#include <cmath>
#include <random>

#include "dynalab/errors.hpp"

namespace dynalab::envs {

namespace {

constexpr double kPi = 3.14159265358979323846;

double wrap_angle(double th) {
    // into [-pi, pi]
    th = std::fmod(th + kPi, 2.0 * kPi);
    if (th < 0) th += 2.0 * kPi;
    return th - kPi;
}

double clip(double x, double lo, double hi) { return x < lo ? lo : (x > hi ? hi : x); }

}  // namespace

EnvSpec make_env_spec(const std::string& name, int horizon) {
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    EnvSpec spec;
    spec.name = name;
    spec.horizon = horizon;
    if (name == "pendulum") {
        spec.obs_dim = 3;
        spec.act_dim = 1;
        spec.action_low = {-2.0};
        spec.action_high = {2.0};
        spec.dt = 0.05;
        // wrap(th)^2 <= pi^2, 0.1 th_dot^2 <= 6.4, 0.001 u^2 <= 0.004
        spec.reward_bound = kPi * kPi + 6.404;
    } else if (name == "pointmass2d") {
        spec.obs_dim = 4;
        spec.act_dim = 2;
        spec.action_low = {-1.0, -1.0};
        spec.action_high = {1.0, 1.0};
        spec.dt = 0.1;
        // |p|^2 <= 2 in the unit box, 0.01 |f|^2 <= 0.02
        spec.reward_bound = 2.02;
    } else {
        throw ConfigError("unknown environment '" + name + "'");
    }
    return spec;
}

namespace {

std::vector<double> observe(const EnvSpec& spec, const std::vector<double>& internal) {
    if (spec.name == "pendulum")
        return {std::cos(internal[0]), std::sin(internal[0]), internal[1]};
    return internal;  // pointmass2d observes its full state
}

}  // namespace

EnvState reset(const EnvSpec& spec, std::uint64_t seed) {
    Rng rng = make_rng(seed, "env_reset");
    EnvState st;
    if (spec.name == "pendulum") {
        std::uniform_real_distribution<double> ang(-kPi, kPi);
        std::uniform_real_distribution<double> vel(-1.0, 1.0);
        st.internal = {ang(rng), vel(rng)};
    } else {
        std::uniform_real_distribution<double> pos(-0.9, 0.9);
        st.internal = {pos(rng), pos(rng), 0.0, 0.0};
    }
    st.observation = observe(spec, st.internal);
    st.step_count = 0;
    return st;
}

StepResult step(const EnvSpec& spec, const EnvState& state, const std::vector<double>& action) {
    if (static_cast<int>(action.size()) != spec.act_dim)
        throw UsageError("action has " + std::to_string(action.size()) + " dims, expected " +
                         std::to_string(spec.act_dim));
    StepResult out;
    std::vector<double> a(action.size());
    for (std::size_t i = 0; i < action.size(); ++i) {
        if (std::isnan(action[i])) throw InputError("NaN in action component " + std::to_string(i));
        a[i] = clip(action[i], spec.action_low[i], spec.action_high[i]);
        if (a[i] != action[i]) out.clipped = true;
    }

    out.next.internal = state.internal;
    if (spec.name == "pendulum") {
        const double th = state.internal[0];
        const double thd = state.internal[1];
        const double u = a[0];
        const double w = wrap_angle(th);
        out.reward = -(w * w + 0.1 * thd * thd + 0.001 * u * u);
        // semi-implicit Euler: velocity first, then position with the new velocity
        double thd2 = thd + (15.0 * std::sin(th) + 3.0 * u) * spec.dt;
        thd2 = clip(thd2, -8.0, 8.0);
        out.next.internal[0] = th + thd2 * spec.dt;
        out.next.internal[1] = thd2;
    } else {
        const double px = state.internal[0], py = state.internal[1];
        const double vx = state.internal[2], vy = state.internal[3];
        out.reward = -(px * px + py * py) - 0.01 * (a[0] * a[0] + a[1] * a[1]);
        const double vx2 = clip(vx + a[0] * spec.dt, -2.0, 2.0);
        const double vy2 = clip(vy + a[1] * spec.dt, -2.0, 2.0);
        out.next.internal = {clip(px + vx2 * spec.dt, -1.0, 1.0),
                             clip(py + vy2 * spec.dt, -1.0, 1.0), vx2, vy2};
    }
    out.next.observation = observe(spec, out.next.internal);
    out.next.step_count = state.step_count + 1;
    out.done = out.next.step_count >= spec.horizon;
    return out;
}

EnvState state_from_observation(const EnvSpec& spec, const std::vector<double>& obs) {
    if (static_cast<int>(obs.size()) != spec.obs_dim)
        throw UsageError("observation size mismatch for " + spec.name);
    EnvState st;
    if (spec.name == "pendulum") {
        st.internal = {std::atan2(obs[1], obs[0]), obs[2]};
    } else {
        st.internal = obs;
    }
    st.observation = observe(spec, st.internal);
    return st;
}

}  // namespace dynalab::envs
