#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynalab/rng.hpp"

namespace dynalab::envs {

struct EnvSpec {
    std::string name;
    int obs_dim = 0;
    int act_dim = 0;
    std::vector<double> action_low;
    std::vector<double> action_high;
    int horizon = 200;
    double dt = 0.0;
    double reward_bound = 0.0;  // sup |r| over reachable states and bounded actions
};

// Known environments: "pendulum" (swing-up, obs [cos th, sin th, th_dot]) and
// "pointmass2d" (double integrator in the unit box, obs [px, py, vx, vy]).
EnvSpec make_env_spec(const std::string& name, int horizon = 200);

struct EnvState {
    std::vector<double> internal;     // physical state, env-specific layout
    std::vector<double> observation;  // deterministic function of internal
    int step_count = 0;
};

// Deterministic given (spec, seed).
EnvState reset(const EnvSpec& spec, std::uint64_t seed);

struct StepResult {
    EnvState next;
    double reward = 0.0;
    bool done = false;
    bool clipped = false;  // any action component fell outside bounds
};

// Pure function of (state, action): no early termination, done only at the
// horizon. Out-of-bounds actions are clipped and flagged; NaN raises
// InputError.
StepResult step(const EnvSpec& spec, const EnvState& state, const std::vector<double>& action);

// Rebuild an EnvState from a raw observation. Exact for pointmass2d; for
// pendulum recovers theta from (cos, sin). Used when rolling the true
// dynamics from buffer observations.
EnvState state_from_observation(const EnvSpec& spec, const std::vector<double>& obs);

}  // namespace dynalab::envs
