#pragma once

#include <cstdint>
#include <vector>

#include "dynalab/rng.hpp"

namespace dynalab::dyna {

struct Transition {
    std::vector<double> s;
    std::vector<double> a;
    std::vector<double> s_next;
    double r = 0.0;
    bool done = false;
    enum class Source : std::uint8_t { Real, Simulated } source = Source::Real;
};

// Bounded FIFO with uniform sampling. Owns its sampling stream so drawing
// for one consumer never perturbs another buffer's stream.
class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, std::uint64_t seed);

    void push(Transition t);
    std::size_t size() const { return count_; }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return count_ == 0; }

    // logical index: 0 is the oldest stored transition
    const Transition& at(std::size_t i) const;

    const Transition& sample_one();
    std::vector<Transition> sample(std::size_t n);  // uniform with replacement

    void clear();
    // Grow/shrink in place, keeping the newest transitions.
    void set_capacity(std::size_t capacity);

private:
    std::size_t capacity_;
    std::vector<Transition> data_;  // ring
    std::size_t head_ = 0;          // slot of the oldest element
    std::size_t count_ = 0;
    Rng rng_;
};

// Rollout length grows linearly from min_len at start_epoch to max_len at
// end_epoch, clamped to [min_len, max_len].
struct RolloutSchedule {
    int start_epoch = 1;
    int end_epoch = 2;
    int min_len = 1;
    int max_len = 1;

    void validate() const;  // throws ConfigError
};

int schedule_eval(const RolloutSchedule& sched, int epoch);

// Narrow seams so rollout generation can run against the learned ensemble,
// a ground-truth oracle, or scripted stand-ins in tests.
struct ModelInterface {
    virtual ~ModelInterface() = default;
    virtual int member_count() const = 0;
    virtual void sample_next(int member, const std::vector<double>& s,
                             const std::vector<double>& a, Rng& rng, std::vector<double>& s_next,
                             double& r) = 0;
};

struct PolicyInterface {
    virtual ~PolicyInterface() = default;
    virtual std::vector<double> act(const std::vector<double>& s, Rng& rng) = 0;
};

// Branched rollouts: `batch` start states drawn uniformly from the
// environment buffer, each rolled k steps under the model with a uniformly
// random ensemble member per step. Generated transitions are appended to
// model_buffer and returned.
std::vector<Transition> branched_rollout(ModelInterface& model, PolicyInterface& policy,
                                         ReplayBuffer& env_buffer, ReplayBuffer& model_buffer,
                                         int k, int batch, Rng& rng);

// ceil(real_ratio * batch) real transitions, remainder simulated.
std::vector<Transition> sample_mixed(ReplayBuffer& env_buffer, ReplayBuffer& model_buffer,
                                     std::size_t batch, double real_ratio);

}  // namespace dynalab::dyna
