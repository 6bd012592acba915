#include "dynalab/dyna.hpp"

#include <cmath>
#include <string>

#include "dynalab/errors.hpp"

namespace dynalab::dyna {

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(make_rng(seed, "replay")) {
    if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
    data_.reserve(capacity);
}

void ReplayBuffer::push(Transition t) {
    if (count_ < capacity_) {
        const std::size_t slot = (head_ + count_) % capacity_;
        if (slot < data_.size())
            data_[slot] = std::move(t);
        else
            data_.push_back(std::move(t));
        ++count_;
    } else {
        data_[head_] = std::move(t);  // overwrite the oldest
        head_ = (head_ + 1) % capacity_;
    }
}

const Transition& ReplayBuffer::at(std::size_t i) const {
    if (i >= count_) throw UsageError("replay index " + std::to_string(i) + " out of range");
    return data_[(head_ + i) % capacity_];
}

const Transition& ReplayBuffer::sample_one() {
    if (count_ == 0) throw UsageError("sampling from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, count_ - 1);
    return at(pick(rng_));
}

std::vector<Transition> ReplayBuffer::sample(std::size_t n) {
    std::vector<Transition> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample_one());
    return out;
}

void ReplayBuffer::clear() {
    head_ = 0;
    count_ = 0;
}

void ReplayBuffer::set_capacity(std::size_t capacity) {
    if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
    std::vector<Transition> kept;
    const std::size_t keep = std::min(count_, capacity);
    kept.reserve(keep);
    for (std::size_t i = count_ - keep; i < count_; ++i) kept.push_back(at(i));
    capacity_ = capacity;
    data_ = std::move(kept);
    data_.reserve(capacity);
    head_ = 0;
    count_ = data_.size();
}

void RolloutSchedule::validate() const {
    if (start_epoch >= end_epoch) throw ConfigError("rollout schedule needs start epoch < end epoch");
    if (min_len < 1 || min_len > max_len) throw ConfigError("rollout schedule needs 1 <= min <= max length");
}

int schedule_eval(const RolloutSchedule& sched, int epoch) {
    sched.validate();
    if (epoch < 0) throw UsageError("schedule_eval expects epoch >= 0");
    const double t = static_cast<double>(epoch - sched.start_epoch) /
                     static_cast<double>(sched.end_epoch - sched.start_epoch);
    const double k = sched.min_len + t * (sched.max_len - sched.min_len);
    const int rounded = static_cast<int>(std::lround(k));
    return std::min(std::max(rounded, sched.min_len), sched.max_len);
}

std::vector<Transition> branched_rollout(ModelInterface& model, PolicyInterface& policy,
                                         ReplayBuffer& env_buffer, ReplayBuffer& model_buffer,
                                         int k, int batch, Rng& rng) {
    if (env_buffer.empty()) throw UsageError("branched rollout needs a non-empty environment buffer");
    if (k < 1 || batch < 1) throw UsageError("branched rollout needs k >= 1 and batch >= 1");
    const int members = model.member_count();
    std::uniform_int_distribution<int> pick_member(0, members - 1);

    std::vector<Transition> generated;
    generated.reserve(static_cast<std::size_t>(k) * batch);
    for (int b = 0; b < batch; ++b) {
        std::vector<double> s = env_buffer.sample_one().s;
        for (int t = 0; t < k; ++t) {
            Transition tr;
            tr.s = s;
            tr.a = policy.act(s, rng);
            const int member = pick_member(rng);
            model.sample_next(member, tr.s, tr.a, rng, tr.s_next, tr.r);
            tr.done = false;
            tr.source = Transition::Source::Simulated;
            s = tr.s_next;
            generated.push_back(std::move(tr));
        }
    }
    for (const Transition& tr : generated) model_buffer.push(tr);
    return generated;
}

std::vector<Transition> sample_mixed(ReplayBuffer& env_buffer, ReplayBuffer& model_buffer,
                                     std::size_t batch, double real_ratio) {
    if (real_ratio < 0.0 || real_ratio > 1.0) throw ConfigError("real_ratio must lie in [0, 1]");
    const std::size_t n_real =
        static_cast<std::size_t>(std::ceil(real_ratio * static_cast<double>(batch)));
    const std::size_t n_real_clamped = std::min(n_real, batch);
    const std::size_t n_sim = batch - n_real_clamped;
    if (n_real_clamped > 0 && env_buffer.empty())
        throw UsageError("mixed batch needs real data but the environment buffer is empty");
    if (n_sim > 0 && model_buffer.empty())
        throw UsageError("mixed batch needs simulated data but the model buffer is empty");

    std::vector<Transition> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < n_real_clamped; ++i) out.push_back(env_buffer.sample_one());
    for (std::size_t i = 0; i < n_sim; ++i) out.push_back(model_buffer.sample_one());
    return out;
}

}  // namespace dynalab::dyna
