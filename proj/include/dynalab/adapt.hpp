#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynalab/dyna.hpp"
#include "dynalab/dynamics.hpp"
#include "dynalab/matrix.hpp"
#include "dynalab/net.hpp"
#include "dynalab/rng.hpp"

namespace dynalab::adapt {

using num::Act;
using num::Matrix;

// Scalar-output witness network trained to tell real features from
// simulated ones; its trained objective value doubles as the Wasserstein-1
// estimate. Smooth activations only: the gradient penalty differentiates
// through the critic's input gradient.
struct Critic {
    num::MlpSpec spec;
    num::ParamStore params;
};

Critic make_critic(int feature_dim, const std::vector<int>& hidden, Act activation, Rng& rng);

enum class Divergence : std::uint8_t { Wasserstein1, Mmd };
enum class Strategy : std::uint8_t { Asymmetric, SharedWeights, FixedReal };

const char* divergence_name(Divergence d);
const char* strategy_name(Strategy s);
Divergence parse_divergence(const std::string& s);  // throws ConfigError
Strategy parse_strategy(const std::string& s);      // throws ConfigError

struct AdaptationConfig {
    Divergence divergence = Divergence::Wasserstein1;
    Strategy strategy = Strategy::Asymmetric;
    double alpha = 10.0;   // gradient-penalty coefficient
    int critic_steps = 5;  // critic updates per extractor update
    double critic_lr = 3e-4;
    double extractor_lr = 3e-4;
    int batch_size = 64;
    std::vector<int> critic_hidden = {64, 64};
    Act critic_activation = Act::Tanh;
    std::vector<double> mmd_bandwidths = {0.001, 0.005, 0.01, 0.05, 0.1, 1.0, 5.0, 10.0};
    // updates per adaptation event; a flat schedule is a fixed count
    dyna::RolloutSchedule g2{1, 2, 1, 1};
    int stop_epoch = 40;  // no adaptation events after this epoch

    void validate() const;  // throws ConfigError
};

// Two feature extractors plus the critic for one member's adaptation.
// Under shared_weights both sides are literally the same store; under
// fixed_real the real side never receives updates.
struct AdaptationState {
    dynamics::ExtractorSpec extractor_spec;
    Strategy strategy = Strategy::Asymmetric;
    num::ParamStore extractor_sim;
    num::ParamStore extractor_real_store;  // unused alias target when shared
    Critic critic;
    std::vector<double> input_mean, input_std;

    num::ParamStore& real() {
        return strategy == Strategy::SharedWeights ? extractor_sim : extractor_real_store;
    }
    const num::ParamStore& real() const {
        return strategy == Strategy::SharedWeights ? extractor_sim : extractor_real_store;
    }
    num::ParamStore& sim() { return extractor_sim; }
    const num::ParamStore& sim() const { return extractor_sim; }
};

// Copies the member's extractor into both sides (values only, fresh
// optimizer state). Pass the previous event's critic to warm-start it;
// nullptr initializes a fresh one from the seed.
AdaptationState begin_adaptation(const dynamics::SplitNetwork& member, const AdaptationConfig& cfg,
                                 const Critic* warm_start, std::uint64_t seed);

// Writes the simulated-side extractor back into the member (values only);
// the decoder is never touched.
void finish_adaptation(const AdaptationState& state, dynamics::SplitNetwork& member);

// mean critic(real features) - mean critic(simulated features); the logged
// Wasserstein-1 estimate once the critic is trained. Antisymmetric in its
// two batches.
double estimate_w1_metric(const Critic& critic, const Matrix& h_real, const Matrix& h_sim);
double critic_objective(const AdaptationState& state, const Matrix& h_real, const Matrix& h_sim);

// Mean-difference objective gradients for the critic parameters.
num::NamedGrads wd_critic_grads(const Critic& critic, const Matrix& h_real, const Matrix& h_sim,
                                double& objective_out);

// Penalty mean((|grad critic at interpolates| - 1)^2) with per-pair uniform
// interpolation weights; pairs are index-matched after shuffling the
// simulated side and truncating to the common batch size.
struct GpResult {
    double l_gp = 0.0;
    num::NamedGrads grads;
};
GpResult gradient_penalty(const Critic& critic, const Matrix& h_real, const Matrix& h_sim,
                          std::uint64_t seed);

// Kernel-mixture unbiased MMD^2 between feature batches (RBF kernels
// exp(-|x-y|^2 / bandwidth)). Both sides need at least two rows.
double mmd2_unbiased(const Matrix& h_real, const Matrix& h_sim,
                     const std::vector<double>& bandwidths);

// Alignment objective and extractor-parameter gradients at normalized
// (s, a) inputs. Strategy handling: shared_weights accumulates both sides
// into sim_grads; fixed_real leaves real_grads empty.
struct ExtractorGrads {
    double value = 0.0;
    num::NamedGrads real_grads;
    num::NamedGrads sim_grads;
};
ExtractorGrads wd_extractor_grads(const AdaptationState& state, const Matrix& x_real_norm,
                                  const Matrix& x_sim_norm);
ExtractorGrads mmd2_grads(const AdaptationState& state, const Matrix& x_real_norm,
                          const Matrix& x_sim_norm, const std::vector<double>& bandwidths);

// One critic phase: critic_steps ascent updates on objective - alpha *
// penalty, with fresh buffer batches per update.
struct CriticPhaseLog {
    double l_wd = 0.0;
    double l_gp = 0.0;
    bool aborted = false;
};
CriticPhaseLog critic_phase(AdaptationState& state, const dyna::ReplayBuffer& env_buffer,
                            const dyna::ReplayBuffer& model_buffer, const AdaptationConfig& cfg,
                            std::uint64_t seed);

// One full adaptation update: for wasserstein1 the critic phase followed by
// one descent step on the mean-difference objective over the extractors;
// for mmd a single descent step on MMD^2, no critic. Non-finite losses
// abort the update (extractors untouched) instead of throwing.
struct AdaptStepLog {
    double l_div = 0.0;  // objective at the extractor step (W1 estimate or MMD^2)
    double l_gp = 0.0;
    bool aborted = false;
};
AdaptStepLog adapt_step(AdaptationState& state, const dyna::ReplayBuffer& env_buffer,
                        const dyna::ReplayBuffer& model_buffer, const AdaptationConfig& cfg,
                        std::uint64_t seed);

// Raw (s, a) rows of uniformly drawn buffer transitions, normalized with
// the state's input statistics. Read-only on the buffer: indices come from
// the caller's stream, never the buffer's own.
Matrix draw_normalized_inputs(const AdaptationState& state, const dyna::ReplayBuffer& buffer,
                              int batch, Rng& rng);

}  // namespace dynalab::adapt
