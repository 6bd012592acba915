#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dynalab/dyna.hpp"
#include "dynalab/matrix.hpp"
#include "dynalab/net.hpp"
#include "dynalab/rng.hpp"
#include "dynalab/tape.hpp"

namespace dynalab::dynamics {

using num::Act;
using num::Matrix;
using Leaves = std::vector<std::pair<std::string, int>>;

// Diagonal Gaussian over (delta_state, reward). log_var is post-clamp.
struct GaussianHead {
    std::vector<double> mean;
    std::vector<double> log_var;
};

// Feature extractor shape: activation is applied after EVERY listed layer,
// so sizes.back() is the feature width and the decoder stays a single
// linear readout of those features.
struct ExtractorSpec {
    std::vector<int> sizes;  // [input, hidden..., feature]
    Act activation = Act::Tanh;

    void validate() const;  // throws ConfigError
};

// One probabilistic dynamics model, split into the feature extractor that
// the adaptation stage retrains and the decoder that only real data ever
// touches. Prediction is exactly decoder(extractor(s, a)).
struct SplitNetwork {
    int obs_dim = 0;
    int act_dim = 0;
    ExtractorSpec extractor_spec;
    num::ParamStore extractor;  // "w0","b0",...
    num::ParamStore decoder;    // "w","b","logvar_min","logvar_max"
    std::vector<double> input_mean, input_std;  // identity until first training
    // Targets are standardized per dimension during training so the
    // Gaussian likelihood weighs small state deltas and large rewards
    // evenly; predictions are mapped back to raw units. Identity until the
    // first training event.
    std::vector<double> target_mean, target_std;

    int input_dim() const { return obs_dim + act_dim; }
    int feature_dim() const { return extractor_spec.sizes.back(); }
    int target_dim() const { return obs_dim + 1; }
};

SplitNetwork make_member(int obs_dim, int act_dim, const std::vector<int>& hidden,
                         Act activation, double logvar_min_init, double logvar_max_init,
                         Rng& rng);

// Rows are raw (s, a) pairs; returns (row - mean) / std per dimension.
Matrix normalize_inputs(const SplitNetwork& m, const Matrix& raw);

// Tape forward of a feature extractor over already-normalized inputs.
// Activation after every layer; leaves appended for each parameter.
int extractor_forward(num::Tape& tape, const ExtractorSpec& spec, const num::ParamStore& params,
                      int input_node, Leaves& leaves);
Matrix extractor_eval(const ExtractorSpec& spec, const num::ParamStore& params,
                      const Matrix& normalized);

// Decoder readout on the tape: mean columns and soft-clamped log-variance
// columns. The clamp keeps log-variance strictly above the learnable lower
// bound and within a soft margin of the upper one.
struct DecoderNodes {
    int mean = -1;
    int log_var = -1;
};
DecoderNodes decoder_forward(num::Tape& tape, const SplitNetwork& m, int features_node,
                             Leaves& leaves);

// Deterministic head for one (s, a); mean next state is s + head.mean[0..obs).
// Implemented exactly as decode_features(extract_features(s, a)). Means and
// log-variances are in raw target units (standardization undone).
GaussianHead predict(const SplitNetwork& m, const std::vector<double>& s,
                     const std::vector<double>& a);

// Decoder readout of an already-extracted feature vector, in raw units.
GaussianHead decode_features(const SplitNetwork& m, const std::vector<double>& features);

// Diagonal-Gaussian draw from a head; returns (s_next, reward).
std::pair<std::vector<double>, double> sample_next(const GaussianHead& head,
                                                   const std::vector<double>& s, Rng& rng);

// Feature vector the adaptation stage aligns; depends only on the extractor.
std::vector<double> extract_features(const SplitNetwork& m, const std::vector<double>& s,
                                     const std::vector<double>& a);

// Gaussian negative log-likelihood: per sample the squared Mahalanobis
// residual plus log det of the diagonal covariance, averaged over the batch.
struct NllResult {
    double loss = 0.0;
    num::NamedGrads extractor_grads;
    num::NamedGrads decoder_grads;
};
NllResult nll_loss(const SplitNetwork& m, const Matrix& normalized_inputs, const Matrix& targets);
double nll_value(const SplitNetwork& m, const Matrix& normalized_inputs, const Matrix& targets);

struct EnsembleConfig {
    int members = 7;
    std::vector<int> hidden = {64, 64};
    Act activation = Act::Tanh;
    double logvar_min_init = -10.0;
    double logvar_max_init = 0.5;
    double learning_rate = 1e-3;
    int batch_size = 64;
    int patience = 5;       // gradient steps without validation improvement
    int max_steps = 500;    // hard cap per member per training event
    double validation_fraction = 0.2;
    int max_validation = 512;  // cap on validation rows, keeps per-step eval cheap
    int min_samples = 16;

    void validate() const;  // throws ConfigError
};

struct DynamicsEnsemble {
    int obs_dim = 0;
    int act_dim = 0;
    std::vector<SplitNetwork> members;
    // buffer indices resampled (with replacement) per member at the last
    // training event; same training pool snapshot for every member
    std::vector<std::vector<std::size_t>> bootstrap_assignments;
};

DynamicsEnsemble make_ensemble(const EnsembleConfig& cfg, int obs_dim, int act_dim,
                               std::uint64_t master_seed);

struct MemberReport {
    double val_before = 0.0;  // validation loss at entry, before any update
    double val_after = 0.0;   // best validation loss (weights restored to it)
    double train_final = 0.0;
    int steps = 0;
    bool regressed = false;  // val_after > val_before (cannot happen by construction)
};

struct TrainReport {
    std::vector<MemberReport> members;
    std::vector<std::string> warnings;

    double mean_val_loss() const;
    double mean_train_loss() const;
};

// Refreshes input statistics from the buffer, draws one validation split
// shared by all members, bootstraps each member from the remaining pool and
// trains it until the validation loss stops improving (patience) or the step
// cap hits. Training warm-starts from the current member weights.
TrainReport train_ensemble(DynamicsEnsemble& ensemble, const dyna::ReplayBuffer& env_buffer,
                           const EnsembleConfig& cfg, std::uint64_t seed);

// Rollout adapter: member-indexed stochastic one-step predictions.
class EnsembleModel : public dyna::ModelInterface {
public:
    explicit EnsembleModel(const DynamicsEnsemble& e) : e_(&e) {}
    int member_count() const override;
    void sample_next(int member, const std::vector<double>& s, const std::vector<double>& a,
                     Rng& rng, std::vector<double>& s_next, double& r) override;

private:
    const DynamicsEnsemble* e_;
};

}  // namespace dynalab::dynamics
