#include "dynalab/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>

#include "dynalab/errors.hpp"
#include "dynalab/tape.hpp"

namespace dynalab::adapt {

using dynamics::Leaves;
using num::Tape;

namespace {

num::ParamStore clone_values(const num::ParamStore& src) {
    num::ParamStore out;
    for (const auto& name : src.names()) out.insert(name, src.value(name));
    return out;
}

void negate(num::NamedGrads& grads) {
    for (auto& [name, g] : grads)
        for (double& v : g.v) v = -v;
}

// Squared Euclidean distances between all row pairs, as a tape node.
int pairwise_sq_dists(Tape& tape, int a, int b) {
    const int n = tape.val(a).rows;
    const int m = tape.val(b).rows;
    const int cross = tape.matmul(a, tape.transpose(b));           // n x m
    const int sa = tape.sum_cols(tape.mul(a, a));                  // n x 1
    const int sb = tape.transpose(tape.sum_cols(tape.mul(b, b)));  // 1 x m
    const int grid = tape.add(tape.broadcast_cols(sa, m), tape.broadcast_rows(sb, n));
    return tape.add(grid, tape.scale(cross, -2.0));
}

// Unbiased kernel-mixture MMD^2 between two feature nodes.
int mmd2_node(Tape& tape, int he, int hm, const std::vector<double>& bandwidths) {
    const int n = tape.val(he).rows;
    const int m = tape.val(hm).rows;
    if (n < 2 || m < 2)
        throw UsageError("the unbiased divergence estimate needs at least two rows per side");
    const int dee = pairwise_sq_dists(tape, he, he);
    const int dmm = pairwise_sq_dists(tape, hm, hm);
    const int dem = pairwise_sq_dists(tape, he, hm);
    int total = -1;
    for (double bw : bandwidths) {
        const int kee = tape.exp(tape.scale(dee, -1.0 / bw));
        const int kmm = tape.exp(tape.scale(dmm, -1.0 / bw));
        const int kem = tape.exp(tape.scale(dem, -1.0 / bw));
        // self-pairs are excluded: the distance diagonal is exactly zero
        const int sum_ee = tape.add_scalar(tape.sum_all(kee), -static_cast<double>(n));
        const int sum_mm = tape.add_scalar(tape.sum_all(kmm), -static_cast<double>(m));
        int term = tape.add(tape.scale(sum_ee, 1.0 / (static_cast<double>(n) * (n - 1))),
                            tape.scale(sum_mm, 1.0 / (static_cast<double>(m) * (m - 1))));
        term = tape.add(term, tape.scale(tape.sum_all(kem),
                                         -2.0 / (static_cast<double>(n) * m)));
        total = total < 0 ? term : tape.add(total, term);
    }
    return total;
}

Matrix normalize_with(const std::vector<double>& mean, const std::vector<double>& stdev,
                      Matrix raw) {
    for (int i = 0; i < raw.rows; ++i)
        for (int j = 0; j < raw.cols; ++j)
            raw(i, j) = (raw(i, j) - mean[static_cast<std::size_t>(j)]) /
                        stdev[static_cast<std::size_t>(j)];
    return raw;
}

void apply_extractor_step(AdaptationState& state, const ExtractorGrads& grads, double lr) {
    switch (state.strategy) {
        case Strategy::Asymmetric:
            num::adam_step(state.real(), grads.real_grads, lr);
            num::adam_step(state.sim(), grads.sim_grads, lr);
            return;
        case Strategy::SharedWeights:
        case Strategy::FixedReal:
            num::adam_step(state.sim(), grads.sim_grads, lr);
            return;
    }
    throw UsageError("unknown adaptation strategy");
}

}  // namespace

Critic make_critic(int feature_dim, const std::vector<int>& hidden, Act activation, Rng& rng) {
    if (feature_dim < 1) throw ConfigError("critic needs a positive feature dimension");
    if (activation == Act::Relu)
        throw ConfigError(
            "critic activation must be twice-differentiable; the penalty term "
            "differentiates through the critic's input gradient");
    Critic c;
    std::vector<int> sizes;
    sizes.push_back(feature_dim);
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(1);
    c.spec = num::MlpSpec::uniform(sizes, activation);
    c.spec.validate();
    num::init_mlp(c.params, c.spec, rng);
    return c;
}

const char* divergence_name(Divergence d) {
    switch (d) {
        case Divergence::Wasserstein1: return "wasserstein1";
        case Divergence::Mmd: return "mmd";
    }
    return "?";
}

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Asymmetric: return "asymmetric";
        case Strategy::SharedWeights: return "shared_weights";
        case Strategy::FixedReal: return "fixed_real";
    }
    return "?";
}

Divergence parse_divergence(const std::string& s) {
    if (s == "wasserstein1") return Divergence::Wasserstein1;
    if (s == "mmd") return Divergence::Mmd;
    throw ConfigError("unknown divergence '" + s + "' (expected wasserstein1 or mmd)");
}

Strategy parse_strategy(const std::string& s) {
    if (s == "asymmetric") return Strategy::Asymmetric;
    if (s == "shared_weights") return Strategy::SharedWeights;
    if (s == "fixed_real") return Strategy::FixedReal;
    throw ConfigError("unknown strategy '" + s +
                      "' (expected asymmetric, shared_weights or fixed_real)");
}

void AdaptationConfig::validate() const {
    if (alpha < 0.0) throw ConfigError("gradient-penalty coefficient must be non-negative");
    if (critic_steps < 1) throw ConfigError("critic steps per extractor step must be at least 1");
    if (!(critic_lr > 0.0) || !(extractor_lr > 0.0))
        throw ConfigError("adaptation learning rates must be positive");
    if (batch_size < 2) throw ConfigError("adaptation batch size must be at least 2");
    if (critic_hidden.empty()) throw ConfigError("critic needs at least one hidden layer");
    for (int h : critic_hidden)
        if (h < 1) throw ConfigError("critic hidden widths must be positive");
    if (divergence == Divergence::Wasserstein1 && critic_activation == Act::Relu)
        throw ConfigError("critic activation must be twice-differentiable");
    if (mmd_bandwidths.empty()) throw ConfigError("kernel bandwidth list must be non-empty");
    for (double bw : mmd_bandwidths)
        if (!(bw > 0.0)) throw ConfigError("kernel bandwidths must be strictly positive");
    g2.validate();
    if (stop_epoch < 0) throw ConfigError("adaptation stop epoch must be non-negative");
}

AdaptationState begin_adaptation(const dynamics::SplitNetwork& member, const AdaptationConfig& cfg,
                                 const Critic* warm_start, std::uint64_t seed) {
    cfg.validate();
    AdaptationState st;
    st.extractor_spec = member.extractor_spec;
    st.strategy = cfg.strategy;
    st.input_mean = member.input_mean;
    st.input_std = member.input_std;
    st.extractor_sim = clone_values(member.extractor);
    if (cfg.strategy != Strategy::SharedWeights)
        st.extractor_real_store = clone_values(member.extractor);
    if (warm_start != nullptr) {
        if (warm_start->spec.input_dim() != member.feature_dim())
            throw UsageError("warm-start critic input width " +
                             std::to_string(warm_start->spec.input_dim()) +
                             " does not match feature width " +
                             std::to_string(member.feature_dim()));
        st.critic = *warm_start;
    } else {
        Rng rng = make_rng(seed, "critic_init");
        st.critic = make_critic(member.feature_dim(), cfg.critic_hidden, cfg.critic_activation, rng);
    }
    return st;
}

void finish_adaptation(const AdaptationState& state, dynamics::SplitNetwork& member) {
    num::copy_values(state.sim(), member.extractor);
}

double estimate_w1_metric(const Critic& critic, const Matrix& h_real, const Matrix& h_sim) {
    if (h_real.rows < 1 || h_sim.rows < 1)
        throw UsageError("the distance estimate needs non-empty batches");
    const Matrix fe = num::mlp_eval(critic.spec, critic.params, h_real);
    const Matrix fm = num::mlp_eval(critic.spec, critic.params, h_sim);
    const double me = std::accumulate(fe.v.begin(), fe.v.end(), 0.0) / fe.rows;
    const double mm = std::accumulate(fm.v.begin(), fm.v.end(), 0.0) / fm.rows;
    return me - mm;
}

double critic_objective(const AdaptationState& state, const Matrix& h_real, const Matrix& h_sim) {
    return estimate_w1_metric(state.critic, h_real, h_sim);
}

num::NamedGrads wd_critic_grads(const Critic& critic, const Matrix& h_real, const Matrix& h_sim,
                                double& objective_out) {
    thread_local Tape tape;
    tape.reset();
    Leaves leaves;
    const int fe = num::mlp_forward(tape, critic.spec, critic.params, tape.constant(h_real), leaves);
    const int fm = num::mlp_forward(tape, critic.spec, critic.params, tape.constant(h_sim), leaves);
    const int obj = tape.sub(tape.mean_all(fe), tape.mean_all(fm));
    objective_out = tape.scalar(obj);
    tape.backward(obj);
    return num::collect_grads(tape, leaves, critic.params);
}

GpResult gradient_penalty(const Critic& critic, const Matrix& h_real, const Matrix& h_sim,
                          std::uint64_t seed) {
    if (h_real.cols != h_sim.cols)
        throw UsageError("feature batches have different widths");
    const int n = std::min(h_real.rows, h_sim.rows);
    if (n < 1) throw UsageError("the penalty needs at least one feature pair");

    Rng rng = make_rng(seed, "gp");
    std::vector<int> perm(static_cast<std::size_t>(h_sim.rows));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[rng() % i]);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    Matrix hhat(n, h_real.cols);
    for (int i = 0; i < n; ++i) {
        const double u = uni(rng);
        const int j = perm[static_cast<std::size_t>(i)];
        for (int c = 0; c < h_real.cols; ++c)
            hhat(i, c) = u * h_real(i, c) + (1.0 - u) * h_sim(j, c);
    }

    const num::InputGradResult res =
        num::input_gradient_norm_grad(critic.spec, critic.params, hhat);
    GpResult out;
    out.l_gp = res.penalty;
    out.grads = res.grads;
    return out;
}

double mmd2_unbiased(const Matrix& h_real, const Matrix& h_sim,
                     const std::vector<double>& bandwidths) {
    if (h_real.cols != h_sim.cols)
        throw UsageError("feature batches have different widths");
    const int n = h_real.rows, m = h_sim.rows;
    if (n < 2 || m < 2)
        throw UsageError("the unbiased divergence estimate needs at least two rows per side");
    if (bandwidths.empty()) throw UsageError("kernel bandwidth list must be non-empty");

    auto sq_dist = [&](const Matrix& a, int i, const Matrix& b, int j) {
        double acc = 0.0;
        for (int c = 0; c < a.cols; ++c) {
            const double d = a(i, c) - b(j, c);
            acc += d * d;
        }
        return acc;
    };

    double total = 0.0;
    for (double bw : bandwidths) {
        if (!(bw > 0.0)) throw UsageError("kernel bandwidths must be strictly positive");
        double ee = 0.0, mm = 0.0, em = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j) ee += std::exp(-sq_dist(h_real, i, h_real, j) / bw);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                if (i != j) mm += std::exp(-sq_dist(h_sim, i, h_sim, j) / bw);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) em += std::exp(-sq_dist(h_real, i, h_sim, j) / bw);
        total += ee / (static_cast<double>(n) * (n - 1)) +
                 mm / (static_cast<double>(m) * (m - 1)) -
                 2.0 * em / (static_cast<double>(n) * m);
    }
    return total;
}

namespace {

// Shared scaffolding for the two alignment objectives: build feature nodes
// per strategy, apply the objective, pull extractor gradients.
template <typename ObjectiveFn>
ExtractorGrads extractor_objective_grads(const AdaptationState& state, const Matrix& x_real_norm,
                                         const Matrix& x_sim_norm, ObjectiveFn&& objective) {
    thread_local Tape tape;
    tape.reset();
    Leaves real_leaves, sim_leaves;
    int he = -1, hm = -1;
    switch (state.strategy) {
        case Strategy::Asymmetric:
            he = dynamics::extractor_forward(tape, state.extractor_spec, state.real(),
                                             tape.constant(x_real_norm), real_leaves);
            hm = dynamics::extractor_forward(tape, state.extractor_spec, state.sim(),
                                             tape.constant(x_sim_norm), sim_leaves);
            break;
        case Strategy::SharedWeights:
            he = dynamics::extractor_forward(tape, state.extractor_spec, state.sim(),
                                             tape.constant(x_real_norm), sim_leaves);
            hm = dynamics::extractor_forward(tape, state.extractor_spec, state.sim(),
                                             tape.constant(x_sim_norm), sim_leaves);
            break;
        case Strategy::FixedReal: {
            const Matrix h = dynamics::extractor_eval(state.extractor_spec, state.real(),
                                                      x_real_norm);
            he = tape.constant(h);
            hm = dynamics::extractor_forward(tape, state.extractor_spec, state.sim(),
                                             tape.constant(x_sim_norm), sim_leaves);
            break;
        }
    }
    const int obj = objective(tape, he, hm);

    ExtractorGrads out;
    out.value = tape.scalar(obj);
    if (!std::isfinite(out.value)) return out;  // caller aborts; no gradients
    tape.backward(obj);
    if (!real_leaves.empty())
        out.real_grads = num::collect_grads(tape, real_leaves, state.real());
    out.sim_grads = num::collect_grads(tape, sim_leaves, state.sim());
    return out;
}

}  // namespace

ExtractorGrads wd_extractor_grads(const AdaptationState& state, const Matrix& x_real_norm,
                                  const Matrix& x_sim_norm) {
    const AdaptationState& st = state;
    return extractor_objective_grads(
        state, x_real_norm, x_sim_norm, [&st](Tape& tape, int he, int hm) {
            Leaves critic_leaves;  // critic gradients computed but never applied here
            const int fe = num::mlp_forward(tape, st.critic.spec, st.critic.params, he,
                                            critic_leaves);
            const int fm = num::mlp_forward(tape, st.critic.spec, st.critic.params, hm,
                                            critic_leaves);
            return tape.sub(tape.mean_all(fe), tape.mean_all(fm));
        });
}

ExtractorGrads mmd2_grads(const AdaptationState& state, const Matrix& x_real_norm,
                          const Matrix& x_sim_norm, const std::vector<double>& bandwidths) {
    if (bandwidths.empty()) throw UsageError("kernel bandwidth list must be non-empty");
    for (double bw : bandwidths)
        if (!(bw > 0.0)) throw UsageError("kernel bandwidths must be strictly positive");
    return extractor_objective_grads(state, x_real_norm, x_sim_norm,
                                     [&bandwidths](Tape& tape, int he, int hm) {
                                         return mmd2_node(tape, he, hm, bandwidths);
                                     });
}

Matrix draw_normalized_inputs(const AdaptationState& state, const dyna::ReplayBuffer& buffer,
                              int batch, Rng& rng) {
    if (buffer.empty()) throw UsageError("cannot draw adaptation inputs from an empty buffer");
    if (batch < 1) throw UsageError("adaptation batch must be positive");
    const int width = static_cast<int>(state.input_mean.size());
    Matrix raw(batch, width);
    for (int i = 0; i < batch; ++i) {
        const dyna::Transition& t = buffer.at(rng() % buffer.size());
        if (static_cast<int>(t.s.size() + t.a.size()) != width)
            throw UsageError("buffer transition width does not match the adaptation state");
        for (std::size_t j = 0; j < t.s.size(); ++j) raw(i, static_cast<int>(j)) = t.s[j];
        for (std::size_t j = 0; j < t.a.size(); ++j)
            raw(i, static_cast<int>(t.s.size() + j)) = t.a[j];
    }
    return normalize_with(state.input_mean, state.input_std, std::move(raw));
}

CriticPhaseLog critic_phase(AdaptationState& state, const dyna::ReplayBuffer& env_buffer,
                            const dyna::ReplayBuffer& model_buffer, const AdaptationConfig& cfg,
                            std::uint64_t seed) {
    CriticPhaseLog log;
    Rng rng = make_rng(seed, "critic_batches");
    for (int step = 0; step < cfg.critic_steps; ++step) {
        const Matrix xr = draw_normalized_inputs(state, env_buffer, cfg.batch_size, rng);
        const Matrix xs = draw_normalized_inputs(state, model_buffer, cfg.batch_size, rng);
        const Matrix he = dynamics::extractor_eval(state.extractor_spec, state.real(), xr);
        const Matrix hm = dynamics::extractor_eval(state.extractor_spec, state.sim(), xs);

        double l_wd = 0.0;
        num::NamedGrads g_wd = wd_critic_grads(state.critic, he, hm, l_wd);
        const GpResult gp = gradient_penalty(state.critic, he, hm,
                                             derive_seed(seed, "gp", static_cast<std::uint64_t>(step)));
        log.l_wd = l_wd;
        log.l_gp = gp.l_gp;
        if (!std::isfinite(l_wd) || !std::isfinite(gp.l_gp)) {
            log.aborted = true;
            return log;
        }
        // Ascend |objective| - alpha * penalty. The 1-Lipschitz ball is
        // symmetric, so a potential of either sign witnesses the same
        // distance; chasing the basin the critic already sits in avoids
        // stalling against the penalty at a sign flip.
        if (l_wd >= 0.0) negate(g_wd);
        num::axpy_grads(g_wd, gp.grads, cfg.alpha);
        num::adam_step(state.critic.params, g_wd, cfg.critic_lr);
    }
    return log;
}

AdaptStepLog adapt_step(AdaptationState& state, const dyna::ReplayBuffer& env_buffer,
                        const dyna::ReplayBuffer& model_buffer, const AdaptationConfig& cfg,
                        std::uint64_t seed) {
    cfg.validate();
    if (env_buffer.empty() || model_buffer.empty())
        throw UsageError("adaptation needs non-empty real and simulated buffers");

    AdaptStepLog out;
    Rng rng = make_rng(seed, "extractor_batches");
    if (cfg.divergence == Divergence::Wasserstein1) {
        const CriticPhaseLog phase =
            critic_phase(state, env_buffer, model_buffer, cfg, derive_seed(seed, "critic_phase"));
        out.l_gp = phase.l_gp;
        if (phase.aborted) {
            out.l_div = phase.l_wd;
            out.aborted = true;
            return out;
        }
        const Matrix xr = draw_normalized_inputs(state, env_buffer, cfg.batch_size, rng);
        const Matrix xs = draw_normalized_inputs(state, model_buffer, cfg.batch_size, rng);
        ExtractorGrads grads = wd_extractor_grads(state, xr, xs);
        out.l_div = grads.value;
        if (!std::isfinite(grads.value)) {
            out.aborted = true;
            return out;
        }
        // descend the absolute objective so a negative-basin critic still
        // shrinks the measured gap
        if (grads.value < 0.0) {
            negate(grads.real_grads);
            negate(grads.sim_grads);
        }
        apply_extractor_step(state, grads, cfg.extractor_lr);
    } else {
        const Matrix xr = draw_normalized_inputs(state, env_buffer, cfg.batch_size, rng);
        const Matrix xs = draw_normalized_inputs(state, model_buffer, cfg.batch_size, rng);
        const ExtractorGrads grads = mmd2_grads(state, xr, xs, cfg.mmd_bandwidths);
        out.l_div = grads.value;
        if (!std::isfinite(grads.value)) {
            out.aborted = true;
            return out;
        }
        apply_extractor_step(state, grads, cfg.extractor_lr);
    }
    return out;
}

}  // namespace dynalab::adapt
