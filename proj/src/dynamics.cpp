#include "dynalab/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>

#include "dynalab/errors.hpp"

namespace dynalab::dynamics {

namespace {

double softplus_scalar(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double activate_scalar(Act act, double x) {
    switch (act) {
        case Act::Identity: return x;
        case Act::Tanh: return std::tanh(x);
        case Act::Softplus: return softplus_scalar(x);
        case Act::Relu: return x > 0.0 ? x : 0.0;
    }
    throw UsageError("unknown activation");
}

// Clamp order matters: bounding away from the max first and the min second
// makes the lower variance bound strict, which is the collapse-prone side.
double soft_clamp_scalar(double raw, double lo, double hi) {
    const double v = hi - softplus_scalar(hi - raw);
    return lo + softplus_scalar(v - lo);
}

Matrix linear_eval(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix out;
    gemm(x, w, out, false, false, false);
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j) out(i, j) += b(0, j);
    return out;
}

int tape_activation(num::Tape& tape, Act act, int z) {
    switch (act) {
        case Act::Identity: return z;
        case Act::Tanh: return tape.tanh(z);
        case Act::Softplus: return tape.softplus(z);
        case Act::Relu: {
            const Matrix& v = tape.val(z);
            const int zero = tape.constant(Matrix::zeros(v.rows, v.cols));
            return tape.sub(z, tape.minimum(z, zero));
        }
    }
    throw UsageError("unknown activation");
}

}  // namespace

void ExtractorSpec::validate() const {
    if (sizes.size() < 2) throw ConfigError("feature extractor needs at least one layer");
    for (std::size_t i = 0; i < sizes.size(); ++i)
        if (sizes[i] < 1)
            throw ConfigError("feature extractor layer " + std::to_string(i) +
                              " must be positive, got " + std::to_string(sizes[i]));
}

void EnsembleConfig::validate() const {
    if (members < 1) throw ConfigError("ensemble needs at least one member");
    if (hidden.empty()) throw ConfigError("ensemble needs at least one hidden layer");
    for (int h : hidden)
        if (h < 1) throw ConfigError("ensemble hidden widths must be positive");
    if (!(logvar_min_init < logvar_max_init))
        throw ConfigError("log-variance bounds must satisfy min < max");
    if (!(learning_rate > 0.0)) throw ConfigError("model learning rate must be positive");
    if (batch_size < 1) throw ConfigError("model batch size must be positive");
    if (patience < 1) throw ConfigError("early-stop patience must be positive");
    if (max_steps < 1) throw ConfigError("model max steps must be positive");
    if (!(validation_fraction > 0.0) || !(validation_fraction < 1.0))
        throw ConfigError("validation fraction must lie strictly between 0 and 1");
    if (max_validation < 1) throw ConfigError("validation cap must be positive");
    if (min_samples < 2) throw ConfigError("minimum sample count must be at least 2");
}

SplitNetwork make_member(int obs_dim, int act_dim, const std::vector<int>& hidden,
                         Act activation, double logvar_min_init, double logvar_max_init,
                         Rng& rng) {
    if (obs_dim < 1 || act_dim < 1) throw ConfigError("member needs positive state/action dims");
    SplitNetwork m;
    m.obs_dim = obs_dim;
    m.act_dim = act_dim;
    m.extractor_spec.sizes.push_back(obs_dim + act_dim);
    for (int h : hidden) m.extractor_spec.sizes.push_back(h);
    m.extractor_spec.activation = activation;
    m.extractor_spec.validate();

    // Xavier init reuses the MLP initializer over the extractor stack.
    num::MlpSpec stack;
    stack.layer_sizes = m.extractor_spec.sizes;
    stack.activations.assign(std::max<std::size_t>(m.extractor_spec.sizes.size(), 2) - 2,
                             activation);
    num::init_mlp(m.extractor, stack, rng);

    const int feat = m.feature_dim();
    const int d = m.target_dim();
    const double limit = std::sqrt(6.0 / (feat + 2 * d));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix w(feat, 2 * d);
    for (double& x : w.v) x = u(rng);
    m.decoder.insert("w", std::move(w));
    m.decoder.insert("b", Matrix::zeros(1, 2 * d));
    m.decoder.insert("logvar_min", Matrix::full(1, d, logvar_min_init));
    m.decoder.insert("logvar_max", Matrix::full(1, d, logvar_max_init));

    m.input_mean.assign(static_cast<std::size_t>(m.input_dim()), 0.0);
    m.input_std.assign(static_cast<std::size_t>(m.input_dim()), 1.0);
    m.target_mean.assign(static_cast<std::size_t>(d), 0.0);
    m.target_std.assign(static_cast<std::size_t>(d), 1.0);
    return m;
}

Matrix normalize_inputs(const SplitNetwork& m, const Matrix& raw) {
    if (raw.cols != m.input_dim())
        throw UsageError("input has " + std::to_string(raw.cols) + " columns, member expects " +
                         std::to_string(m.input_dim()));
    Matrix out = raw;
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j)
            out(i, j) = (out(i, j) - m.input_mean[j]) / m.input_std[j];
    return out;
}

int extractor_forward(num::Tape& tape, const ExtractorSpec& spec, const num::ParamStore& params,
                      int input_node, Leaves& leaves) {
    spec.validate();
    const int batch = tape.val(input_node).rows;
    int cur = input_node;
    const int layers = static_cast<int>(spec.sizes.size()) - 1;
    for (int l = 0; l < layers; ++l) {
        const std::string wn = num::weight_name(l);
        const std::string bn = num::bias_name(l);
        const int w = tape.constant(params.value(wn));
        const int b = tape.constant(params.value(bn));
        leaves.emplace_back(wn, w);
        leaves.emplace_back(bn, b);
        const int z = tape.add(tape.matmul(cur, w), tape.broadcast_rows(b, batch));
        cur = tape_activation(tape, spec.activation, z);
    }
    return cur;
}

Matrix extractor_eval(const ExtractorSpec& spec, const num::ParamStore& params,
                      const Matrix& normalized) {
    spec.validate();
    if (normalized.cols != spec.sizes.front())
        throw UsageError("extractor input width mismatch");
    Matrix cur = normalized;
    const int layers = static_cast<int>(spec.sizes.size()) - 1;
    for (int l = 0; l < layers; ++l) {
        Matrix z = linear_eval(cur, params.value(num::weight_name(l)),
                               params.value(num::bias_name(l)));
        for (double& x : z.v) x = activate_scalar(spec.activation, x);
        cur = std::move(z);
    }
    return cur;
}

DecoderNodes decoder_forward(num::Tape& tape, const SplitNetwork& m, int features_node,
                             Leaves& leaves) {
    const int batch = tape.val(features_node).rows;
    const int d = m.target_dim();
    const int w = tape.constant(m.decoder.value("w"));
    const int b = tape.constant(m.decoder.value("b"));
    const int lo = tape.constant(m.decoder.value("logvar_min"));
    const int hi = tape.constant(m.decoder.value("logvar_max"));
    leaves.emplace_back("w", w);
    leaves.emplace_back("b", b);
    leaves.emplace_back("logvar_min", lo);
    leaves.emplace_back("logvar_max", hi);

    const int z = tape.add(tape.matmul(features_node, w), tape.broadcast_rows(b, batch));
    DecoderNodes out;
    out.mean = tape.slice_cols(z, 0, d);
    const int raw = tape.slice_cols(z, d, 2 * d);
    const int hi_b = tape.broadcast_rows(hi, batch);
    const int lo_b = tape.broadcast_rows(lo, batch);
    const int below_max = tape.sub(hi_b, tape.softplus(tape.sub(hi_b, raw)));
    out.log_var = tape.add(lo_b, tape.softplus(tape.sub(below_max, lo_b)));
    return out;
}

namespace {

// Tape-free decoder readout: mean and clamped log-variance matrices.
void decoder_eval(const SplitNetwork& m, const Matrix& features, Matrix& mean, Matrix& log_var) {
    const int d = m.target_dim();
    const Matrix z = linear_eval(features, m.decoder.value("w"), m.decoder.value("b"));
    const Matrix& lo = m.decoder.value("logvar_min");
    const Matrix& hi = m.decoder.value("logvar_max");
    mean = Matrix::zeros(z.rows, d);
    log_var = Matrix::zeros(z.rows, d);
    for (int i = 0; i < z.rows; ++i)
        for (int j = 0; j < d; ++j) {
            mean(i, j) = z(i, j);
            log_var(i, j) = soft_clamp_scalar(z(i, j + d), lo(0, j), hi(0, j));
        }
}

Matrix row_matrix(const std::vector<double>& s, const std::vector<double>& a) {
    Matrix x(1, static_cast<int>(s.size() + a.size()));
    for (std::size_t j = 0; j < s.size(); ++j) x.v[j] = s[j];
    for (std::size_t j = 0; j < a.size(); ++j) x.v[s.size() + j] = a[j];
    return x;
}

}  // namespace

GaussianHead predict(const SplitNetwork& m, const std::vector<double>& s,
                     const std::vector<double>& a) {
    return decode_features(m, extract_features(m, s, a));
}

GaussianHead decode_features(const SplitNetwork& m, const std::vector<double>& features) {
    if (static_cast<int>(features.size()) != m.feature_dim())
        throw UsageError("feature vector width does not match the extractor output");
    Matrix h(1, m.feature_dim());
    h.v.assign(features.begin(), features.end());
    Matrix mean, log_var;
    decoder_eval(m, h, mean, log_var);
    GaussianHead head;
    head.mean.assign(mean.v.begin(), mean.v.end());
    head.log_var.assign(log_var.v.begin(), log_var.v.end());
    // back to raw target units: x_raw = x_std * sigma + mu scales the
    // variance by sigma^2
    for (std::size_t j = 0; j < head.mean.size(); ++j) {
        head.mean[j] = head.mean[j] * m.target_std[j] + m.target_mean[j];
        head.log_var[j] += 2.0 * std::log(m.target_std[j]);
    }
    return head;
}

std::pair<std::vector<double>, double> sample_next(const GaussianHead& head,
                                                   const std::vector<double>& s, Rng& rng) {
    if (head.mean.size() != head.log_var.size() || head.mean.size() != s.size() + 1)
        throw UsageError("head dimension does not match state dimension + reward");
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> s_next(s.size());
    double reward = 0.0;
    for (std::size_t j = 0; j < head.mean.size(); ++j) {
        const double draw = head.mean[j] + std::exp(0.5 * head.log_var[j]) * n(rng);
        if (j < s.size())
            s_next[j] = s[j] + draw;
        else
            reward = draw;
    }
    return {std::move(s_next), reward};
}

std::vector<double> extract_features(const SplitNetwork& m, const std::vector<double>& s,
                                     const std::vector<double>& a) {
    if (static_cast<int>(s.size()) != m.obs_dim || static_cast<int>(a.size()) != m.act_dim)
        throw UsageError("extract_features called with mismatched dimensions");
    const Matrix x = normalize_inputs(m, row_matrix(s, a));
    const Matrix h = extractor_eval(m.extractor_spec, m.extractor, x);
    return std::vector<double>(h.v.begin(), h.v.end());
}

NllResult nll_loss(const SplitNetwork& m, const Matrix& normalized_inputs, const Matrix& targets) {
    if (normalized_inputs.rows < 1) throw UsageError("loss needs a non-empty batch");
    if (normalized_inputs.rows != targets.rows || targets.cols != m.target_dim() ||
        normalized_inputs.cols != m.input_dim())
        throw UsageError("loss batch shapes do not match member dimensions");

    thread_local num::Tape tape;
    tape.reset();
    const int x = tape.constant(normalized_inputs);
    Leaves ext_leaves, dec_leaves;
    const int h = extractor_forward(tape, m.extractor_spec, m.extractor, x, ext_leaves);
    const DecoderNodes dn = decoder_forward(tape, m, h, dec_leaves);
    const int t = tape.constant(targets);
    const int diff = tape.sub(dn.mean, t);
    const int inv_var = tape.exp(tape.scale(dn.log_var, -1.0));
    const int maha = tape.mul(tape.mul(diff, diff), inv_var);
    const int per_entry = tape.add(maha, dn.log_var);
    const int loss = tape.scale(tape.sum_all(per_entry), 1.0 / normalized_inputs.rows);

    NllResult out;
    out.loss = tape.scalar(loss);
    if (!std::isfinite(out.loss)) {
        double worst = 0.0;
        for (double v : tape.val(dn.mean).v) worst = std::max(worst, std::fabs(v));
        throw TrainingError("non-finite dynamics loss on a batch of " +
                            std::to_string(normalized_inputs.rows) + " (max |mean| " +
                            std::to_string(worst) + ")");
    }
    tape.backward(loss);
    out.extractor_grads = num::collect_grads(tape, ext_leaves, m.extractor);
    out.decoder_grads = num::collect_grads(tape, dec_leaves, m.decoder);
    return out;
}

double nll_value(const SplitNetwork& m, const Matrix& normalized_inputs, const Matrix& targets) {
    if (normalized_inputs.rows < 1) throw UsageError("loss needs a non-empty batch");
    if (normalized_inputs.rows != targets.rows || targets.cols != m.target_dim() ||
        normalized_inputs.cols != m.input_dim())
        throw UsageError("loss batch shapes do not match member dimensions");
    const Matrix h = extractor_eval(m.extractor_spec, m.extractor, normalized_inputs);
    Matrix mean, log_var;
    decoder_eval(m, h, mean, log_var);
    double acc = 0.0;
    for (int i = 0; i < mean.rows; ++i)
        for (int j = 0; j < mean.cols; ++j) {
            const double d = mean(i, j) - targets(i, j);
            acc += d * d * std::exp(-log_var(i, j)) + log_var(i, j);
        }
    return acc / mean.rows;
}

DynamicsEnsemble make_ensemble(const EnsembleConfig& cfg, int obs_dim, int act_dim,
                               std::uint64_t master_seed) {
    cfg.validate();
    DynamicsEnsemble e;
    e.obs_dim = obs_dim;
    e.act_dim = act_dim;
    for (int b = 0; b < cfg.members; ++b) {
        Rng rng = make_rng(master_seed, "model_init", static_cast<std::uint64_t>(b));
        e.members.push_back(make_member(obs_dim, act_dim, cfg.hidden, cfg.activation,
                                        cfg.logvar_min_init, cfg.logvar_max_init, rng));
    }
    e.bootstrap_assignments.assign(static_cast<std::size_t>(cfg.members), {});
    return e;
}

double TrainReport::mean_val_loss() const {
    double acc = 0.0;
    for (const auto& m : members) acc += m.val_after;
    return members.empty() ? 0.0 : acc / static_cast<double>(members.size());
}

double TrainReport::mean_train_loss() const {
    double acc = 0.0;
    for (const auto& m : members) acc += m.train_final;
    return members.empty() ? 0.0 : acc / static_cast<double>(members.size());
}

namespace {

void gather_rows(const Matrix& src, const std::vector<std::size_t>& rows, Matrix& dst) {
    dst.reshape(static_cast<int>(rows.size()), src.cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < src.cols; ++j)
            dst(static_cast<int>(i), j) = src(static_cast<int>(rows[i]), j);
}

}  // namespace

TrainReport train_ensemble(DynamicsEnsemble& ensemble, const dyna::ReplayBuffer& env_buffer,
                           const EnsembleConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t n = env_buffer.size();
    if (static_cast<int>(n) < cfg.min_samples)
        throw UsageError("model training needs at least " + std::to_string(cfg.min_samples) +
                         " samples, buffer has " + std::to_string(n));
    if (ensemble.members.empty()) throw UsageError("ensemble has no members");

    TrainReport report;

    // Raw data matrices straight from the buffer snapshot.
    const int in_dim = ensemble.obs_dim + ensemble.act_dim;
    const int out_dim = ensemble.obs_dim + 1;
    Matrix inputs(static_cast<int>(n), in_dim);
    Matrix targets(static_cast<int>(n), out_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const dyna::Transition& tr = env_buffer.at(i);
        for (int j = 0; j < ensemble.obs_dim; ++j) {
            inputs(static_cast<int>(i), j) = tr.s[static_cast<std::size_t>(j)];
            targets(static_cast<int>(i), j) =
                tr.s_next[static_cast<std::size_t>(j)] - tr.s[static_cast<std::size_t>(j)];
        }
        for (int j = 0; j < ensemble.act_dim; ++j)
            inputs(static_cast<int>(i), ensemble.obs_dim + j) = tr.a[static_cast<std::size_t>(j)];
        targets(static_cast<int>(i), ensemble.obs_dim) = tr.r;
    }

    // Refresh normalization statistics from the full buffer.
    std::vector<double> mean(static_cast<std::size_t>(in_dim), 0.0);
    std::vector<double> stdev(static_cast<std::size_t>(in_dim), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < in_dim; ++j) mean[j] += inputs(static_cast<int>(i), j);
    for (double& v : mean) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < in_dim; ++j) {
            const double d = inputs(static_cast<int>(i), j) - mean[j];
            stdev[j] += d * d;
        }
    for (int j = 0; j < in_dim; ++j) {
        stdev[j] = std::sqrt(stdev[j] / static_cast<double>(n));
        if (stdev[j] < 1e-8) {
            stdev[j] = 1.0;
            report.warnings.push_back("input dimension " + std::to_string(j) +
                                      " has zero variance; left unnormalized");
        }
    }
    std::vector<double> t_mean(static_cast<std::size_t>(out_dim), 0.0);
    std::vector<double> t_std(static_cast<std::size_t>(out_dim), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < out_dim; ++j) t_mean[j] += targets(static_cast<int>(i), j);
    for (double& v : t_mean) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < out_dim; ++j) {
            const double d = targets(static_cast<int>(i), j) - t_mean[j];
            t_std[j] += d * d;
        }
    for (int j = 0; j < out_dim; ++j) {
        t_std[j] = std::sqrt(t_std[j] / static_cast<double>(n));
        if (t_std[j] < 1e-8) {
            t_std[j] = 1.0;
            report.warnings.push_back("target dimension " + std::to_string(j) +
                                      " has zero variance; left unstandardized");
        }
    }

    for (auto& member : ensemble.members) {
        member.input_mean = mean;
        member.input_std = stdev;
        member.target_mean = t_mean;
        member.target_std = t_std;
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (int j = 0; j < in_dim; ++j)
            inputs(static_cast<int>(i), j) = (inputs(static_cast<int>(i), j) - mean[j]) / stdev[j];
        for (int j = 0; j < out_dim; ++j)
            targets(static_cast<int>(i), j) =
                (targets(static_cast<int>(i), j) - t_mean[j]) / t_std[j];
    }

    // One fresh validation split shared by the whole event; members bootstrap
    // from the remaining pool so early stopping is gated by unseen data.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng split_rng = make_rng(seed, "val_split");
    for (std::size_t i = n; i > 1; --i)
        std::swap(perm[i - 1], perm[split_rng() % i]);
    std::size_t n_val = static_cast<std::size_t>(
        std::llround(cfg.validation_fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    n_val = std::min<std::size_t>(n_val, static_cast<std::size_t>(cfg.max_validation));
    const std::vector<std::size_t> val_idx(perm.begin(), perm.begin() + n_val);
    const std::vector<std::size_t> pool(perm.begin() + n_val, perm.end());

    Matrix val_x, val_t, batch_x, batch_t;
    gather_rows(inputs, val_idx, val_x);
    gather_rows(targets, val_idx, val_t);

    ensemble.bootstrap_assignments.assign(ensemble.members.size(), {});
    report.members.resize(ensemble.members.size());

    for (std::size_t b = 0; b < ensemble.members.size(); ++b) {
        SplitNetwork& member = ensemble.members[b];
        MemberReport& mr = report.members[b];

        Rng boot_rng = make_rng(seed, "bootstrap", static_cast<std::uint64_t>(b));
        std::vector<std::size_t>& assign = ensemble.bootstrap_assignments[b];
        assign.resize(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) assign[i] = pool[boot_rng() % pool.size()];

        Rng step_rng = make_rng(seed, "member_train", static_cast<std::uint64_t>(b));
        const int batch = std::min<int>(cfg.batch_size, static_cast<int>(assign.size()));
        std::vector<std::size_t> batch_idx(static_cast<std::size_t>(batch));

        mr.val_before = nll_value(member, val_x, val_t);
        double best = mr.val_before;
        num::ParamStore best_ext = member.extractor;
        num::ParamStore best_dec = member.decoder;
        int since_best = 0;

        while (mr.steps < cfg.max_steps && since_best < cfg.patience) {
            for (auto& idx : batch_idx) idx = assign[step_rng() % assign.size()];
            gather_rows(inputs, batch_idx, batch_x);
            gather_rows(targets, batch_idx, batch_t);
            const NllResult res = nll_loss(member, batch_x, batch_t);
            num::adam_step(member.extractor, res.extractor_grads, cfg.learning_rate);
            num::adam_step(member.decoder, res.decoder_grads, cfg.learning_rate);
            mr.train_final = res.loss;
            ++mr.steps;

            const double val = nll_value(member, val_x, val_t);
            if (val < best) {
                best = val;
                num::copy_values(member.extractor, best_ext);
                num::copy_values(member.decoder, best_dec);
                since_best = 0;
            } else {
                ++since_best;
            }
        }

        num::copy_values(best_ext, member.extractor);
        num::copy_values(best_dec, member.decoder);
        mr.val_after = best;
        mr.regressed = mr.val_after > mr.val_before;
    }
    return report;
}

int EnsembleModel::member_count() const { return static_cast<int>(e_->members.size()); }

void EnsembleModel::sample_next(int member, const std::vector<double>& s,
                                const std::vector<double>& a, Rng& rng,
                                std::vector<double>& s_next, double& r) {
    if (member < 0 || member >= member_count())
        throw UsageError("model member index " + std::to_string(member) + " out of range");
    const GaussianHead head = predict(e_->members[static_cast<std::size_t>(member)], s, a);
    auto [ns, reward] = dynamics::sample_next(head, s, rng);
    s_next = std::move(ns);
    r = reward;
}

}  // namespace dynalab::dynamics
