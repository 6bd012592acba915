#include "dynalab/net.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dynalab/errors.hpp"

namespace dynalab::num {

const char* act_name(Act a) {
    switch (a) {
        case Act::Identity: return "identity";
        case Act::Tanh: return "tanh";
        case Act::Softplus: return "softplus";
        case Act::Relu: return "relu";
    }
    return "?";
}

Act parse_act(const std::string& s) {
    if (s == "identity") return Act::Identity;
    if (s == "tanh") return Act::Tanh;
    if (s == "softplus") return Act::Softplus;
    if (s == "relu") return Act::Relu;
    throw ConfigError("unknown activation '" + s + "'");
}

MlpSpec MlpSpec::uniform(std::vector<int> sizes, Act hidden) {
    MlpSpec spec;
    spec.layer_sizes = std::move(sizes);
    if (spec.layer_sizes.size() >= 2)
        spec.activations.assign(spec.layer_sizes.size() - 2, hidden);
    spec.validate();
    return spec;
}

void MlpSpec::validate() const {
    if (layer_sizes.size() < 2) throw ConfigError("mlp needs at least input and output sizes");
    for (std::size_t i = 0; i < layer_sizes.size(); ++i)
        if (layer_sizes[i] <= 0)
            throw ConfigError("mlp layer " + std::to_string(i) + " has non-positive size");
    if (activations.size() + 2 != layer_sizes.size())
        throw ConfigError("mlp needs one activation per hidden transition");
}

void ParamStore::insert(const std::string& name, Matrix value) {
    if (contains(name)) throw UsageError("parameter '" + name + "' already present");
    Param p;
    p.m = Matrix::zeros(value.rows, value.cols);
    p.v2 = Matrix::zeros(value.rows, value.cols);
    p.value = std::move(value);
    order_.push_back(name);
    map_.emplace(name, std::move(p));
}

Param& ParamStore::param(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw UsageError("unknown parameter '" + name + "'");
    return it->second;
}

const Param& ParamStore::param(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw UsageError("unknown parameter '" + name + "'");
    return it->second;
}

std::string weight_name(int layer) { return "w" + std::to_string(layer); }
std::string bias_name(int layer) { return "b" + std::to_string(layer); }

void init_mlp(ParamStore& store, const MlpSpec& spec, Rng& rng) {
    spec.validate();
    for (int l = 0; l < spec.weight_layers(); ++l) {
        const int fan_in = spec.layer_sizes[l];
        const int fan_out = spec.layer_sizes[l + 1];
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> u(-limit, limit);
        Matrix w(fan_in, fan_out);
        for (auto& e : w.v) e = u(rng);
        store.insert(weight_name(l), std::move(w));
        store.insert(bias_name(l), Matrix::zeros(1, fan_out));
    }
}

void copy_values(const ParamStore& src, ParamStore& dst) {
    for (const auto& name : src.names()) {
        const Matrix& from = src.value(name);
        Matrix& to = dst.value(name);
        if (!to.same_shape(from)) throw UsageError("copy_values shape mismatch at '" + name + "'");
        to.v = from.v;
    }
}

namespace {

void check_shapes(const MlpSpec& spec, const ParamStore& params, int input_cols) {
    spec.validate();
    if (input_cols != spec.input_dim())
        throw ConfigError("input width " + std::to_string(input_cols) +
                          " does not match layer 0 size " + std::to_string(spec.input_dim()));
    for (int l = 0; l < spec.weight_layers(); ++l) {
        const Matrix& w = params.value(weight_name(l));
        const Matrix& b = params.value(bias_name(l));
        if (w.rows != spec.layer_sizes[l] || w.cols != spec.layer_sizes[l + 1] ||
            b.rows != 1 || b.cols != spec.layer_sizes[l + 1])
            throw ConfigError("parameter shape mismatch at layer " + std::to_string(l));
    }
}

}  // namespace

int mlp_forward(Tape& tape, const MlpSpec& spec, const ParamStore& params, int input_node,
                std::vector<std::pair<std::string, int>>& leaves) {
    check_shapes(spec, params, tape.val(input_node).cols);
    const int batch = tape.val(input_node).rows;
    int h = input_node;
    for (int l = 0; l < spec.weight_layers(); ++l) {
        const int w = tape.constant(params.value(weight_name(l)));
        const int b = tape.constant(params.value(bias_name(l)));
        leaves.emplace_back(weight_name(l), w);
        leaves.emplace_back(bias_name(l), b);
        int z = tape.add(tape.matmul(h, w), tape.broadcast_rows(b, batch));
        if (l + 1 < spec.weight_layers()) {
            switch (spec.activations[l]) {
                case Act::Identity: break;
                case Act::Tanh: z = tape.tanh(z); break;
                case Act::Softplus: z = tape.softplus(z); break;
                case Act::Relu: {
                    // max(x, 0) via the min primitive: x - min(x, 0)... cheaper
                    // as min(-x,0) negated; keep it one extra node instead.
                    const int zero = tape.constant(Matrix::zeros(tape.val(z).rows, tape.val(z).cols));
                    z = tape.sub(z, tape.minimum(z, zero));
                    break;
                }
            }
        }
        h = z;
    }
    return h;
}

Matrix mlp_eval(const MlpSpec& spec, const ParamStore& params, const Matrix& input) {
    check_shapes(spec, params, input.cols);
    Matrix h = input;
    Matrix z;
    for (int l = 0; l < spec.weight_layers(); ++l) {
        const Matrix& w = params.value(weight_name(l));
        const Matrix& b = params.value(bias_name(l));
        gemm(h, w, z);
        for (int i = 0; i < z.rows; ++i)
            for (int j = 0; j < z.cols; ++j) z(i, j) += b.v[j];
        if (l + 1 < spec.weight_layers()) {
            switch (spec.activations[l]) {
                case Act::Identity: break;
                case Act::Tanh:
                    for (auto& e : z.v) e = std::tanh(e);
                    break;
                case Act::Softplus:
                    for (auto& e : z.v)
                        e = e > 30.0 ? e : (e < -30.0 ? std::exp(e) : std::log1p(std::exp(e)));
                    break;
                case Act::Relu:
                    for (auto& e : z.v) e = e > 0.0 ? e : 0.0;
                    break;
            }
        }
        std::swap(h, z);
    }
    return h;
}

NamedGrads collect_grads(const Tape& tape, const std::vector<std::pair<std::string, int>>& leaves,
                         const ParamStore& store) {
    NamedGrads out;
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& [name, node] : leaves) {
        auto [it, fresh] = index.emplace(name, out.size());
        if (fresh) {
            const Matrix& p = store.value(name);
            out.emplace_back(name, Matrix::zeros(p.rows, p.cols));
        }
        if (const Matrix* adj = tape.adjoint(node)) {
            Matrix& acc = out[it->second].second;
            if (!acc.same_shape(*adj)) throw UsageError("gradient shape mismatch at '" + name + "'");
            for (std::size_t i = 0; i < acc.size(); ++i) acc.v[i] += adj->v[i];
        }
    }
    return out;
}

void axpy_grads(NamedGrads& acc, const NamedGrads& g, double alpha) {
    for (const auto& [name, grad] : g) {
        auto it = std::find_if(acc.begin(), acc.end(),
                               [&](const auto& e) { return e.first == name; });
        if (it == acc.end()) {
            acc.emplace_back(name, grad);
            for (auto& e : acc.back().second.v) e *= alpha;
        } else {
            if (!it->second.same_shape(grad))
                throw UsageError("gradient shape mismatch at '" + name + "'");
            for (std::size_t i = 0; i < grad.size(); ++i) it->second.v[i] += alpha * grad.v[i];
        }
    }
}

ForwardPass forward(const MlpSpec& spec, const ParamStore& params, const Matrix& input) {
    ForwardPass pass;
    pass.store = &params;
    pass.input = pass.tape.constant(input);
    pass.output = mlp_forward(pass.tape, spec, params, pass.input, pass.leaves);
    return pass;
}

Gradients backward(ForwardPass& pass, const Matrix& output_adjoint) {
    if (pass.consumed) throw UsageError("forward pass already consumed by backward()");
    pass.consumed = true;
    const Matrix& out = pass.tape.val(pass.output);
    if (!out.same_shape(output_adjoint)) throw UsageError("output adjoint shape mismatch");
    const int a = pass.tape.constant(output_adjoint);
    const int root = pass.tape.sum_all(pass.tape.mul(pass.output, a));
    pass.tape.backward(root);
    Gradients g;
    g.params = collect_grads(pass.tape, pass.leaves, *pass.store);
    const Matrix& in = pass.tape.val(pass.input);
    g.input = Matrix::zeros(in.rows, in.cols);
    if (const Matrix* adj = pass.tape.adjoint(pass.input)) g.input = *adj;
    return g;
}

InputGradResult input_gradient_norm_grad(const MlpSpec& spec, const ParamStore& params,
                                         const Matrix& input) {
    spec.validate();
    if (spec.output_dim() != 1)
        throw UsageError("input gradient norm needs a scalar-output network");
    for (Act a : spec.activations)
        if (a == Act::Relu)
            throw ConfigError("penalty path needs twice-differentiable activations, got relu");

    Tape tape;
    std::vector<std::pair<std::string, int>> leaves;
    const int x = tape.constant(input);
    const int out = mlp_forward(tape, spec, params, x, leaves);

    // Rows are independent samples, so d(sum out)/dx stacks the per-row
    // input gradients. Recorded as graph nodes to stay differentiable.
    const int s = tape.sum_all(out);
    const std::vector<int> adj = tape.backward_graph(s);
    const int gx = adj[x];
    if (gx < 0) throw NumericalError("no gradient path from output to input");

    const int sq = tape.sum_cols(tape.mul(gx, gx));
    // tiny shift keeps sqrt differentiable if a gradient vanishes
    const int norm = tape.sqrt(tape.add_scalar(sq, 1e-12));
    const int diff = tape.add_scalar(norm, -1.0);
    const int penalty = tape.mean_all(tape.mul(diff, diff));
    tape.backward(penalty);

    InputGradResult r;
    const Matrix& nv = tape.val(norm);
    r.norms.assign(nv.v.begin(), nv.v.end());
    r.penalty = tape.scalar(penalty);
    r.grads = collect_grads(tape, leaves, params);
    return r;
}

void adam_step(ParamStore& params, const NamedGrads& grads, double lr) {
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;

    if (grads.size() != params.size())
        throw UsageError("adam_step expects one gradient per parameter");
    for (const auto& [name, g] : grads) {
        Param& p = params.param(name);
        if (!p.value.same_shape(g))
            throw UsageError("gradient shape mismatch at '" + name + "'");
        if (!g.all_finite()) throw TrainingError("non-finite gradient for parameter '" + name + "'");
        p.t += 1;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(p.t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(p.t));
        for (std::size_t i = 0; i < g.size(); ++i) {
            p.m.v[i] = beta1 * p.m.v[i] + (1.0 - beta1) * g.v[i];
            p.v2.v[i] = beta2 * p.v2.v[i] + (1.0 - beta2) * g.v[i] * g.v[i];
            const double mhat = p.m.v[i] / c1;
            const double vhat = p.v2.v[i] / c2;
            p.value.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace dynalab::num
