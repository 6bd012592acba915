#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dynalab/matrix.hpp"
#include "dynalab/rng.hpp"
#include "dynalab/tape.hpp"

namespace dynalab::num {

// relu is evaluable but rejected by the double-differentiation path: the
// gradient penalty needs twice-differentiable activations.
enum class Act : std::uint8_t { Identity, Tanh, Softplus, Relu };

const char* act_name(Act a);
Act parse_act(const std::string& s);  // throws ConfigError on unknown name

// Fully-connected net given as layer sizes plus one activation per hidden
// transition; the output layer is always linear.
struct MlpSpec {
    std::vector<int> layer_sizes;
    std::vector<Act> activations;  // size layer_sizes.size() - 2

    static MlpSpec uniform(std::vector<int> sizes, Act hidden);

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
    int weight_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }

    void validate() const;  // throws ConfigError
};

struct Param {
    Matrix value;
    Matrix m;    // Adam first moment
    Matrix v2;   // Adam second moment
    std::int64_t t = 0;
};

// Insertion-ordered parameter map. Order matters for deterministic
// iteration; optimizer state is allocated at insert so the two never drift.
class ParamStore {
public:
    void insert(const std::string& name, Matrix value);  // throws UsageError on duplicate
    bool contains(const std::string& name) const { return map_.count(name) != 0; }
    const std::vector<std::string>& names() const { return order_; }

    Param& param(const std::string& name);
    const Param& param(const std::string& name) const;
    Matrix& value(const std::string& name) { return param(name).value; }
    const Matrix& value(const std::string& name) const { return param(name).value; }

    std::size_t size() const { return order_.size(); }

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Param> map_;
};

// Weight names are "w0","b0","w1","b1",... per weight layer.
std::string weight_name(int layer);
std::string bias_name(int layer);

// Xavier-uniform weights, zero biases.
void init_mlp(ParamStore& store, const MlpSpec& spec, Rng& rng);

// Copy values (not optimizer state) between same-shaped stores.
void copy_values(const ParamStore& src, ParamStore& dst);

// Append one MLP evaluation to the tape; returns the output node id.
// Each parameter becomes a fresh constant leaf recorded in `leaves`; passing
// the same vector to several forward calls of one store makes gradients
// accumulate by name (weight sharing).
int mlp_forward(Tape& tape, const MlpSpec& spec, const ParamStore& params, int input_node,
                std::vector<std::pair<std::string, int>>& leaves);

// Tape-free evaluation for hot paths (acting, eval rollouts).
Matrix mlp_eval(const MlpSpec& spec, const ParamStore& params, const Matrix& input);

using NamedGrads = std::vector<std::pair<std::string, Matrix>>;

// Adjoints of the recorded leaves, summed per name; zero-filled where no
// gradient flowed. Call after tape.backward().
NamedGrads collect_grads(const Tape& tape, const std::vector<std::pair<std::string, int>>& leaves,
                         const ParamStore& store);

// acc += alpha * g, matching by name (g may introduce new names).
void axpy_grads(NamedGrads& acc, const NamedGrads& g, double alpha);

// One completed differentiable pass: evaluate with forward(), then pull
// gradients for an arbitrary output adjoint with backward(). A pass can be
// consumed exactly once.
struct ForwardPass {
    Tape tape;
    int input = -1;
    int output = -1;
    std::vector<std::pair<std::string, int>> leaves;
    const ParamStore* store = nullptr;
    bool consumed = false;

    const Matrix& output_value() const { return tape.val(output); }
};

struct Gradients {
    NamedGrads params;
    Matrix input;
};

ForwardPass forward(const MlpSpec& spec, const ParamStore& params, const Matrix& input);
Gradients backward(ForwardPass& pass, const Matrix& output_adjoint);

// Norm of the network gradient w.r.t. each input row, and the parameter
// gradient of the penalty mean((norm - 1)^2). Requires scalar output and
// twice-differentiable activations. The input-gradient is produced by a
// reverse pass recorded as tape nodes, so the penalty admits an ordinary
// backward() through it.
struct InputGradResult {
    std::vector<double> norms;  // one per input row
    double penalty = 0.0;       // mean((norm - 1)^2)
    NamedGrads grads;
};

InputGradResult input_gradient_norm_grad(const MlpSpec& spec, const ParamStore& params,
                                         const Matrix& input);

// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8). Grads must
// cover every parameter in the store; NaN gradients raise TrainingError
// naming the parameter.
void adam_step(ParamStore& params, const NamedGrads& grads, double lr);

}  // namespace dynalab::num
