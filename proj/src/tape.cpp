#include "dynalab/tape.hpp"

#include <cmath>
#include <string>

#include "dynalab/errors.hpp"

namespace dynalab::num {

namespace {

double sigmoid_scalar(double x) {
    if (x >= 0) {
        const double z = std::exp(-x);
        return 1.0 / (1.0 + z);
    }
    const double z = std::exp(x);
    return z / (1.0 + z);
}

// log(1 + e^x) without overflow
double softplus_scalar(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

}  // namespace

int Tape::push(Op op, int a, int b, double c, int i0, int i1) {
    if (used_ == static_cast<int>(nodes_.size())) nodes_.emplace_back();
    Node& n = nodes_[used_];
    n.op = op;
    n.a = a;
    n.b = b;
    n.c = c;
    n.i0 = i0;
    n.i1 = i1;
    return used_++;
}

Node& Tape::node(int id) { return nodes_[id]; }
const Node& Tape::node(int id) const { return nodes_[id]; }

void Tape::check_id(int id) const {
    if (id < 0 || id >= used_) throw UsageError("tape: node id " + std::to_string(id) + " out of range");
}

const Matrix& Tape::val(int id) const {
    check_id(id);
    return nodes_[id].val;
}

double Tape::scalar(int id) const {
    const Matrix& m = val(id);
    if (m.rows != 1 || m.cols != 1) throw UsageError("tape: scalar() on non-1x1 node");
    return m.v[0];
}

int Tape::constant(const Matrix& m) {
    const int id = push(Op::Constant, -1, -1, 0, 0, 0);
    node(id).val = m;
    return id;
}

int Tape::constant(Matrix&& m) {
    const int id = push(Op::Constant, -1, -1, 0, 0, 0);
    node(id).val = std::move(m);
    return id;
}

int Tape::scalar_constant(double x) {
    const int id = push(Op::Constant, -1, -1, 0, 0, 0);
    node(id).val.reshape(1, 1);
    node(id).val.v[0] = x;
    return id;
}

// NOTE for all builders: push() can grow nodes_, so references into the tape
// are taken only after it.

int Tape::matmul(int a, int b) {
    check_id(a);
    check_id(b);
    const int id = push(Op::MatMul, a, b, 0, 0, 0);
    gemm(node(a).val, node(b).val, node(id).val);
    return id;
}

int Tape::transpose(int a) {
    check_id(a);
    const int id = push(Op::Transpose, a, -1, 0, 0, 0);
    const Matrix& x = node(a).val;
    Matrix& out = node(id).val;
    out.reshape(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out(j, i) = x(i, j);
    return id;
}

#define DYNALAB_BINARY_ELEMWISE(NAME, OPK, EXPR)                                  \
    int Tape::NAME(int a, int b) {                                               \
        check_id(a);                                                             \
        check_id(b);                                                             \
        if (!node(a).val.same_shape(node(b).val))                                \
            throw UsageError("tape: " #NAME " shape mismatch");                  \
        const int id = push(OPK, a, b, 0, 0, 0);                                 \
        const Matrix& x = node(a).val;                                           \
        const Matrix& y = node(b).val;                                           \
        Matrix& out = node(id).val;                                              \
        out.reshape(x.rows, x.cols);                                             \
        const std::size_t n = x.size();                                          \
        for (std::size_t i = 0; i < n; ++i) out.v[i] = EXPR;                     \
        return id;                                                               \
    }

DYNALAB_BINARY_ELEMWISE(add, Op::Add, x.v[i] + y.v[i])
DYNALAB_BINARY_ELEMWISE(sub, Op::Sub, x.v[i] - y.v[i])
DYNALAB_BINARY_ELEMWISE(mul, Op::Mul, x.v[i] * y.v[i])
DYNALAB_BINARY_ELEMWISE(div, Op::Div, x.v[i] / y.v[i])
DYNALAB_BINARY_ELEMWISE(minimum, Op::Minimum, x.v[i] < y.v[i] ? x.v[i] : y.v[i])

#undef DYNALAB_BINARY_ELEMWISE

#define DYNALAB_UNARY_ELEMWISE(NAME, OPK, EXPR)               \
    int Tape::NAME(int a) {                                   \
        check_id(a);                                          \
        const int id = push(OPK, a, -1, 0, 0, 0);             \
        const Matrix& x = node(a).val;                        \
        Matrix& out = node(id).val;                           \
        out.reshape(x.rows, x.cols);                          \
        const std::size_t n = x.size();                       \
        for (std::size_t i = 0; i < n; ++i) out.v[i] = EXPR;  \
        return id;                                            \
    }

DYNALAB_UNARY_ELEMWISE(exp, Op::Exp, std::exp(x.v[i]))
DYNALAB_UNARY_ELEMWISE(log, Op::Log, std::log(x.v[i]))
DYNALAB_UNARY_ELEMWISE(tanh, Op::Tanh, std::tanh(x.v[i]))
DYNALAB_UNARY_ELEMWISE(sigmoid, Op::Sigmoid, sigmoid_scalar(x.v[i]))
DYNALAB_UNARY_ELEMWISE(softplus, Op::Softplus, softplus_scalar(x.v[i]))
DYNALAB_UNARY_ELEMWISE(sqrt, Op::Sqrt, std::sqrt(x.v[i]))

#undef DYNALAB_UNARY_ELEMWISE

int Tape::scale(int a, double c) {
    check_id(a);
    const int id = push(Op::Scale, a, -1, c, 0, 0);
    const Matrix& x = node(a).val;
    Matrix& out = node(id).val;
    out.reshape(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) out.v[i] = c * x.v[i];
    return id;
}

int Tape::add_scalar(int a, double c) {
    check_id(a);
    const int id = push(Op::AddScalar, a, -1, c, 0, 0);
    const Matrix& x = node(a).val;
    Matrix& out = node(id).val;
    out.reshape(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) out.v[i] = x.v[i] + c;
    return id;
}

int Tape::sum_all(int a) {
    check_id(a);
    const int id = push(Op::SumAll, a, -1, 0, 0, 0);
    const Matrix& x = node(a).val;
    Matrix& out = node(id).val;
    out.reshape(1, 1);
    double s = 0;
    for (double e : x.v) s += e;
    out.v[0] = s;
    return id;
}

int Tape::sum_rows(int a) {
    check_id(a);
    const int id = push(Op::SumRows, a, -1, 0, 0, 0);
    const Matrix& x = node(a).val;
    Matrix& out = node(id).val;
    out.reshape(1, x.cols);
    out.set_zero();
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out.v[j] += x(i, j);
    return id;
}

int Tape::sum_cols(int a) {
    check_id(a);
    const int id = push(Op::SumCols, a, -1, 0, 0, 0);
    const Matrix& x = node(a).val;
    Matrix& out = node(id).val;
    out.reshape(x.rows, 1);
    for (int i = 0; i < x.rows; ++i) {
        double s = 0;
        for (int j = 0; j < x.cols; ++j) s += x(i, j);
        out.v[i] = s;
    }
    return id;
}

int Tape::broadcast_rows(int a, int m) {
    check_id(a);
    if (node(a).val.rows != 1) throw UsageError("tape: broadcast_rows expects a 1 x n input");
    const int id = push(Op::BroadcastRows, a, -1, 0, m, 0);
    const Matrix& x = node(a).val;
    Matrix& out = node(id).val;
    out.reshape(m, x.cols);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < x.cols; ++j) out(i, j) = x.v[j];
    return id;
}

int Tape::broadcast_cols(int a, int n) {
    check_id(a);
    if (node(a).val.cols != 1) throw UsageError("tape: broadcast_cols expects an m x 1 input");
    const int id = push(Op::BroadcastCols, a, -1, 0, n, 0);
    const Matrix& x = node(a).val;
    Matrix& out = node(id).val;
    out.reshape(x.rows, n);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < n; ++j) out(i, j) = x.v[i];
    return id;
}

int Tape::broadcast_all(int a, int m, int n) {
    check_id(a);
    if (node(a).val.rows != 1 || node(a).val.cols != 1)
        throw UsageError("tape: broadcast_all expects a 1 x 1 input");
    const int id = push(Op::BroadcastAll, a, -1, 0, m, n);
    const double x0 = node(a).val.v[0];
    Matrix& out = node(id).val;
    out.reshape(m, n);
    std::fill(out.v.begin(), out.v.end(), x0);
    return id;
}

int Tape::hcat(int a, int b) {
    check_id(a);
    check_id(b);
    if (node(a).val.rows != node(b).val.rows) throw UsageError("tape: hcat row mismatch");
    const int id = push(Op::HCat, a, b, 0, 0, 0);
    const Matrix& x = node(a).val;
    const Matrix& y = node(b).val;
    Matrix& out = node(id).val;
    out.reshape(x.rows, x.cols + y.cols);
    for (int i = 0; i < x.rows; ++i) {
        for (int j = 0; j < x.cols; ++j) out(i, j) = x(i, j);
        for (int j = 0; j < y.cols; ++j) out(i, x.cols + j) = y(i, j);
    }
    return id;
}

int Tape::slice_cols(int a, int c0, int c1) {
    check_id(a);
    if (c0 < 0 || c1 > node(a).val.cols || c0 >= c1) throw UsageError("tape: slice_cols bad range");
    const int id = push(Op::SliceCols, a, -1, 0, c0, c1);
    const Matrix& x = node(a).val;
    Matrix& out = node(id).val;
    out.reshape(x.rows, c1 - c0);
    for (int i = 0; i < x.rows; ++i)
        for (int j = c0; j < c1; ++j) out(i, j - c0) = x(i, j);
    return id;
}

int Tape::pad_cols(int a, int offset, int width) {
    check_id(a);
    if (offset < 0 || offset + node(a).val.cols > width)
        throw UsageError("tape: pad_cols bad range");
    const int id = push(Op::PadCols, a, -1, 0, offset, width);
    const Matrix& x = node(a).val;
    Matrix& out = node(id).val;
    out.reshape(x.rows, width);
    out.set_zero();
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out(i, offset + j) = x(i, j);
    return id;
}

int Tape::mean_all(int a) {
    check_id(a);
    const double n = static_cast<double>(node(a).val.size());
    return scale(sum_all(a), 1.0 / n);
}

// ---------------------------------------------------------------------------
// Fast backward
// ---------------------------------------------------------------------------

Matrix& Tape::adj_slot(int id, int rows, int cols) {
    Matrix& m = adj_[id];
    if (!has_adj_[id]) {
        m.reshape(rows, cols);
        m.set_zero();
        has_adj_[id] = 1;
    }
    return m;
}

void Tape::backward(int root) {
    check_id(root);
    if (node(root).val.rows != 1 || node(root).val.cols != 1)
        throw UsageError("tape: backward root must be 1x1");
    if (static_cast<int>(adj_.size()) < used_) {
        adj_.resize(used_);
        has_adj_.resize(used_);
    }
    std::fill(has_adj_.begin(), has_adj_.begin() + used_, 0);
    adj_slot(root, 1, 1).v[0] = 1.0;
    for (int i = root; i >= 0; --i)
        if (has_adj_[i]) vjp(i);
}

const Matrix* Tape::adjoint(int id) const {
    if (id < 0 || id >= static_cast<int>(adj_.size()) || !has_adj_[id]) return nullptr;
    return &adj_[id];
}

void Tape::vjp(int id) {
    const Node& n = nodes_[id];
    const Matrix& g = adj_[id];
    switch (n.op) {
        case Op::Constant:
            break;
        case Op::MatMul: {
            const Matrix& av = node(n.a).val;
            const Matrix& bv = node(n.b).val;
            gemm(g, bv, adj_slot(n.a, av.rows, av.cols), false, true, true);
            gemm(av, g, adj_slot(n.b, bv.rows, bv.cols), true, false, true);
            break;
        }
        case Op::Transpose: {
            const Matrix& av = node(n.a).val;
            Matrix& da = adj_slot(n.a, av.rows, av.cols);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) da(j, i) += g(i, j);
            break;
        }
        case Op::Add: {
            Matrix& da = adj_slot(n.a, g.rows, g.cols);
            Matrix& db = adj_slot(n.b, g.rows, g.cols);
            for (std::size_t i = 0; i < g.size(); ++i) {
                da.v[i] += g.v[i];
                db.v[i] += g.v[i];
            }
            break;
        }
        case Op::Sub: {
            Matrix& da = adj_slot(n.a, g.rows, g.cols);
            Matrix& db = adj_slot(n.b, g.rows, g.cols);
            for (std::size_t i = 0; i < g.size(); ++i) {
                da.v[i] += g.v[i];
                db.v[i] -= g.v[i];
            }
            break;
        }
        case Op::Mul: {
            const Matrix& av = node(n.a).val;
            const Matrix& bv = node(n.b).val;
            Matrix& da = adj_slot(n.a, g.rows, g.cols);
            Matrix& db = adj_slot(n.b, g.rows, g.cols);
            for (std::size_t i = 0; i < g.size(); ++i) {
                da.v[i] += g.v[i] * bv.v[i];
                db.v[i] += g.v[i] * av.v[i];
            }
            break;
        }
        case Op::Div: {
            const Matrix& bv = node(n.b).val;
            const Matrix& cv = n.val;
            Matrix& da = adj_slot(n.a, g.rows, g.cols);
            Matrix& db = adj_slot(n.b, g.rows, g.cols);
            for (std::size_t i = 0; i < g.size(); ++i) {
                da.v[i] += g.v[i] / bv.v[i];
                db.v[i] -= g.v[i] * cv.v[i] / bv.v[i];
            }
            break;
        }
        case Op::Scale: {
            Matrix& da = adj_slot(n.a, g.rows, g.cols);
            for (std::size_t i = 0; i < g.size(); ++i) da.v[i] += n.c * g.v[i];
            break;
        }
        case Op::AddScalar: {
            Matrix& da = adj_slot(n.a, g.rows, g.cols);
            for (std::size_t i = 0; i < g.size(); ++i) da.v[i] += g.v[i];
            break;
        }
        case Op::Exp: {
            Matrix& da = adj_slot(n.a, g.rows, g.cols);
            for (std::size_t i = 0; i < g.size(); ++i) da.v[i] += g.v[i] * n.val.v[i];
            break;
        }
        case Op::Log: {
            const Matrix& av = node(n.a).val;
            Matrix& da = adj_slot(n.a, g.rows, g.cols);
            for (std::size_t i = 0; i < g.size(); ++i) da.v[i] += g.v[i] / av.v[i];
            break;
        }
        case Op::Tanh: {
            Matrix& da = adj_slot(n.a, g.rows, g.cols);
            for (std::size_t i = 0; i < g.size(); ++i)
                da.v[i] += g.v[i] * (1.0 - n.val.v[i] * n.val.v[i]);
            break;
        }
        case Op::Sigmoid: {
            Matrix& da = adj_slot(n.a, g.rows, g.cols);
            for (std::size_t i = 0; i < g.size(); ++i)
                da.v[i] += g.v[i] * n.val.v[i] * (1.0 - n.val.v[i]);
            break;
        }
        case Op::Softplus: {
            const Matrix& av = node(n.a).val;
            Matrix& da = adj_slot(n.a, g.rows, g.cols);
            for (std::size_t i = 0; i < g.size(); ++i)
                da.v[i] += g.v[i] * sigmoid_scalar(av.v[i]);
            break;
        }
        case Op::Sqrt: {
            Matrix& da = adj_slot(n.a, g.rows, g.cols);
            for (std::size_t i = 0; i < g.size(); ++i)
                da.v[i] += 0.5 * g.v[i] / n.val.v[i];
            break;
        }
        case Op::Minimum: {
            const Matrix& av = node(n.a).val;
            const Matrix& bv = node(n.b).val;
            Matrix& da = adj_slot(n.a, g.rows, g.cols);
            Matrix& db = adj_slot(n.b, g.rows, g.cols);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double w = av.v[i] < bv.v[i] ? 1.0 : (av.v[i] > bv.v[i] ? 0.0 : 0.5);
                da.v[i] += g.v[i] * w;
                db.v[i] += g.v[i] * (1.0 - w);
            }
            break;
        }
        case Op::SumAll: {
            const Matrix& av = node(n.a).val;
            Matrix& da = adj_slot(n.a, av.rows, av.cols);
            const double s = g.v[0];
            for (auto& e : da.v) e += s;
            break;
        }
        case Op::SumRows: {
            const Matrix& av = node(n.a).val;
            Matrix& da = adj_slot(n.a, av.rows, av.cols);
            for (int i = 0; i < av.rows; ++i)
                for (int j = 0; j < av.cols; ++j) da(i, j) += g.v[j];
            break;
        }
        case Op::SumCols: {
            const Matrix& av = node(n.a).val;
            Matrix& da = adj_slot(n.a, av.rows, av.cols);
            for (int i = 0; i < av.rows; ++i)
                for (int j = 0; j < av.cols; ++j) da(i, j) += g.v[i];
            break;
        }
        case Op::BroadcastRows: {
            const Matrix& av = node(n.a).val;
            Matrix& da = adj_slot(n.a, 1, av.cols);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) da.v[j] += g(i, j);
            break;
        }
        case Op::BroadcastCols: {
            const Matrix& av = node(n.a).val;
            Matrix& da = adj_slot(n.a, av.rows, 1);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) da.v[i] += g(i, j);
            break;
        }
        case Op::BroadcastAll: {
            Matrix& da = adj_slot(n.a, 1, 1);
            double s = 0;
            for (double e : g.v) s += e;
            da.v[0] += s;
            break;
        }
        case Op::HCat: {
            const Matrix& av = node(n.a).val;
            const Matrix& bv = node(n.b).val;
            Matrix& da = adj_slot(n.a, av.rows, av.cols);
            Matrix& db = adj_slot(n.b, bv.rows, bv.cols);
            for (int i = 0; i < g.rows; ++i) {
                for (int j = 0; j < av.cols; ++j) da(i, j) += g(i, j);
                for (int j = 0; j < bv.cols; ++j) db(i, j) += g(i, av.cols + j);
            }
            break;
        }
        case Op::SliceCols: {
            const Matrix& av = node(n.a).val;
            Matrix& da = adj_slot(n.a, av.rows, av.cols);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) da(i, n.i0 + j) += g(i, j);
            break;
        }
        case Op::PadCols: {
            const Matrix& av = node(n.a).val;
            Matrix& da = adj_slot(n.a, av.rows, av.cols);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < av.cols; ++j) da(i, j) += g(i, n.i0 + j);
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// Graph-building backward
// ---------------------------------------------------------------------------

std::vector<int> Tape::backward_graph(int root) {
    check_id(root);
    if (node(root).val.rows != 1 || node(root).val.cols != 1)
        throw UsageError("tape: backward_graph root must be 1x1");
    const int n0 = used_;
    std::vector<int> gadj(n0, -1);
    auto accum = [&](int target, int contrib) {
        if (target < 0) return;
        gadj[target] = gadj[target] < 0 ? contrib : add(gadj[target], contrib);
    };
    gadj[root] = scalar_constant(1.0);
    for (int i = root; i >= 0; --i) {
        if (gadj[i] < 0) continue;
        const int g = gadj[i];
        // copy fields: pushes during accumulation may reallocate nodes_
        const Op op = nodes_[i].op;
        const int na = nodes_[i].a;
        const int nb = nodes_[i].b;
        const double nc = nodes_[i].c;
        const int ni0 = nodes_[i].i0;
        switch (op) {
            case Op::Constant:
                break;
            case Op::MatMul:
                accum(na, matmul(g, transpose(nb)));
                accum(nb, matmul(transpose(na), g));
                break;
            case Op::Transpose:
                accum(na, transpose(g));
                break;
            case Op::Add:
                accum(na, g);
                accum(nb, g);
                break;
            case Op::Sub:
                accum(na, g);
                accum(nb, scale(g, -1.0));
                break;
            case Op::Mul:
                accum(na, mul(g, nb));
                accum(nb, mul(g, na));
                break;
            case Op::Div:
                accum(na, div(g, nb));
                accum(nb, scale(mul(g, div(i, nb)), -1.0));
                break;
            case Op::Scale:
                accum(na, scale(g, nc));
                break;
            case Op::AddScalar:
                accum(na, g);
                break;
            case Op::Exp:
                accum(na, mul(g, i));
                break;
            case Op::Log:
                accum(na, div(g, na));
                break;
            case Op::Tanh:
                accum(na, mul(g, add_scalar(scale(mul(i, i), -1.0), 1.0)));
                break;
            case Op::Sigmoid:
                accum(na, mul(g, mul(i, add_scalar(scale(i, -1.0), 1.0))));
                break;
            case Op::Softplus:
                accum(na, mul(g, sigmoid(na)));
                break;
            case Op::Sqrt:
                accum(na, scale(div(g, i), 0.5));
                break;
            case Op::Minimum: {
                // selection mask is piecewise constant; exact a.e.
                Matrix mask, inv;
                {
                    const Matrix& av = node(na).val;
                    const Matrix& bv = node(nb).val;
                    mask.reshape(av.rows, av.cols);
                    inv.reshape(av.rows, av.cols);
                    for (std::size_t k = 0; k < av.size(); ++k) {
                        mask.v[k] = av.v[k] < bv.v[k] ? 1.0 : (av.v[k] > bv.v[k] ? 0.0 : 0.5);
                        inv.v[k] = 1.0 - mask.v[k];
                    }
                }
                accum(na, mul(g, constant(std::move(mask))));
                accum(nb, mul(g, constant(std::move(inv))));
                break;
            }
            case Op::SumAll: {
                const int ar = node(na).val.rows;
                const int ac = node(na).val.cols;
                accum(na, broadcast_all(g, ar, ac));
                break;
            }
            case Op::SumRows:
                accum(na, broadcast_rows(g, node(na).val.rows));
                break;
            case Op::SumCols:
                accum(na, broadcast_cols(g, node(na).val.cols));
                break;
            case Op::BroadcastRows:
                accum(na, sum_rows(g));
                break;
            case Op::BroadcastCols:
                accum(na, sum_cols(g));
                break;
            case Op::BroadcastAll:
                accum(na, sum_all(g));
                break;
            case Op::HCat: {
                const int ca = node(na).val.cols;
                const int cb = node(nb).val.cols;
                accum(na, slice_cols(g, 0, ca));
                accum(nb, slice_cols(g, ca, ca + cb));
                break;
            }
            case Op::SliceCols:
                accum(na, pad_cols(g, ni0, node(na).val.cols));
                break;
            case Op::PadCols:
                accum(na, slice_cols(g, ni0, ni0 + node(na).val.cols));
                break;
        }
    }
    return gadj;
}

}  // namespace dynalab::num
