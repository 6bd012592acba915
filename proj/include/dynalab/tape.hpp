#pragma once

#include <cstdint>
#include <vector>

#include "dynalab/matrix.hpp"

namespace dynalab::num {

// Primitive vocabulary of the reverse-mode tape. Every operation has a
// vector-Jacobian rule expressible in the same vocabulary, which is what
// makes the second reverse pass through a first one (gradient penalty)
// possible: backward_graph() appends the adjoint computation as new nodes.
enum class Op : std::uint8_t {
    Constant,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Div,
    Scale,      // c * x
    AddScalar,  // x + c
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
    Sqrt,
    Minimum,        // elementwise min; ties split adjoint evenly
    SumAll,         // m x n -> 1 x 1
    SumRows,        // m x n -> 1 x n
    SumCols,        // m x n -> m x 1
    BroadcastRows,  // 1 x n -> m x n
    BroadcastCols,  // m x 1 -> m x n
    BroadcastAll,   // 1 x 1 -> m x n
    HCat,
    SliceCols,  // columns [i0, i1)
    PadCols,    // embed at column offset i0 into width i1
};

struct Node {
    Op op = Op::Constant;
    int a = -1;
    int b = -1;
    double c = 0.0;
    int i0 = 0;
    int i1 = 0;
    Matrix val;
};

// Append-only Wengert list. Node order is a topological order, so a single
// reverse sweep computes all adjoints. reset() keeps node and adjoint
// storage alive so steady-state training does no allocation.
class Tape {
public:
    int size() const { return used_; }
    void reset() { used_ = 0; }

    int constant(const Matrix& m);
    int constant(Matrix&& m);
    int scalar_constant(double x);

    int matmul(int a, int b);
    int transpose(int a);
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int div(int a, int b);
    int scale(int a, double c);
    int add_scalar(int a, double c);
    int exp(int a);
    int log(int a);
    int tanh(int a);
    int sigmoid(int a);
    int softplus(int a);
    int sqrt(int a);
    int minimum(int a, int b);
    int sum_all(int a);
    int sum_rows(int a);
    int sum_cols(int a);
    int broadcast_rows(int a, int m);
    int broadcast_cols(int a, int n);
    int broadcast_all(int a, int m, int n);
    int hcat(int a, int b);
    int slice_cols(int a, int c0, int c1);
    int pad_cols(int a, int offset, int width);

    // Convenience: mean over all entries -> 1x1 node.
    int mean_all(int a);

    const Matrix& val(int id) const;
    double scalar(int id) const;

    // Reverse pass from a 1x1 root with seed 1. Adjoints are raw matrices,
    // readable through adjoint() until the next reset()/backward call.
    void backward(int root);
    const Matrix* adjoint(int id) const;

    // Reverse pass that records adjoint computation on the tape itself.
    // Returns, for every node id < size-at-call, the node id of its adjoint
    // (-1 where no gradient flows). The returned graph is differentiable by
    // a subsequent backward().
    std::vector<int> backward_graph(int root);

private:
    int push(Op op, int a, int b, double c, int i0, int i1);
    Node& node(int id);
    const Node& node(int id) const;
    void check_id(int id) const;
    void vjp(int id);  // fast-path adjoint propagation for one node
    Matrix& adj_slot(int id, int rows, int cols);

    std::vector<Node> nodes_;
    int used_ = 0;
    std::vector<Matrix> adj_;
    std::vector<std::uint8_t> has_adj_;
};

}  // namespace dynalab::num
