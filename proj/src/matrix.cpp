#include "dynalab/matrix.hpp"

#include <Eigen/Core>

#include "dynalab/errors.hpp"

namespace dynalab::num {

namespace {
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;
}  // namespace

void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool transpose_a, bool transpose_b,
          bool accumulate) {
    const int ar = transpose_a ? a.cols : a.rows;
    const int ac = transpose_a ? a.rows : a.cols;
    const int br = transpose_b ? b.cols : b.rows;
    const int bc = transpose_b ? b.rows : b.cols;
    if (ac != br)
        throw UsageError("gemm: inner dimensions disagree (" + std::to_string(ac) + " vs " +
                         std::to_string(br) + ")");
    if (!accumulate) c.reshape(ar, bc);
    if (c.rows != ar || c.cols != bc) throw UsageError("gemm: output shape mismatch");

    CMap ma(a.v.data(), a.rows, a.cols);
    CMap mb(b.v.data(), b.rows, b.cols);
    MMap mc(c.v.data(), c.rows, c.cols);
    if (!transpose_a && !transpose_b) {
        if (accumulate) mc.noalias() += ma * mb;
        else mc.noalias() = ma * mb;
    } else if (transpose_a && !transpose_b) {
        if (accumulate) mc.noalias() += ma.transpose() * mb;
        else mc.noalias() = ma.transpose() * mb;
    } else if (!transpose_a && transpose_b) {
        if (accumulate) mc.noalias() += ma * mb.transpose();
        else mc.noalias() = ma * mb.transpose();
    } else {
        if (accumulate) mc.noalias() += ma.transpose() * mb.transpose();
        else mc.noalias() = ma.transpose() * mb.transpose();
    }
}

}  // namespace dynalab::num
