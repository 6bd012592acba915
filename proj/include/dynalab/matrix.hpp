#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

namespace dynalab::num {

// Dense row-major matrix of 64-bit floats. The single value carrier for
// network weights, activations and adjoints.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;  // row-major, rows*cols entries

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
    Matrix(int r, int c, std::initializer_list<double> init) : rows(r), cols(c), v(init) {}

    static Matrix zeros(int r, int c) { return Matrix(r, c); }
    static Matrix full(int r, int c, double x) {
        Matrix m(r, c);
        for (auto& e : m.v) e = x;
        return m;
    }
    static Matrix row_vector(const std::vector<double>& data) {
        Matrix m(1, static_cast<int>(data.size()));
        m.v = data;
        return m;
    }
    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }

    std::size_t size() const { return v.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    // Reshape in place without reallocating when capacity suffices.
    void reshape(int r, int c) {
        rows = r;
        cols = c;
        v.resize(static_cast<std::size_t>(r) * c);
    }
    void set_zero() { std::fill(v.begin(), v.end(), 0.0); }
};

// C = A*B (optionally transposed inputs); accumulate adds into C.
void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool transpose_a = false,
          bool transpose_b = false, bool accumulate = false);

}  // namespace dynalab::num
