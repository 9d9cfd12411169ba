#pragma once

#include <cstdint>
#include <vector>

namespace mgcn {

using index_t = std::int64_t;

/// Row-major dense matrix of 64-bit floats. All model arithmetic runs in
/// doubles so finite-difference gradient checks stay meaningful.
struct DenseMatrix {
    index_t rows = 0;
    index_t cols = 0;
    std::vector<double> data;

    DenseMatrix() = default;
    DenseMatrix(index_t r, index_t c)
        : rows(r), cols(c), data(static_cast<std::size_t>(r * c), 0.0) {}

    static DenseMatrix zeros(index_t r, index_t c) { return DenseMatrix(r, c); }

    double& at(index_t i, index_t j) { return data[static_cast<std::size_t>(i * cols + j)]; }
    double at(index_t i, index_t j) const { return data[static_cast<std::size_t>(i * cols + j)]; }

    double* row(index_t i) { return data.data() + i * cols; }
    const double* row(index_t i) const { return data.data() + i * cols; }

    index_t size() const { return rows * cols; }
    bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }
    bool all_finite() const;
};

/// c = a * b
DenseMatrix matmul_nn(const DenseMatrix& a, const DenseMatrix& b);
/// c = a * b^T
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);
/// c = a^T * b
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);

/// Accumulating variants: c += op(a) * op(b). c must be pre-shaped.
void gemm_nn_acc(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);
void gemm_nt_acc(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);
void gemm_tn_acc(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);

DenseMatrix transpose(const DenseMatrix& a);

double frobenius_sq(const DenseMatrix& a);

/// Max |a - b| over all entries; matrices must have the same shape.
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace mgcn
