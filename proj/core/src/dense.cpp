#include "mgcn/dense.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace mgcn {

bool DenseMatrix::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

static void check(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void gemm_nn_acc(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
    check(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols, "gemm_nn: shape mismatch");
    for (index_t i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (index_t k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = b.row(k);
            for (index_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
}

void gemm_nt_acc(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
    check(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows, "gemm_nt: shape mismatch");
    for (index_t i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (index_t j = 0; j < b.rows; ++j) {
            const double* bj = b.row(j);
            double s = 0.0;
            for (index_t k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
            ci[j] += s;
        }
    }
}

void gemm_tn_acc(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
    check(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols, "gemm_tn: shape mismatch");
    for (index_t k = 0; k < a.rows; ++k) {
        const double* ak = a.row(k);
        const double* bk = b.row(k);
        for (index_t i = 0; i < a.cols; ++i) {
            const double aki = ak[i];
            if (aki == 0.0) continue;
            double* ci = c.row(i);
            for (index_t j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
        }
    }
}

DenseMatrix matmul_nn(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix c(a.rows, b.cols);
    gemm_nn_acc(a, b, c);
    return c;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix c(a.rows, b.rows);
    gemm_nt_acc(a, b, c);
    return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix c(a.cols, b.cols);
    gemm_tn_acc(a, b, c);
    return c;
}

DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix t(a.cols, a.rows);
    for (index_t i = 0; i < a.rows; ++i)
        for (index_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

double frobenius_sq(const DenseMatrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return s;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
    check(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace mgcn
