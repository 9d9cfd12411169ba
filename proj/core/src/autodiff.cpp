#include "mgcn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mgcn/errors.hpp"

namespace mgcn::ad {

namespace {
double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
}  // namespace

Tape::Handle Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    grads_.emplace_back();
    return static_cast<Handle>(nodes_.size() - 1);
}

DenseMatrix& Tape::grad_buf(Handle h) {
    auto& g = grads_[static_cast<std::size_t>(h)];
    const auto& v = nodes_[static_cast<std::size_t>(h)].value;
    if (g.rows != v.rows || g.cols != v.cols) g = DenseMatrix(v.rows, v.cols);
    return g;
}

const DenseMatrix& Tape::grad(Handle h) {
    auto& g = grads_[static_cast<std::size_t>(h)];
    const auto& v = nodes_[static_cast<std::size_t>(h)].value;
    if (g.rows != v.rows || g.cols != v.cols) g = DenseMatrix(v.rows, v.cols);
    return g;
}

Tape::Handle Tape::leaf(DenseMatrix value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    return push(std::move(n));
}

#define MGCN_CHECK(cond, msg) \
    do { if (!(cond)) throw std::invalid_argument(msg); } while (0)

Tape::Handle Tape::add(Handle a, Handle b) {
    MGCN_CHECK(value(a).same_shape(value(b)), "add: shape mismatch");
    Node n;
    n.op = Op::Add;
    n.a = a; n.b = b;
    n.requires_grad = needs(a) || needs(b);
    n.value = value(a);
    for (index_t i = 0; i < n.value.size(); ++i) n.value.data[i] += value(b).data[i];
    return push(std::move(n));
}

Tape::Handle Tape::sub(Handle a, Handle b) {
    MGCN_CHECK(value(a).same_shape(value(b)), "sub: shape mismatch");
    Node n;
    n.op = Op::Sub;
    n.a = a; n.b = b;
    n.requires_grad = needs(a) || needs(b);
    n.value = value(a);
    for (index_t i = 0; i < n.value.size(); ++i) n.value.data[i] -= value(b).data[i];
    return push(std::move(n));
}

Tape::Handle Tape::scale(Handle a, double c) {
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.scalar = c;
    n.requires_grad = needs(a);
    n.value = value(a);
    for (double& v : n.value.data) v *= c;
    return push(std::move(n));
}

Tape::Handle Tape::ewmul(Handle a, Handle b) {
    MGCN_CHECK(value(a).same_shape(value(b)), "ewmul: shape mismatch");
    Node n;
    n.op = Op::EwMul;
    n.a = a; n.b = b;
    n.requires_grad = needs(a) || needs(b);
    n.value = value(a);
    for (index_t i = 0; i < n.value.size(); ++i) n.value.data[i] *= value(b).data[i];
    return push(std::move(n));
}

Tape::Handle Tape::sigmoid(Handle a) {
    Node n;
    n.op = Op::Sigmoid;
    n.a = a;
    n.requires_grad = needs(a);
    n.value = value(a);
    for (double& v : n.value.data) v = 1.0 / (1.0 + std::exp(-v));
    return push(std::move(n));
}

Tape::Handle Tape::tanh(Handle a) {
    Node n;
    n.op = Op::Tanh;
    n.a = a;
    n.requires_grad = needs(a);
    n.value = value(a);
    for (double& v : n.value.data) v = std::tanh(v);
    return push(std::move(n));
}

Tape::Handle Tape::softplus(Handle a) {
    Node n;
    n.op = Op::Softplus;
    n.a = a;
    n.requires_grad = needs(a);
    n.value = value(a);
    for (double& v : n.value.data) v = stable_softplus(v);
    return push(std::move(n));
}

Tape::Handle Tape::add_row_vector(Handle a, Handle bias) {
    MGCN_CHECK(value(bias).rows == 1 && value(bias).cols == value(a).cols,
               "add_row_vector: bias must be 1 x cols(a)");
    Node n;
    n.op = Op::AddRow;
    n.a = a; n.b = bias;
    n.requires_grad = needs(a) || needs(bias);
    n.value = value(a);
    const double* bv = value(bias).row(0);
    for (index_t i = 0; i < n.value.rows; ++i) {
        double* r = n.value.row(i);
        for (index_t j = 0; j < n.value.cols; ++j) r[j] += bv[j];
    }
    return push(std::move(n));
}

Tape::Handle Tape::matmul(Handle a, Handle b) {
    Node n;
    n.op = Op::MatmulNN;
    n.a = a; n.b = b;
    n.requires_grad = needs(a) || needs(b);
    n.value = matmul_nn(value(a), value(b));
    return push(std::move(n));
}

Tape::Handle Tape::matmul_nt(Handle a, Handle b) {
    Node n;
    n.op = Op::MatmulNT;
    n.a = a; n.b = b;
    n.requires_grad = needs(a) || needs(b);
    n.value = mgcn::matmul_nt(value(a), value(b));
    return push(std::move(n));
}

Tape::Handle Tape::spmm(const SparseGraph* g, const SparseGraph* gt, Handle x) {
    MGCN_CHECK(g && gt, "spmm: null graph");
    Node n;
    n.op = Op::Spmm;
    n.a = x;
    n.g = g; n.gt = gt;
    n.requires_grad = needs(x);
    n.value = mgcn::spmm(*g, value(x));
    return push(std::move(n));
}

Tape::Handle Tape::rowwise_dot(Handle a, Handle b) {
    MGCN_CHECK(value(a).same_shape(value(b)), "rowwise_dot: shape mismatch");
    Node n;
    n.op = Op::RowwiseDot;
    n.a = a; n.b = b;
    n.requires_grad = needs(a) || needs(b);
    n.value = DenseMatrix(value(a).rows, 1);
    for (index_t i = 0; i < value(a).rows; ++i) {
        const double* ra = value(a).row(i);
        const double* rb = value(b).row(i);
        double s = 0.0;
        for (index_t j = 0; j < value(a).cols; ++j) s += ra[j] * rb[j];
        n.value.at(i, 0) = s;
    }
    return push(std::move(n));
}

Tape::Handle Tape::concat_rows(Handle a, Handle b) {
    MGCN_CHECK(value(a).cols == value(b).cols, "concat_rows: column mismatch");
    Node n;
    n.op = Op::ConcatRows;
    n.a = a; n.b = b;
    n.requires_grad = needs(a) || needs(b);
    n.value = DenseMatrix(value(a).rows + value(b).rows, value(a).cols);
    std::copy(value(a).data.begin(), value(a).data.end(), n.value.data.begin());
    std::copy(value(b).data.begin(), value(b).data.end(),
              n.value.data.begin() + value(a).data.size());
    return push(std::move(n));
}

Tape::Handle Tape::slice_rows(Handle a, index_t begin, index_t count) {
    MGCN_CHECK(begin >= 0 && begin + count <= value(a).rows, "slice_rows: out of range");
    Node n;
    n.op = Op::SliceRows;
    n.a = a;
    n.i0 = begin; n.i1 = count;
    n.requires_grad = needs(a);
    n.value = DenseMatrix(count, value(a).cols);
    std::copy(value(a).row(begin), value(a).row(begin) + count * value(a).cols,
              n.value.data.begin());
    return push(std::move(n));
}

Tape::Handle Tape::gather_rows(Handle a, std::vector<index_t> ids) {
    Node n;
    n.op = Op::GatherRows;
    n.a = a;
    n.requires_grad = needs(a);
    n.value = DenseMatrix(static_cast<index_t>(ids.size()), value(a).cols);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        MGCN_CHECK(ids[r] >= 0 && ids[r] < value(a).rows, "gather_rows: id out of range");
        std::copy(value(a).row(ids[r]), value(a).row(ids[r]) + value(a).cols,
                  n.value.row(static_cast<index_t>(r)));
    }
    n.ids = std::move(ids);
    return push(std::move(n));
}

Tape::Handle Tape::scale_rows(Handle a, Handle s) {
    MGCN_CHECK(value(s).rows == value(a).rows && value(s).cols == 1,
               "scale_rows: scaler must be rows(a) x 1");
    Node n;
    n.op = Op::ScaleRows;
    n.a = a; n.b = s;
    n.requires_grad = needs(a) || needs(s);
    n.value = value(a);
    for (index_t i = 0; i < n.value.rows; ++i) {
        const double si = value(s).at(i, 0);
        double* r = n.value.row(i);
        for (index_t j = 0; j < n.value.cols; ++j) r[j] *= si;
    }
    return push(std::move(n));
}

Tape::Handle Tape::hstack_cols(const std::vector<Handle>& cols) {
    MGCN_CHECK(!cols.empty(), "hstack_cols: empty input");
    Node n;
    n.op = Op::HstackCols;
    n.parents = cols;
    n.requires_grad = false;
    for (Handle h : cols) {
        MGCN_CHECK(value(h).cols == 1 && value(h).rows == value(cols[0]).rows,
                   "hstack_cols: inputs must be equal-length column vectors");
        n.requires_grad = n.requires_grad || needs(h);
    }
    n.value = DenseMatrix(value(cols[0]).rows, static_cast<index_t>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c)
        for (index_t i = 0; i < n.value.rows; ++i)
            n.value.at(i, static_cast<index_t>(c)) = value(cols[c]).at(i, 0);
    return push(std::move(n));
}

Tape::Handle Tape::col(Handle a, index_t j) {
    MGCN_CHECK(j >= 0 && j < value(a).cols, "col: index out of range");
    Node n;
    n.op = Op::Col;
    n.a = a;
    n.i0 = j;
    n.requires_grad = needs(a);
    n.value = DenseMatrix(value(a).rows, 1);
    for (index_t i = 0; i < value(a).rows; ++i) n.value.at(i, 0) = value(a).at(i, j);
    return push(std::move(n));
}

Tape::Handle Tape::softmax_rows(Handle a) {
    Node n;
    n.op = Op::SoftmaxRows;
    n.a = a;
    n.requires_grad = needs(a);
    n.value = value(a);
    for (index_t i = 0; i < n.value.rows; ++i) {
        double* r = n.value.row(i);
        double mx = r[0];
        for (index_t j = 1; j < n.value.cols; ++j) mx = std::max(mx, r[j]);
        double sum = 0.0;
        for (index_t j = 0; j < n.value.cols; ++j) {
            r[j] = std::exp(r[j] - mx);
            sum += r[j];
        }
        for (index_t j = 0; j < n.value.cols; ++j) r[j] /= sum;
    }
    return push(std::move(n));
}

Tape::Handle Tape::row_normalize(Handle a) {
    Node n;
    n.op = Op::RowNormalize;
    n.a = a;
    n.requires_grad = needs(a);
    n.value = value(a);
    for (index_t i = 0; i < n.value.rows; ++i) {
        double* r = n.value.row(i);
        double norm_sq = 0.0;
        for (index_t j = 0; j < n.value.cols; ++j) norm_sq += r[j] * r[j];
        if (norm_sq == 0.0) throw NumericError("row_normalize: zero row");
        const double inv = 1.0 / std::sqrt(norm_sq);
        for (index_t j = 0; j < n.value.cols; ++j) r[j] *= inv;
    }
    return push(std::move(n));
}

Tape::Handle Tape::mean_all(Handle a) {
    Node n;
    n.op = Op::MeanAll;
    n.a = a;
    n.requires_grad = needs(a);
    n.value = DenseMatrix(1, 1);
    double s = 0.0;
    for (double v : value(a).data) s += v;
    n.value.at(0, 0) = s / static_cast<double>(value(a).size());
    return push(std::move(n));
}

Tape::Handle Tape::sum_squares(Handle a) {
    Node n;
    n.op = Op::SumSquares;
    n.a = a;
    n.requires_grad = needs(a);
    n.value = DenseMatrix(1, 1);
    n.value.at(0, 0) = frobenius_sq(value(a));
    return push(std::move(n));
}

Tape::Handle Tape::logsumexp_all(Handle a) {
    Node n;
    n.op = Op::LogSumExpAll;
    n.a = a;
    n.requires_grad = needs(a);
    n.value = DenseMatrix(1, 1);
    double mx = value(a).data[0];
    for (double v : value(a).data) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : value(a).data) sum += std::exp(v - mx);
    n.value.at(0, 0) = mx + std::log(sum);
    return push(std::move(n));
}

Tape::Handle Tape::cross_entropy_diag(Handle a) {
    MGCN_CHECK(value(a).rows == value(a).cols, "cross_entropy_diag: matrix not square");
    Node n;
    n.op = Op::CrossEntropyDiag;
    n.a = a;
    n.requires_grad = needs(a);
    const DenseMatrix& s = value(a);
    double total = 0.0;
    for (index_t i = 0; i < s.rows; ++i) {
        const double* r = s.row(i);
        double mx = r[0];
        for (index_t j = 1; j < s.cols; ++j) mx = std::max(mx, r[j]);
        double sum = 0.0;
        for (index_t j = 0; j < s.cols; ++j) sum += std::exp(r[j] - mx);
        total += mx + std::log(sum) - r[i];
    }
    n.value = DenseMatrix(1, 1);
    n.value.at(0, 0) = total / static_cast<double>(s.rows);
    return push(std::move(n));
}

void Tape::backward(Handle root) {
    MGCN_CHECK(value(root).rows == 1 && value(root).cols == 1, "backward: root must be 1 x 1");
    grad_buf(root).at(0, 0) = 1.0;
    for (Handle h = root; h >= 0; --h) {
        if (!needs(h)) continue;
        const auto& g = grads_[static_cast<std::size_t>(h)];
        if (g.rows == 0) continue;  // node not on the path to root
        backward_node(h);
    }
}

void Tape::backward_node(Handle h) {
    Node& n = nodes_[static_cast<std::size_t>(h)];
    const DenseMatrix& d = grads_[static_cast<std::size_t>(h)];
    const auto va = [&]() -> const DenseMatrix& { return value(n.a); };
    const auto vb = [&]() -> const DenseMatrix& { return value(n.b); };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < d.size(); ++i) ga.data[i] += d.data[i];
            }
            if (needs(n.b)) {
                auto& gb = grad_buf(n.b);
                for (index_t i = 0; i < d.size(); ++i) gb.data[i] += d.data[i];
            }
            break;
        }
        case Op::Sub: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < d.size(); ++i) ga.data[i] += d.data[i];
            }
            if (needs(n.b)) {
                auto& gb = grad_buf(n.b);
                for (index_t i = 0; i < d.size(); ++i) gb.data[i] -= d.data[i];
            }
            break;
        }
        case Op::Scale: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < d.size(); ++i) ga.data[i] += n.scalar * d.data[i];
            }
            break;
        }
        case Op::EwMul: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < d.size(); ++i) ga.data[i] += d.data[i] * vb().data[i];
            }
            if (needs(n.b)) {
                auto& gb = grad_buf(n.b);
                for (index_t i = 0; i < d.size(); ++i) gb.data[i] += d.data[i] * va().data[i];
            }
            break;
        }
        case Op::Sigmoid: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < d.size(); ++i) {
                    const double y = n.value.data[i];
                    ga.data[i] += d.data[i] * y * (1.0 - y);
                }
            }
            break;
        }
        case Op::Tanh: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < d.size(); ++i) {
                    const double y = n.value.data[i];
                    ga.data[i] += d.data[i] * (1.0 - y * y);
                }
            }
            break;
        }
        case Op::Softplus: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < d.size(); ++i) {
                    const double x = va().data[i];
                    ga.data[i] += d.data[i] / (1.0 + std::exp(-x));
                }
            }
            break;
        }
        case Op::AddRow: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < d.size(); ++i) ga.data[i] += d.data[i];
            }
            if (needs(n.b)) {
                auto& gb = grad_buf(n.b);
                for (index_t i = 0; i < d.rows; ++i) {
                    const double* dr = d.row(i);
                    for (index_t j = 0; j < d.cols; ++j) gb.at(0, j) += dr[j];
                }
            }
            break;
        }
        case Op::MatmulNN: {
            if (needs(n.a)) gemm_nt_acc(d, vb(), grad_buf(n.a));  // dA += dC * B^T
            if (needs(n.b)) gemm_tn_acc(va(), d, grad_buf(n.b));  // dB += A^T * dC
            break;
        }
        case Op::MatmulNT: {
            if (needs(n.a)) gemm_nn_acc(d, vb(), grad_buf(n.a));  // dA += dC * B
            if (needs(n.b)) gemm_tn_acc(d, va(), grad_buf(n.b));  // dB += dC^T * A
            break;
        }
        case Op::Spmm: {
            if (needs(n.a)) spmm_acc(*n.gt, d, grad_buf(n.a));  // dX += g^T * dC
            break;
        }
        case Op::RowwiseDot: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < va().rows; ++i) {
                    const double di = d.at(i, 0);
                    const double* rb = vb().row(i);
                    double* gr = ga.row(i);
                    for (index_t j = 0; j < va().cols; ++j) gr[j] += di * rb[j];
                }
            }
            if (needs(n.b)) {
                auto& gb = grad_buf(n.b);
                for (index_t i = 0; i < va().rows; ++i) {
                    const double di = d.at(i, 0);
                    const double* ra = va().row(i);
                    double* gr = gb.row(i);
                    for (index_t j = 0; j < va().cols; ++j) gr[j] += di * ra[j];
                }
            }
            break;
        }
        case Op::ConcatRows: {
            const index_t ra = va().rows;
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < ga.size(); ++i) ga.data[i] += d.data[i];
            }
            if (needs(n.b)) {
                auto& gb = grad_buf(n.b);
                const std::size_t off = static_cast<std::size_t>(ra * d.cols);
                for (index_t i = 0; i < gb.size(); ++i) gb.data[i] += d.data[off + i];
            }
            break;
        }
        case Op::SliceRows: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < n.i1; ++i) {
                    const double* dr = d.row(i);
                    double* gr = ga.row(n.i0 + i);
                    for (index_t j = 0; j < d.cols; ++j) gr[j] += dr[j];
                }
            }
            break;
        }
        case Op::GatherRows: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (std::size_t r = 0; r < n.ids.size(); ++r) {
                    const double* dr = d.row(static_cast<index_t>(r));
                    double* gr = ga.row(n.ids[r]);
                    for (index_t j = 0; j < d.cols; ++j) gr[j] += dr[j];
                }
            }
            break;
        }
        case Op::ScaleRows: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < d.rows; ++i) {
                    const double si = vb().at(i, 0);
                    const double* dr = d.row(i);
                    double* gr = ga.row(i);
                    for (index_t j = 0; j < d.cols; ++j) gr[j] += si * dr[j];
                }
            }
            if (needs(n.b)) {
                auto& gb = grad_buf(n.b);
                for (index_t i = 0; i < d.rows; ++i) {
                    const double* dr = d.row(i);
                    const double* ar = va().row(i);
                    double s = 0.0;
                    for (index_t j = 0; j < d.cols; ++j) s += dr[j] * ar[j];
                    gb.at(i, 0) += s;
                }
            }
            break;
        }
        case Op::HstackCols: {
            for (std::size_t c = 0; c < n.parents.size(); ++c) {
                const Handle p = n.parents[c];
                if (!needs(p)) continue;
                auto& gp = grad_buf(p);
                for (index_t i = 0; i < d.rows; ++i)
                    gp.at(i, 0) += d.at(i, static_cast<index_t>(c));
            }
            break;
        }
        case Op::Col: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < d.rows; ++i) ga.at(i, n.i0) += d.at(i, 0);
            }
            break;
        }
        case Op::SoftmaxRows: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < d.rows; ++i) {
                    const double* y = n.value.row(i);
                    const double* dr = d.row(i);
                    double dot = 0.0;
                    for (index_t j = 0; j < d.cols; ++j) dot += dr[j] * y[j];
                    double* gr = ga.row(i);
                    for (index_t j = 0; j < d.cols; ++j) gr[j] += y[j] * (dr[j] - dot);
                }
            }
            break;
        }
        case Op::RowNormalize: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                for (index_t i = 0; i < d.rows; ++i) {
                    const double* x = va().row(i);
                    const double* y = n.value.row(i);
                    const double* dr = d.row(i);
                    double norm_sq = 0.0;
                    for (index_t j = 0; j < d.cols; ++j) norm_sq += x[j] * x[j];
                    const double inv = 1.0 / std::sqrt(norm_sq);
                    double ydot = 0.0;
                    for (index_t j = 0; j < d.cols; ++j) ydot += y[j] * dr[j];
                    double* gr = ga.row(i);
                    for (index_t j = 0; j < d.cols; ++j)
                        gr[j] += inv * (dr[j] - y[j] * ydot);
                }
            }
            break;
        }
        case Op::MeanAll: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                const double w = d.at(0, 0) / static_cast<double>(va().size());
                for (double& v : ga.data) v += w;
            }
            break;
        }
        case Op::SumSquares: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                const double w = 2.0 * d.at(0, 0);
                for (index_t i = 0; i < ga.size(); ++i) ga.data[i] += w * va().data[i];
            }
            break;
        }
        case Op::LogSumExpAll: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                const double lse = n.value.at(0, 0);
                const double w = d.at(0, 0);
                for (index_t i = 0; i < ga.size(); ++i)
                    ga.data[i] += w * std::exp(va().data[i] - lse);
            }
            break;
        }
        case Op::CrossEntropyDiag: {
            if (needs(n.a)) {
                auto& ga = grad_buf(n.a);
                const DenseMatrix& s = va();
                const double w = d.at(0, 0) / static_cast<double>(s.rows);
                for (index_t i = 0; i < s.rows; ++i) {
                    const double* r = s.row(i);
                    double mx = r[0];
                    for (index_t j = 1; j < s.cols; ++j) mx = std::max(mx, r[j]);
                    double sum = 0.0;
                    for (index_t j = 0; j < s.cols; ++j) sum += std::exp(r[j] - mx);
                    double* gr = ga.row(i);
                    for (index_t j = 0; j < s.cols; ++j)
                        gr[j] += w * (std::exp(r[j] - mx) / sum - (j == i ? 1.0 : 0.0));
                }
            }
            break;
        }
    }
}

#undef MGCN_CHECK

}  // namespace mgcn::ad
