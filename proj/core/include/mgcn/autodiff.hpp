#pragma once

#include <cstdint>
#include <vector>

#include "mgcn/dense.hpp"
#include "mgcn/sparse.hpp"

namespace mgcn::ad {

/// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
/// order; backward() walks them in reverse and accumulates adjoints. Sparse
/// graphs enter as constants (no gradient flows into them). Single-threaded
/// and fully deterministic.
class Tape {
public:
    using Handle = std::int32_t;

    Handle leaf(DenseMatrix value, bool requires_grad);

    const DenseMatrix& value(Handle h) const { return nodes_[static_cast<std::size_t>(h)].value; }
    /// Valid after backward(); zero matrix if the node was never reached.
    const DenseMatrix& grad(Handle h);

    // -- elementwise / linear ---------------------------------------------
    Handle add(Handle a, Handle b);
    Handle sub(Handle a, Handle b);
    Handle scale(Handle a, double c);
    Handle ewmul(Handle a, Handle b);
    Handle sigmoid(Handle a);
    Handle tanh(Handle a);
    Handle softplus(Handle a);
    /// a (m x n) plus a 1 x n row vector broadcast over rows.
    Handle add_row_vector(Handle a, Handle bias);

    // -- products -----------------------------------------------------------
    Handle matmul(Handle a, Handle b);     // A * B
    Handle matmul_nt(Handle a, Handle b);  // A * B^T
    /// g * X with g a constant sparse matrix; gt must be its transpose and
    /// both must outlive the tape.
    Handle spmm(const SparseGraph* g, const SparseGraph* gt, Handle x);
    /// Per-row inner product of two equally-shaped matrices -> m x 1.
    Handle rowwise_dot(Handle a, Handle b);

    // -- structure ----------------------------------------------------------
    Handle concat_rows(Handle a, Handle b);
    Handle slice_rows(Handle a, index_t begin, index_t count);
    Handle gather_rows(Handle a, std::vector<index_t> ids);
    /// Multiply row i of a by s(i, 0); s is m x 1.
    Handle scale_rows(Handle a, Handle s);
    /// Stack k column vectors (m x 1 each) into an m x k matrix.
    Handle hstack_cols(const std::vector<Handle>& cols);
    Handle col(Handle a, index_t j);

    // -- nonlinear blocks -----------------------------------------------------
    Handle softmax_rows(Handle a);
    /// L2-normalize each row.
    Handle row_normalize(Handle a);

    // -- reductions (all -> 1 x 1) -------------------------------------------
    Handle mean_all(Handle a);
    Handle sum_squares(Handle a);
    Handle logsumexp_all(Handle a);
    /// For a square score matrix S: mean_i [logsumexp_j S_ij - S_ii], the
    /// InfoNCE cross-entropy with diagonal positives.
    Handle cross_entropy_diag(Handle a);

    /// Seed d(root)=1 and accumulate gradients; root must be 1 x 1.
    void backward(Handle root);

    std::size_t size() const { return nodes_.size(); }

private:
    enum class Op : std::uint8_t {
        Leaf, Add, Sub, Scale, EwMul, Sigmoid, Tanh, Softplus, AddRow,
        MatmulNN, MatmulNT, Spmm, RowwiseDot,
        ConcatRows, SliceRows, GatherRows, ScaleRows, HstackCols, Col,
        SoftmaxRows, RowNormalize,
        MeanAll, SumSquares, LogSumExpAll, CrossEntropyDiag,
    };

    struct Node {
        Op op = Op::Leaf;
        bool requires_grad = false;
        DenseMatrix value;
        Handle a = -1, b = -1;
        std::vector<Handle> parents;  // HstackCols only
        index_t i0 = 0, i1 = 0;       // slice begin/count, column index
        double scalar = 0.0;
        std::vector<index_t> ids;  // GatherRows
        const SparseGraph* g = nullptr;
        const SparseGraph* gt = nullptr;
    };

    Handle push(Node node);
    bool needs(Handle h) const { return nodes_[static_cast<std::size_t>(h)].requires_grad; }
    DenseMatrix& grad_buf(Handle h);
    void backward_node(Handle h);

    std::vector<Node> nodes_;
    std::vector<DenseMatrix> grads_;
    DenseMatrix empty_grad_;
};

}  // namespace mgcn::ad
