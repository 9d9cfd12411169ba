#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mgcn/dense.hpp"

namespace mgcn {

struct FeatureMatrix;  // dataset.hpp

/// Compressed-sparse-row matrix. Column ids are strictly increasing within
/// each row; all values finite.
struct SparseGraph {
    index_t n_rows = 0;
    index_t n_cols = 0;
    std::vector<index_t> row_offsets;  // length n_rows + 1
    std::vector<index_t> col_indices;
    std::vector<double> values;

    SparseGraph() = default;
    SparseGraph(index_t r, index_t c)
        : n_rows(r), n_cols(c), row_offsets(static_cast<std::size_t>(r) + 1, 0) {}

    index_t nnz() const { return static_cast<index_t>(values.size()); }

    /// Throws DataError if the CSR invariants do not hold.
    void validate() const;
};

/// Build CSR from (row, col, value) triplets. Duplicate coordinates are an
/// error; triplets may arrive in any order.
SparseGraph sparse_from_triplets(index_t n_rows, index_t n_cols,
                                 std::vector<std::pair<std::pair<index_t, index_t>, double>> triplets);

SparseGraph sparse_transpose(const SparseGraph& g);

/// Sub-matrix [row_begin, row_end) x [col_begin, col_end).
SparseGraph sparse_slice(const SparseGraph& g, index_t row_begin, index_t row_end,
                         index_t col_begin, index_t col_end);

/// Symmetric 0/1 adjacency [[0, R], [R^T, 0]]: users occupy rows
/// [0, n_users), items rows [n_users, n_users + n_items).
SparseGraph build_bipartite_adjacency(const std::vector<std::pair<index_t, index_t>>& edges,
                                      index_t n_users, index_t n_items);

/// D^{-1/2} A D^{-1/2} with deg = row sums. Zero-degree rows/columns map to
/// zero. With allow_negative=false (the default), any negative weight is an
/// error; with allow_negative=true, rows or columns whose degree is <= 0 are
/// zeroed and a warning is printed (this path serves KNN graphs that kept
/// negative cosine similarities).
SparseGraph normalize_sym(const SparseGraph& g, bool allow_negative = false);

/// Exact sparse x dense product, g (r x c) * x (c x n) -> (r x n).
DenseMatrix spmm(const SparseGraph& g, const DenseMatrix& x);
void spmm_acc(const SparseGraph& g, const DenseMatrix& x, DenseMatrix& out);

/// Item-item cosine affinity graph: each row keeps its self-edge (weight
/// exactly 1) plus the k-1 most similar other items, ties at the boundary
/// broken by smaller item index. Weights are raw similarities clamped to
/// [-1, 1]. An all-zero feature row is an error naming the item.
SparseGraph knn_affinity_graph(const FeatureMatrix& features, index_t k);

void save_sparse(const std::string& path, const SparseGraph& g);
SparseGraph load_sparse(const std::string& path);

}  // namespace mgcn
