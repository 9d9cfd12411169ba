#include "mgcn/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>

#include "mgcn/dataset.hpp"
#include "mgcn/errors.hpp"

namespace mgcn {

void SparseGraph::validate() const {
    if (row_offsets.size() != static_cast<std::size_t>(n_rows) + 1)
        throw DataError("SparseGraph: row_offsets length mismatch");
    if (row_offsets.front() != 0 || row_offsets.back() != nnz())
        throw DataError("SparseGraph: row_offsets endpoints invalid");
    if (col_indices.size() != values.size())
        throw DataError("SparseGraph: col/value length mismatch");
    for (index_t r = 0; r < n_rows; ++r) {
        if (row_offsets[r] > row_offsets[r + 1])
            throw DataError("SparseGraph: row_offsets not monotone");
        for (index_t p = row_offsets[r]; p < row_offsets[r + 1]; ++p) {
            if (col_indices[p] < 0 || col_indices[p] >= n_cols)
                throw DataError("SparseGraph: column index out of range");
            if (p > row_offsets[r] && col_indices[p] <= col_indices[p - 1])
                throw DataError("SparseGraph: columns not strictly increasing");
            if (!std::isfinite(values[p]))
                throw DataError("SparseGraph: non-finite value");
        }
    }
}

SparseGraph sparse_from_triplets(
    index_t n_rows, index_t n_cols,
    std::vector<std::pair<std::pair<index_t, index_t>, double>> triplets) {
    for (const auto& t : triplets) {
        if (t.first.first < 0 || t.first.first >= n_rows || t.first.second < 0 ||
            t.first.second >= n_cols)
            throw DataError("sparse_from_triplets: coordinate out of range");
    }
    std::sort(triplets.begin(), triplets.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < triplets.size(); ++i)
        if (triplets[i].first == triplets[i - 1].first)
            throw DataError("sparse_from_triplets: duplicate coordinate");

    SparseGraph g(n_rows, n_cols);
    g.col_indices.reserve(triplets.size());
    g.values.reserve(triplets.size());
    std::size_t p = 0;
    for (index_t r = 0; r < n_rows; ++r) {
        while (p < triplets.size() && triplets[p].first.first == r) {
            g.col_indices.push_back(triplets[p].first.second);
            g.values.push_back(triplets[p].second);
            ++p;
        }
        g.row_offsets[static_cast<std::size_t>(r) + 1] = static_cast<index_t>(g.values.size());
    }
    return g;
}

SparseGraph sparse_transpose(const SparseGraph& g) {
    SparseGraph t(g.n_cols, g.n_rows);
    t.col_indices.resize(g.values.size());
    t.values.resize(g.values.size());
    std::vector<index_t> counts(static_cast<std::size_t>(g.n_cols), 0);
    for (index_t c : g.col_indices) ++counts[static_cast<std::size_t>(c)];
    for (index_t c = 0; c < g.n_cols; ++c)
        t.row_offsets[static_cast<std::size_t>(c) + 1] =
            t.row_offsets[static_cast<std::size_t>(c)] + counts[static_cast<std::size_t>(c)];
    std::vector<index_t> cursor(t.row_offsets.begin(), t.row_offsets.end() - 1);
    for (index_t r = 0; r < g.n_rows; ++r) {
        for (index_t p = g.row_offsets[r]; p < g.row_offsets[r + 1]; ++p) {
            const index_t c = g.col_indices[p];
            const index_t q = cursor[static_cast<std::size_t>(c)]++;
            t.col_indices[q] = r;  // rows visited in order -> columns sorted
            t.values[q] = g.values[p];
        }
    }
    return t;
}

SparseGraph sparse_slice(const SparseGraph& g, index_t row_begin, index_t row_end,
                         index_t col_begin, index_t col_end) {
    if (row_begin < 0 || row_end > g.n_rows || col_begin < 0 || col_end > g.n_cols ||
        row_begin > row_end || col_begin > col_end)
        throw DataError("sparse_slice: range out of bounds");
    SparseGraph s(row_end - row_begin, col_end - col_begin);
    for (index_t r = row_begin; r < row_end; ++r) {
        for (index_t p = g.row_offsets[r]; p < g.row_offsets[r + 1]; ++p) {
            const index_t c = g.col_indices[p];
            if (c >= col_begin && c < col_end) {
                s.col_indices.push_back(c - col_begin);
                s.values.push_back(g.values[p]);
            }
        }
        s.row_offsets[static_cast<std::size_t>(r - row_begin) + 1] =
            static_cast<index_t>(s.values.size());
    }
    return s;
}

SparseGraph build_bipartite_adjacency(const std::vector<std::pair<index_t, index_t>>& edges,
                                      index_t n_users, index_t n_items) {
    const index_t n = n_users + n_items;
    std::vector<std::pair<std::pair<index_t, index_t>, double>> trip;
    trip.reserve(edges.size() * 2);
    for (const auto& [u, i] : edges) {
        if (u < 0 || u >= n_users || i < 0 || i >= n_items)
            throw DataError("build_bipartite_adjacency: edge id out of range");
        trip.push_back({{u, n_users + i}, 1.0});
        trip.push_back({{n_users + i, u}, 1.0});
    }
    return sparse_from_triplets(n, n, std::move(trip));
}

SparseGraph normalize_sym(const SparseGraph& g, bool allow_negative) {
    if (g.n_rows != g.n_cols) throw DataError("normalize_sym: matrix not square");
    std::vector<double> deg(static_cast<std::size_t>(g.n_rows), 0.0);
    for (index_t r = 0; r < g.n_rows; ++r) {
        for (index_t p = g.row_offsets[r]; p < g.row_offsets[r + 1]; ++p) {
            const double w = g.values[p];
            if (w < 0.0 && !allow_negative)
                throw DataError("normalize_sym: negative edge weight");
            deg[static_cast<std::size_t>(r)] += w;
        }
    }
    index_t zeroed_rows = 0;
    std::vector<double> inv_sqrt(deg.size(), 0.0);
    for (std::size_t i = 0; i < deg.size(); ++i) {
        if (deg[i] > 0.0) {
            inv_sqrt[i] = 1.0 / std::sqrt(deg[i]);
        } else if (deg[i] < 0.0) {
            ++zeroed_rows;  // non-positive degree: whole row/column zeroed
        }
    }
    if (zeroed_rows > 0)
        std::cerr << "[mgcn] normalize_sym: " << zeroed_rows
                  << " row(s) with non-positive degree zeroed\n";

    SparseGraph out = g;
    for (index_t r = 0; r < g.n_rows; ++r) {
        const double sr = inv_sqrt[static_cast<std::size_t>(r)];
        for (index_t p = g.row_offsets[r]; p < g.row_offsets[r + 1]; ++p) {
            const double sc = inv_sqrt[static_cast<std::size_t>(g.col_indices[p])];
            out.values[p] = g.values[p] * sr * sc;
        }
    }
    return out;
}

DenseMatrix spmm(const SparseGraph& g, const DenseMatrix& x) {
    DenseMatrix out(g.n_rows, x.cols);
    spmm_acc(g, x, out);
    return out;
}

void spmm_acc(const SparseGraph& g, const DenseMatrix& x, DenseMatrix& out) {
    if (g.n_cols != x.rows) throw DataError("spmm: shape mismatch");
    if (out.rows != g.n_rows || out.cols != x.cols) throw DataError("spmm: bad output shape");
    for (index_t r = 0; r < g.n_rows; ++r) {
        double* o = out.row(r);
        for (index_t p = g.row_offsets[r]; p < g.row_offsets[r + 1]; ++p) {
            const double w = g.values[p];
            const double* xr = x.row(g.col_indices[p]);
            for (index_t j = 0; j < x.cols; ++j) o[j] += w * xr[j];
        }
    }
}

SparseGraph knn_affinity_graph(const FeatureMatrix& features, index_t k) {
    const index_t n = features.n_items;
    const index_t d = features.dim;
    if (k < 1) throw DataError("knn_affinity_graph: k must be >= 1");
    if (k > n) k = n;

    // Pre-normalize rows; reject all-zero rows up front.
    DenseMatrix unit(n, d);
    for (index_t i = 0; i < n; ++i) {
        double norm_sq = 0.0;
        const float* src = features.values.data() + i * d;
        for (index_t j = 0; j < d; ++j) {
            const double v = static_cast<double>(src[j]);
            unit.at(i, j) = v;
            norm_sq += v * v;
        }
        if (norm_sq == 0.0)
            throw DataError("knn_affinity_graph: all-zero feature row for item " +
                            std::to_string(i));
        const double inv = 1.0 / std::sqrt(norm_sq);
        for (index_t j = 0; j < d; ++j) unit.at(i, j) *= inv;
    }

    SparseGraph g(n, n);
    g.col_indices.reserve(static_cast<std::size_t>(n * k));
    g.values.reserve(static_cast<std::size_t>(n * k));

    std::vector<std::pair<double, index_t>> cand(static_cast<std::size_t>(n));
    std::vector<std::pair<index_t, double>> kept;
    for (index_t a = 0; a < n; ++a) {
        const double* ua = unit.row(a);
        std::size_t nc = 0;
        for (index_t b = 0; b < n; ++b) {
            if (b == a) continue;
            const double* ub = unit.row(b);
            double s = 0.0;
            for (index_t j = 0; j < d; ++j) s += ua[j] * ub[j];
            s = std::clamp(s, -1.0, 1.0);
            cand[nc++] = {s, b};
        }
        const std::size_t take = static_cast<std::size_t>(k - 1);
        auto better = [](const std::pair<double, index_t>& x, const std::pair<double, index_t>& y) {
            return x.first != y.first ? x.first > y.first : x.second < y.second;
        };
        if (take < nc)
            std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take),
                              cand.begin() + static_cast<std::ptrdiff_t>(nc), better);
        else
            std::sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(nc), better);

        kept.clear();
        kept.push_back({a, 1.0});  // self-edge, cosine(a, a) = 1
        for (std::size_t t = 0; t < std::min(take, nc); ++t)
            kept.push_back({cand[t].second, cand[t].first});
        std::sort(kept.begin(), kept.end());
        for (const auto& [col, w] : kept) {
            g.col_indices.push_back(col);
            g.values.push_back(w);
        }
        g.row_offsets[static_cast<std::size_t>(a) + 1] = static_cast<index_t>(g.values.size());
    }
    return g;
}

namespace {
constexpr char kSparseMagic[4] = {'M', 'G', 'S', 'G'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("sparse file: truncated");
    return v;
}
}  // namespace

void save_sparse(const std::string& path, const SparseGraph& g) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_sparse: cannot open " + path);
    os.write(kSparseMagic, 4);
    write_pod<std::uint32_t>(os, 1);
    write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(g.n_rows));
    write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(g.n_cols));
    write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(g.nnz()));
    for (index_t v : g.row_offsets) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(v));
    for (index_t v : g.col_indices) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(v));
    for (double v : g.values) write_pod<double>(os, v);
    if (!os) throw DataError("save_sparse: write failed for " + path);
}

SparseGraph load_sparse(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_sparse: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kSparseMagic, 4) != 0)
        throw DataError("load_sparse: bad magic in " + path);
    if (read_pod<std::uint32_t>(is) != 1) throw DataError("load_sparse: unsupported version");
    SparseGraph g;
    g.n_rows = static_cast<index_t>(read_pod<std::uint64_t>(is));
    g.n_cols = static_cast<index_t>(read_pod<std::uint64_t>(is));
    const auto nnz = read_pod<std::uint64_t>(is);
    g.row_offsets.resize(static_cast<std::size_t>(g.n_rows) + 1);
    for (auto& v : g.row_offsets) v = static_cast<index_t>(read_pod<std::uint64_t>(is));
    g.col_indices.resize(nnz);
    for (auto& v : g.col_indices) v = static_cast<index_t>(read_pod<std::uint64_t>(is));
    g.values.resize(nnz);
    for (auto& v : g.values) v = read_pod<double>(is);
    g.validate();
    return g;
}

}  // namespace mgcn
