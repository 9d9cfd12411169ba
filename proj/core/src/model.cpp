#include "mgcn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "mgcn/errors.hpp"
#include "mgcn/rng.hpp"

namespace mgcn {

void ModelConfig::validate() const {
    if (embedding_dim < 1) throw DataError("ModelConfig: embedding_dim must be >= 1");
    if (ui_layers < 0) throw DataError("ModelConfig: ui_layers must be >= 0");
    if (ii_layers < 1) throw DataError("ModelConfig: ii_layers must be >= 1");
    if (knn_k < 1) throw DataError("ModelConfig: knn_k must be >= 1");
    if (modalities.empty()) throw DataError("ModelConfig: modality list must be non-empty");
    if (modalities.size() != modality_dims.size())
        throw DataError("ModelConfig: modality_dims must align with modalities");
    for (index_t d : modality_dims)
        if (d < 1) throw DataError("ModelConfig: modality dim must be >= 1");
}

std::vector<std::pair<std::string, DenseMatrix*>> ModelParams::tensors() {
    std::vector<std::pair<std::string, DenseMatrix*>> out;
    out.push_back({"E_id", &e_id});
    for (std::size_t m = 0; m < modality.size(); ++m) {
        const std::string& tag = modality_tags[m];
        out.push_back({"W1_" + tag, &modality[m].w1});
        out.push_back({"b1_" + tag, &modality[m].b1});
        out.push_back({"W2_" + tag, &modality[m].w2});
        out.push_back({"b2_" + tag, &modality[m].b2});
        if (per_modality_gate) {
            out.push_back({"W3_" + tag, &modality[m].w3});
            out.push_back({"b3_" + tag, &modality[m].b3});
        }
    }
    if (!per_modality_gate) {
        out.push_back({"W3", &w3});
        out.push_back({"b3", &b3});
    }
    out.push_back({"W4", &w4});
    out.push_back({"b4", &b4});
    out.push_back({"q1", &q1});
    return out;
}

std::vector<std::pair<std::string, const DenseMatrix*>> ModelParams::tensors() const {
    auto mutable_view = const_cast<ModelParams*>(this)->tensors();
    std::vector<std::pair<std::string, const DenseMatrix*>> out;
    out.reserve(mutable_view.size());
    for (auto& [name, ptr] : mutable_view) out.push_back({name, ptr});
    return out;
}

namespace {
void xavier_fill(DenseMatrix& m, index_t fan_in, index_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : m.data) v = rng.uniform(-bound, bound);
}
}  // namespace

ModelParams init_params(const ModelConfig& cfg, index_t n_users, index_t n_items,
                        std::uint64_t seed) {
    cfg.validate();
    const index_t d = cfg.embedding_dim;
    Rng rng(seed);

    ModelParams p;
    p.n_users = n_users;
    p.n_items = n_items;
    p.per_modality_gate = cfg.per_modality_gate;
    p.modality_tags = cfg.modalities;

    p.e_id = DenseMatrix(n_users + n_items, d);
    xavier_fill(p.e_id, d, d, rng);  // embedding table: fan_in = fan_out = d

    for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
        const index_t dm = cfg.modality_dims[m];
        ModelParams::ModalityParams mp;
        mp.w1 = DenseMatrix(d, dm);
        xavier_fill(mp.w1, dm, d, rng);
        mp.b1 = DenseMatrix(1, d);
        mp.w2 = DenseMatrix(d, d);
        xavier_fill(mp.w2, d, d, rng);
        mp.b2 = DenseMatrix(1, d);
        if (cfg.per_modality_gate) {
            mp.w3 = DenseMatrix(d, d);
            xavier_fill(mp.w3, d, d, rng);
            mp.b3 = DenseMatrix(1, d);
        }
        p.modality.push_back(std::move(mp));
    }
    if (!cfg.per_modality_gate) {
        p.w3 = DenseMatrix(d, d);
        xavier_fill(p.w3, d, d, rng);
        p.b3 = DenseMatrix(1, d);
    }
    p.w4 = DenseMatrix(d, d);
    xavier_fill(p.w4, d, d, rng);
    p.b4 = DenseMatrix(1, d);
    p.q1 = DenseMatrix(d, 1);
    xavier_fill(p.q1, d, 1, rng);
    return p;
}

Graphs build_graphs(const SplitDataset& split, const std::vector<FeatureMatrix>& features,
                    const ModelConfig& cfg) {
    if (features.size() != cfg.modalities.size())
        throw DataError("build_graphs: feature count does not match modality list");
    Graphs g;
    g.n_users = split.base.n_users;
    g.n_items = split.base.n_items;
    const SparseGraph adj = build_bipartite_adjacency(split.train_edges, g.n_users, g.n_items);
    g.laplacian = normalize_sym(adj);
    g.r_block = sparse_slice(g.laplacian, 0, g.n_users, g.n_users, g.n_users + g.n_items);
    g.r_block_t = sparse_transpose(g.r_block);
    for (std::size_t m = 0; m < features.size(); ++m) {
        if (features[m].n_items != g.n_items)
            throw DataError("build_graphs: feature rows do not match item count");
        const SparseGraph knn = knn_affinity_graph(features[m], cfg.knn_k);
        g.item_graph.push_back(normalize_sym(knn, /*allow_negative=*/true));
        g.item_graph_t.push_back(sparse_transpose(g.item_graph.back()));
    }
    return g;
}

ParamLeaves register_params(ad::Tape& tape, const ModelParams& params, bool requires_grad) {
    ParamLeaves leaves;
    for (const auto& [name, tensor] : params.tensors()) {
        const ad::Tape::Handle h = tape.leaf(*tensor, requires_grad);
        leaves.named.push_back({name, h});
    }
    // Map named handles back onto structural fields.
    std::size_t idx = 0;
    auto next = [&]() { return leaves.named[idx++].second; };
    leaves.e_id = next();
    for (std::size_t m = 0; m < params.modality.size(); ++m) {
        ParamLeaves::PerModality pm;
        pm.w1 = next();
        pm.b1 = next();
        pm.w2 = next();
        pm.b2 = next();
        if (params.per_modality_gate) {
            pm.w3 = next();
            pm.b3 = next();
        }
        leaves.modality.push_back(pm);
    }
    if (!params.per_modality_gate) {
        leaves.w3 = next();
        leaves.b3 = next();
    }
    leaves.w4 = next();
    leaves.b4 = next();
    leaves.q1 = next();
    return leaves;
}

namespace {

/// Eq-style layer-averaged propagation: mean of layers 0..L.
ad::Tape::Handle propagate_avg(ad::Tape& tape, const SparseGraph* g, const SparseGraph* gt,
                               ad::Tape::Handle e0, index_t layers) {
    if (layers == 0) return e0;
    ad::Tape::Handle acc = e0;
    ad::Tape::Handle cur = e0;
    for (index_t l = 0; l < layers; ++l) {
        cur = tape.spmm(g, gt, cur);
        acc = tape.add(acc, cur);
    }
    return tape.scale(acc, 1.0 / static_cast<double>(layers + 1));
}

}  // namespace

ForwardHandles build_forward(ad::Tape& tape, const ParamLeaves& leaves, const ModelConfig& cfg,
                             const Graphs& graphs, const std::vector<FeatureMatrix>& features) {
    cfg.validate();
    if (features.size() != cfg.modalities.size())
        throw DataError("build_forward: feature count mismatch");
    const index_t n_users = graphs.n_users;
    const index_t n_items = graphs.n_items;
    const std::size_t n_mod = cfg.modalities.size();

    ForwardHandles h;

    // Behavior view: propagate ID embeddings over the user-item graph.
    h.e_bar_id = propagate_avg(tape, &graphs.laplacian, &graphs.laplacian, leaves.e_id,
                               cfg.ui_layers);
    // Initial item ID embeddings guide the purifier gate.
    const ad::Tape::Handle e_item_id0 = tape.slice_rows(leaves.e_id, n_users, n_items);

    for (std::size_t m = 0; m < n_mod; ++m) {
        const ad::Tape::Handle raw = tape.leaf(to_dense(features[m]), false);
        const auto& pm = leaves.modality[m];

        // High-level modality features, then the behavior-guided gate.
        const ad::Tape::Handle e_hat =
            tape.add_row_vector(tape.matmul_nt(raw, pm.w1), pm.b1);
        h.e_hat.push_back(e_hat);
        ad::Tape::Handle e_ddot = e_hat;
        if (!cfg.disable_purifier) {
            const ad::Tape::Handle gate =
                tape.sigmoid(tape.add_row_vector(tape.matmul_nt(e_hat, pm.w2), pm.b2));
            e_ddot = tape.ewmul(e_item_id0, gate);
        }
        h.e_ddot.push_back(e_ddot);

        ad::Tape::Handle e_bar_m;
        if (!cfg.disable_item_item_view) {
            ad::Tape::Handle items = e_ddot;
            for (index_t l = 0; l < cfg.ii_layers; ++l)
                items = tape.spmm(&graphs.item_graph[m], &graphs.item_graph_t[m], items);
            const ad::Tape::Handle users =
                tape.spmm(&graphs.r_block, &graphs.r_block_t, items);
            e_bar_m = tape.concat_rows(users, items);
        } else {
            // w/o MV: no item-item propagation; stack aggregated user rows on
            // the purified item rows and run them through the user-item graph
            // like the behavior features.
            const ad::Tape::Handle users =
                tape.spmm(&graphs.r_block, &graphs.r_block_t, e_ddot);
            const ad::Tape::Handle stacked = tape.concat_rows(users, e_ddot);
            e_bar_m = propagate_avg(tape, &graphs.laplacian, &graphs.laplacian, stacked,
                                    cfg.ui_layers);
        }
        h.e_bar_m.push_back(e_bar_m);
    }

    if (!cfg.disable_behavior_aware_fuser) {
        // Modality preference gate, shared or per modality.
        for (std::size_t m = 0; m < n_mod; ++m) {
            const ad::Tape::Handle w3 = cfg.per_modality_gate ? leaves.modality[m].w3 : leaves.w3;
            const ad::Tape::Handle b3 = cfg.per_modality_gate ? leaves.modality[m].b3 : leaves.b3;
            h.p_gate.push_back(
                tape.sigmoid(tape.add_row_vector(tape.matmul_nt(h.e_bar_id, w3), b3)));
        }
        // Per-node attention over modalities.
        std::vector<ad::Tape::Handle> scores;
        for (std::size_t m = 0; m < n_mod; ++m) {
            const ad::Tape::Handle t =
                tape.tanh(tape.add_row_vector(tape.matmul_nt(h.e_bar_m[m], leaves.w4), leaves.b4));
            scores.push_back(tape.matmul(t, leaves.q1));
        }
        h.alpha = tape.softmax_rows(tape.hstack_cols(scores));
        ad::Tape::Handle e_s = tape.scale_rows(h.e_bar_m[0], tape.col(h.alpha, 0));
        for (std::size_t m = 1; m < n_mod; ++m)
            e_s = tape.add(e_s, tape.scale_rows(h.e_bar_m[m], tape.col(h.alpha,
                                                                       static_cast<index_t>(m))));
        h.e_s = e_s;
        ad::Tape::Handle specific_sum = -1;
        for (std::size_t m = 0; m < n_mod; ++m) {
            const ad::Tape::Handle tilde = tape.sub(h.e_bar_m[m], e_s);
            const ad::Tape::Handle gated = tape.ewmul(tilde, h.p_gate[m]);
            specific_sum = (m == 0) ? gated : tape.add(specific_sum, gated);
        }
        h.e_mul = tape.add(e_s, tape.scale(specific_sum, 1.0 / static_cast<double>(n_mod)));
    } else {
        // w/o BA: plain average of the modality features.
        ad::Tape::Handle sum = h.e_bar_m[0];
        for (std::size_t m = 1; m < n_mod; ++m) sum = tape.add(sum, h.e_bar_m[m]);
        h.e_mul = tape.scale(sum, 1.0 / static_cast<double>(n_mod));
        h.e_s = h.e_mul;
    }

    h.e_final = tape.add(h.e_bar_id, h.e_mul);
    return h;
}

ForwardArtifacts forward(const ModelParams& params, const ModelConfig& cfg, const Graphs& graphs,
                         const std::vector<FeatureMatrix>& features) {
    ad::Tape tape;
    const ParamLeaves leaves = register_params(tape, params, /*requires_grad=*/false);
    const ForwardHandles h = build_forward(tape, leaves, cfg, graphs, features);

    ForwardArtifacts a;
    for (auto hh : h.e_hat) a.e_hat.push_back(tape.value(hh));
    for (auto hh : h.e_ddot) a.e_ddot.push_back(tape.value(hh));
    a.e_bar_id = tape.value(h.e_bar_id);
    for (auto hh : h.e_bar_m) a.e_bar_m.push_back(tape.value(hh));
    const index_t n = graphs.n_users + graphs.n_items;
    const auto n_mod = static_cast<index_t>(cfg.modalities.size());
    if (h.alpha >= 0) {
        a.alpha = tape.value(h.alpha);
        a.e_s = tape.value(h.e_s);
        for (auto hh : h.p_gate) a.p_gate.push_back(tape.value(hh));
    } else {
        // Fuser disabled: uniform attention, shared component = the average.
        a.alpha = DenseMatrix(n, n_mod);
        for (double& v : a.alpha.data) v = 1.0 / static_cast<double>(n_mod);
        a.e_s = tape.value(h.e_s);
    }
    a.e_mul = tape.value(h.e_mul);
    a.e_final = tape.value(h.e_final);

    if (!a.e_final.all_finite()) throw NumericError("forward: non-finite final representations");
    return a;
}

std::pair<DenseMatrix, DenseMatrix> purify(const DenseMatrix& w1, const DenseMatrix& b1,
                                           const DenseMatrix& w2, const DenseMatrix& b2,
                                           const DenseMatrix& raw, const DenseMatrix& e_item_id) {
    ad::Tape tape;
    const auto hw1 = tape.leaf(w1, false), hb1 = tape.leaf(b1, false);
    const auto hw2 = tape.leaf(w2, false), hb2 = tape.leaf(b2, false);
    const auto hraw = tape.leaf(raw, false), hid = tape.leaf(e_item_id, false);
    const auto e_hat = tape.add_row_vector(tape.matmul_nt(hraw, hw1), hb1);
    const auto gate = tape.sigmoid(tape.add_row_vector(tape.matmul_nt(e_hat, hw2), hb2));
    const auto e_ddot = tape.ewmul(hid, gate);
    return {tape.value(e_hat), tape.value(e_ddot)};
}

DenseMatrix propagate_user_item(const SparseGraph& l_norm, const DenseMatrix& e0, index_t layers) {
    if (l_norm.n_rows != l_norm.n_cols || l_norm.n_cols != e0.rows)
        throw DataError("propagate_user_item: shape mismatch");
    DenseMatrix acc = e0;
    DenseMatrix cur = e0;
    for (index_t l = 0; l < layers; ++l) {
        cur = spmm(l_norm, cur);
        for (index_t i = 0; i < acc.size(); ++i) acc.data[i] += cur.data[i];
    }
    const double inv = 1.0 / static_cast<double>(layers + 1);
    for (double& v : acc.data) v *= inv;
    return acc;
}

DenseMatrix propagate_item_item(const SparseGraph& s_norm, const DenseMatrix& e_items,
                                index_t layers) {
    if (s_norm.n_rows != s_norm.n_cols || s_norm.n_cols != e_items.rows)
        throw DataError("propagate_item_item: shape mismatch");
    DenseMatrix cur = e_items;
    for (index_t l = 0; l < layers; ++l) cur = spmm(s_norm, cur);
    return cur;
}

DenseMatrix aggregate_user_modality(const SparseGraph& r_norm_block,
                                    const DenseMatrix& e_bar_items) {
    return spmm(r_norm_block, e_bar_items);
}

FuseResult fuse(const ModelParams& params, const std::vector<DenseMatrix>& e_bar_m,
                const DenseMatrix& e_bar_id) {
    const auto n_mod = e_bar_m.size();
    if (n_mod == 0) throw DataError("fuse: no modalities");
    ad::Tape tape;
    const auto hid = tape.leaf(e_bar_id, false);
    const auto hw4 = tape.leaf(params.w4, false), hb4 = tape.leaf(params.b4, false);
    const auto hq1 = tape.leaf(params.q1, false);

    std::vector<ad::Tape::Handle> hm, scores, gates;
    for (std::size_t m = 0; m < n_mod; ++m) {
        hm.push_back(tape.leaf(e_bar_m[m], false));
        const auto& w3 = params.per_modality_gate ? params.modality[m].w3 : params.w3;
        const auto& b3 = params.per_modality_gate ? params.modality[m].b3 : params.b3;
        gates.push_back(tape.sigmoid(
            tape.add_row_vector(tape.matmul_nt(hid, tape.leaf(w3, false)), tape.leaf(b3, false))));
        scores.push_back(
            tape.matmul(tape.tanh(tape.add_row_vector(tape.matmul_nt(hm[m], hw4), hb4)), hq1));
    }
    const auto alpha = tape.softmax_rows(tape.hstack_cols(scores));
    auto e_s = tape.scale_rows(hm[0], tape.col(alpha, 0));
    for (std::size_t m = 1; m < n_mod; ++m)
        e_s = tape.add(e_s, tape.scale_rows(hm[m], tape.col(alpha, static_cast<index_t>(m))));
    ad::Tape::Handle specific = -1;
    for (std::size_t m = 0; m < n_mod; ++m) {
        const auto gated = tape.ewmul(tape.sub(hm[m], e_s), gates[m]);
        specific = (m == 0) ? gated : tape.add(specific, gated);
    }
    const auto e_mul = tape.add(e_s, tape.scale(specific, 1.0 / static_cast<double>(n_mod)));

    FuseResult out;
    out.alpha = tape.value(alpha);
    out.e_s = tape.value(e_s);
    for (auto g : gates) out.p_gate.push_back(tape.value(g));
    out.e_mul = tape.value(e_mul);
    return out;
}

std::vector<double> predict_scores(const double* e_u, const DenseMatrix& e_items) {
    std::vector<double> scores(static_cast<std::size_t>(e_items.rows));
    for (index_t i = 0; i < e_items.rows; ++i) {
        const double* ri = e_items.row(i);
        double s = 0.0;
        for (index_t j = 0; j < e_items.cols; ++j) s += e_u[j] * ri[j];
        scores[static_cast<std::size_t>(i)] = s;
    }
    return scores;
}

}  // namespace mgcn
