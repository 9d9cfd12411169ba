#include "mgcn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <set>

#include "mgcn/errors.hpp"
#include "mgcn/eval.hpp"

namespace mgcn {

void TrainConfig::validate() const {
    if (batch_size < 1) throw DataError("TrainConfig: batch_size must be >= 1");
    if (lr <= 0.0) throw DataError("TrainConfig: lr must be positive");
    if (lambda_c < 0.0 || lambda_e < 0.0) throw DataError("TrainConfig: lambdas must be >= 0");
    if (tau <= 0.0) throw DataError("TrainConfig: tau must be positive");
    if (max_epochs < 0) throw DataError("TrainConfig: max_epochs must be >= 0");
    if (patience < 1) throw DataError("TrainConfig: patience must be >= 1");
    if (eval_every < 1) throw DataError("TrainConfig: eval_every must be >= 1");
}

BprBatch sample_bpr_batch(const SplitDataset& split, index_t batch_size, Rng& rng) {
    const auto& edges = split.train_edges;
    if (edges.empty()) throw DataError("sample_bpr_batch: empty train split");
    const index_t n_items = split.base.n_items;

    BprBatch batch;
    batch.users.reserve(static_cast<std::size_t>(batch_size));
    while (static_cast<index_t>(batch.users.size()) < batch_size) {
        const Edge& e = edges[static_cast<std::size_t>(rng.index(static_cast<index_t>(edges.size())))];
        const auto& seen = split.train_items_by_user[static_cast<std::size_t>(e.first)];
        index_t neg = -1;
        for (int tries = 0; tries < 100; ++tries) {
            const index_t cand = rng.index(n_items);
            if (!std::binary_search(seen.begin(), seen.end(), cand)) {
                neg = cand;
                break;
            }
        }
        if (neg < 0) {
            ++batch.skipped;  // user interacts with (almost) all items
            continue;
        }
        batch.users.push_back(e.first);
        batch.pos_items.push_back(e.second);
        batch.neg_items.push_back(neg);
    }
    if (batch.skipped > 0)
        std::cerr << "[mgcn] sample_bpr_batch: skipped " << batch.skipped
                  << " triple(s) without reachable negatives\n";
    return batch;
}

namespace {
double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
}  // namespace

double bpr_loss(std::span<const double> pos_scores, std::span<const double> neg_scores) {
    if (pos_scores.size() != neg_scores.size() || pos_scores.empty())
        throw DataError("bpr_loss: score spans must be equal and non-empty");
    double total = 0.0;
    for (std::size_t i = 0; i < pos_scores.size(); ++i)
        total += stable_softplus(neg_scores[i] - pos_scores[i]);
    return total / static_cast<double>(pos_scores.size());
}

namespace {

std::vector<index_t> unique_sorted(const std::vector<index_t>& ids) {
    std::vector<index_t> out = ids;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// One InfoNCE term (user side or item side) on the tape.
ad::Tape::Handle contrastive_term(ad::Tape& tape, ad::Tape::Handle anchors,
                                  ad::Tape::Handle positives, double tau, ClDenominator mode,
                                  bool normalize) {
    ad::Tape::Handle a = anchors, b = positives;
    if (normalize) {
        a = tape.row_normalize(a);
        b = tape.row_normalize(b);
    }
    if (mode == ClDenominator::cross_pair) {
        const auto sim = tape.scale(tape.matmul_nt(a, b), 1.0 / tau);
        return tape.cross_entropy_diag(sim);
    }
    // literal: denominator sums each anchor's own aligned pair
    const auto aligned = tape.scale(tape.rowwise_dot(a, b), 1.0 / tau);
    return tape.sub(tape.logsumexp_all(aligned), tape.mean_all(aligned));
}

struct LossHandles {
    ad::Tape::Handle bpr = -1;
    ad::Tape::Handle cl = -1;   // -1 when lambda_c == 0
    ad::Tape::Handle reg = -1;  // -1 when lambda_e == 0
    ad::Tape::Handle total = -1;
};

LossHandles build_loss(ad::Tape& tape, const ForwardHandles& fwd, const ParamLeaves& leaves,
                       const TrainConfig& cfg, const BprBatch& batch, index_t n_users) {
    if (batch.users.empty()) throw DataError("build_loss: empty batch");
    LossHandles out;

    std::vector<index_t> pos_rows, neg_rows;
    pos_rows.reserve(batch.pos_items.size());
    neg_rows.reserve(batch.neg_items.size());
    for (index_t i : batch.pos_items) pos_rows.push_back(n_users + i);
    for (index_t i : batch.neg_items) neg_rows.push_back(n_users + i);

    const auto u_rows = tape.gather_rows(fwd.e_final, batch.users);
    const auto p_rows = tape.gather_rows(fwd.e_final, pos_rows);
    const auto n_rows = tape.gather_rows(fwd.e_final, neg_rows);
    const auto pos_s = tape.rowwise_dot(u_rows, p_rows);
    const auto neg_s = tape.rowwise_dot(u_rows, n_rows);
    out.bpr = tape.mean_all(tape.softplus(tape.sub(neg_s, pos_s)));
    out.total = out.bpr;

    if (cfg.lambda_c != 0.0) {
        const std::vector<index_t> uu = unique_sorted(batch.users);
        std::vector<index_t> items = batch.pos_items;
        items.insert(items.end(), batch.neg_items.begin(), batch.neg_items.end());
        std::vector<index_t> ii = unique_sorted(items);
        for (index_t& i : ii) i += n_users;

        const auto user_term = contrastive_term(
            tape, tape.gather_rows(fwd.e_mul, uu), tape.gather_rows(fwd.e_bar_id, uu), cfg.tau,
            cfg.cl_denominator, cfg.cl_normalize);
        const auto item_term = contrastive_term(
            tape, tape.gather_rows(fwd.e_mul, ii), tape.gather_rows(fwd.e_bar_id, ii), cfg.tau,
            cfg.cl_denominator, cfg.cl_normalize);
        out.cl = tape.add(user_term, item_term);
        out.total = tape.add(out.total, tape.scale(out.cl, cfg.lambda_c));
    }

    if (cfg.lambda_e != 0.0) {
        if (cfg.reg_scope == RegScope::all) {
            ad::Tape::Handle reg = -1;
            for (const auto& [name, h] : leaves.named) {
                const auto ss = tape.sum_squares(h);
                reg = (reg < 0) ? ss : tape.add(reg, ss);
            }
            out.reg = reg;
        } else {
            std::vector<index_t> nodes = batch.users;
            for (index_t i : batch.pos_items) nodes.push_back(n_users + i);
            for (index_t i : batch.neg_items) nodes.push_back(n_users + i);
            out.reg = tape.sum_squares(tape.gather_rows(leaves.e_id, unique_sorted(nodes)));
        }
        out.total = tape.add(out.total, tape.scale(out.reg, cfg.lambda_e));
    }
    return out;
}

LossBreakdown extract_breakdown(ad::Tape& tape, const LossHandles& h) {
    LossBreakdown b;
    b.bpr = tape.value(h.bpr).at(0, 0);
    b.cl = h.cl >= 0 ? tape.value(h.cl).at(0, 0) : 0.0;
    b.reg = h.reg >= 0 ? tape.value(h.reg).at(0, 0) : 0.0;
    b.total = tape.value(h.total).at(0, 0);
    return b;
}

}  // namespace

double contrastive_loss(const DenseMatrix& e_mul, const DenseMatrix& e_bar_id,
                        const std::vector<index_t>& user_ids,
                        const std::vector<index_t>& item_ids, index_t n_users, double tau,
                        ClDenominator mode, bool normalize) {
    if (tau <= 0.0) throw DataError("contrastive_loss: tau must be positive");
    if (user_ids.empty() && item_ids.empty()) throw DataError("contrastive_loss: empty batch");
    ad::Tape tape;
    const auto mul = tape.leaf(e_mul, false);
    const auto id = tape.leaf(e_bar_id, false);
    double total = 0.0;
    if (!user_ids.empty()) {
        const auto t = contrastive_term(tape, tape.gather_rows(mul, user_ids),
                                        tape.gather_rows(id, user_ids), tau, mode, normalize);
        total += tape.value(t).at(0, 0);
    }
    if (!item_ids.empty()) {
        std::vector<index_t> rows = item_ids;
        for (index_t& i : rows) i += n_users;
        const auto t = contrastive_term(tape, tape.gather_rows(mul, rows),
                                        tape.gather_rows(id, rows), tau, mode, normalize);
        total += tape.value(t).at(0, 0);
    }
    return total;
}

LossBreakdown total_loss(const ModelParams& params, const ModelConfig& model_cfg,
                         const TrainConfig& train_cfg, const Graphs& graphs,
                         const std::vector<FeatureMatrix>& features, const BprBatch& batch) {
    ad::Tape tape;
    const ParamLeaves leaves = register_params(tape, params, /*requires_grad=*/false);
    const ForwardHandles fwd = build_forward(tape, leaves, model_cfg, graphs, features);
    const LossHandles loss = build_loss(tape, fwd, leaves, train_cfg, batch, graphs.n_users);
    return extract_breakdown(tape, loss);
}

Gradients compute_gradients(const ModelParams& params, const ModelConfig& model_cfg,
                            const TrainConfig& train_cfg, const Graphs& graphs,
                            const std::vector<FeatureMatrix>& features, const BprBatch& batch,
                            LossBreakdown* breakdown) {
    ad::Tape tape;
    const ParamLeaves leaves = register_params(tape, params, /*requires_grad=*/true);
    const ForwardHandles fwd = build_forward(tape, leaves, model_cfg, graphs, features);
    const LossHandles loss = build_loss(tape, fwd, leaves, train_cfg, batch, graphs.n_users);

    const LossBreakdown b = extract_breakdown(tape, loss);
    if (!std::isfinite(b.total)) throw NumericError("compute_gradients: non-finite total loss");
    if (breakdown) *breakdown = b;

    tape.backward(loss.total);

    Gradients grads;
    for (const auto& [name, h] : leaves.named) {
        DenseMatrix g = tape.grad(h);
        if (!g.all_finite())
            throw NumericError("compute_gradients: non-finite gradient for tensor " + name);
        grads.tensors.push_back({name, std::move(g)});
    }
    return grads;
}

AdamState AdamState::init(const ModelParams& params) {
    AdamState s;
    for (const auto& [name, tensor] : params.tensors()) {
        s.m.push_back(DenseMatrix(tensor->rows, tensor->cols));
        s.v.push_back(DenseMatrix(tensor->rows, tensor->cols));
    }
    return s;
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, double lr) {
    auto tensors = params.tensors();
    if (tensors.size() != grads.tensors.size() || tensors.size() != state.m.size())
        throw DataError("adam_step: tensor count mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        DenseMatrix& theta = *tensors[k].second;
        const DenseMatrix& g = grads.tensors[k].second;
        if (!theta.same_shape(g)) throw DataError("adam_step: gradient shape mismatch");
        DenseMatrix& m = state.m[k];
        DenseMatrix& v = state.v[k];
        for (index_t i = 0; i < theta.size(); ++i) {
            const double gi = g.data[i];
            m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * gi;
            v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * gi * gi;
            const double m_hat = m.data[i] / bc1;
            const double v_hat = v.data[i] / bc2;
            theta.data[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const SplitDataset& split, const std::vector<FeatureMatrix>& features,
                  const Graphs* prebuilt_graphs) {
    model_cfg.validate();
    train_cfg.validate();
    if (split.train_edges.empty()) throw DataError("train: empty train split");

    Graphs local_graphs;
    const Graphs* graphs = prebuilt_graphs;
    if (!graphs) {
        local_graphs = build_graphs(split, features, model_cfg);
        graphs = &local_graphs;
    }

    ModelParams params =
        init_params(model_cfg, split.base.n_users, split.base.n_items, train_cfg.seed);
    AdamState adam = AdamState::init(params);
    Rng sample_rng(train_cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    TrainResult result;
    result.best_params = params;
    result.best_val_recall = -1.0;
    result.best_epoch = 0;

    const bool has_val = !split.val_edges.empty();
    const index_t n_train = static_cast<index_t>(split.train_edges.size());
    const index_t batches_per_epoch =
        (n_train + train_cfg.batch_size - 1) / train_cfg.batch_size;

    index_t bad_rounds = 0;
    for (index_t epoch = 1; epoch <= train_cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        LossBreakdown epoch_loss;
        for (index_t b = 0; b < batches_per_epoch; ++b) {
            const BprBatch batch = sample_bpr_batch(split, train_cfg.batch_size, sample_rng);
            LossBreakdown lb;
            const Gradients grads =
                compute_gradients(params, model_cfg, train_cfg, *graphs, features, batch, &lb);
            adam_step(params, grads, adam, train_cfg.lr);
            epoch_loss.bpr += lb.bpr;
            epoch_loss.cl += lb.cl;
            epoch_loss.reg += lb.reg;
            epoch_loss.total += lb.total;
        }
        const double inv_b = 1.0 / static_cast<double>(batches_per_epoch);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.bpr = epoch_loss.bpr * inv_b;
        rec.cl = epoch_loss.cl * inv_b;
        rec.reg = epoch_loss.reg * inv_b;
        rec.total = epoch_loss.total * inv_b;

        bool stop = false;
        if (has_val && epoch % train_cfg.eval_every == 0) {
            const EvalReport report =
                evaluate(params, model_cfg, *graphs, features, split, EvalPhase::validation, {20});
            const double recall = report.recall.at(20);
            rec.val_recall20 = recall;
            if (recall > result.best_val_recall) {
                result.best_val_recall = recall;
                result.best_params = params;
                result.best_epoch = epoch;
                bad_rounds = 0;
            } else {
                ++bad_rounds;
                if (bad_rounds >= train_cfg.patience) stop = true;
            }
        }
        rec.elapsed_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
        result.history.push_back(rec);
        if (stop) break;
    }

    if (!has_val || result.best_val_recall < 0.0) {
        result.best_params = params;  // no validation signal: keep final params
        result.best_epoch = result.history.empty() ? 0 : result.history.back().epoch;
    }
    return result;
}

}  // namespace mgcn
