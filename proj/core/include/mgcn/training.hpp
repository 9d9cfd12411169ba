#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgcn/dataset.hpp"
#include "mgcn/dense.hpp"
#include "mgcn/model.hpp"
#include "mgcn/rng.hpp"

namespace mgcn {

enum class ClDenominator { cross_pair, literal };
enum class RegScope { all, batch };

struct TrainConfig {
    index_t batch_size = 2048;
    double lr = 1e-3;
    double lambda_c = 0.01;
    double lambda_e = 1e-4;
    double tau = 0.2;
    index_t max_epochs = 1000;
    index_t patience = 20;
    index_t eval_every = 1;
    std::uint64_t seed = 42;
    ClDenominator cl_denominator = ClDenominator::cross_pair;
    bool cl_normalize = true;
    RegScope reg_scope = RegScope::all;

    void validate() const;
};

struct BprBatch {
    std::vector<index_t> users;
    std::vector<index_t> pos_items;
    std::vector<index_t> neg_items;
    index_t skipped = 0;  // triples dropped after the 100-try negative cap
};

/// Positives uniform over train edges; negatives uniform over items with
/// rejection against the user's train set (cap 100 tries, then the triple is
/// skipped and a fresh positive drawn).
BprBatch sample_bpr_batch(const SplitDataset& split, index_t batch_size, Rng& rng);

/// Mean over the batch of softplus(neg - pos), numerically stable.
double bpr_loss(std::span<const double> pos_scores, std::span<const double> neg_scores);

/// InfoNCE between fused multimodal features and behavior features over the
/// given (unique) user and item ids; item ids are item-space and are offset
/// by n_users internally. Returns user term + item term, each batch-averaged.
double contrastive_loss(const DenseMatrix& e_mul, const DenseMatrix& e_bar_id,
                        const std::vector<index_t>& user_ids,
                        const std::vector<index_t>& item_ids, index_t n_users, double tau,
                        ClDenominator mode, bool normalize);

struct LossBreakdown {
    double bpr = 0.0;
    double cl = 0.0;
    double reg = 0.0;
    double total = 0.0;
};

/// Scalar total loss at the given parameters (used by the finite-difference
/// oracle and reporting; same computation graph as compute_gradients).
LossBreakdown total_loss(const ModelParams& params, const ModelConfig& model_cfg,
                         const TrainConfig& train_cfg, const Graphs& graphs,
                         const std::vector<FeatureMatrix>& features, const BprBatch& batch);

struct Gradients {
    std::vector<std::pair<std::string, DenseMatrix>> tensors;  // canonical order
};

/// Exact reverse-mode gradient of the total loss w.r.t. every parameter
/// tensor. Throws NumericError naming the tensor on non-finite output.
Gradients compute_gradients(const ModelParams& params, const ModelConfig& model_cfg,
                            const TrainConfig& train_cfg, const Graphs& graphs,
                            const std::vector<FeatureMatrix>& features, const BprBatch& batch,
                            LossBreakdown* breakdown = nullptr);

struct AdamState {
    std::vector<DenseMatrix> m;
    std::vector<DenseMatrix> v;
    std::int64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState init(const ModelParams& params);
};

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, double lr);

struct EpochRecord {
    index_t epoch = 0;
    double bpr = 0.0;
    double cl = 0.0;
    double reg = 0.0;
    double total = 0.0;
    std::optional<double> val_recall20;
    double elapsed_ms = 0.0;
};

struct TrainResult {
    ModelParams best_params;
    std::vector<EpochRecord> history;
    double best_val_recall = 0.0;
    index_t best_epoch = 0;
};

/// Full training loop: per-epoch mini-batches, validation Recall@20 every
/// eval_every epochs, early stopping after `patience` non-improving
/// evaluations, best-checkpoint tracking. Deterministic per seed.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const SplitDataset& split, const std::vector<FeatureMatrix>& features,
                  const Graphs* prebuilt_graphs = nullptr);

}  // namespace mgcn
