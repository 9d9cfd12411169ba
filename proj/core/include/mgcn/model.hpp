#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mgcn/autodiff.hpp"
#include "mgcn/dataset.hpp"
#include "mgcn/dense.hpp"
#include "mgcn/sparse.hpp"

namespace mgcn {

struct ModelConfig {
    index_t embedding_dim = 64;
    std::vector<std::string> modalities;   // ordered tags, e.g. {"visual", "textual"}
    std::vector<index_t> modality_dims;    // d_m aligned with modalities
    index_t ui_layers = 2;
    index_t ii_layers = 1;
    index_t knn_k = 15;
    bool per_modality_gate = false;        // separate (W3_m, b3_m) per modality
    bool disable_purifier = false;            // w/o BG
    bool disable_item_item_view = false;      // w/o MV
    bool disable_behavior_aware_fuser = false;  // w/o BA

    void validate() const;
};

/// All trainable tensors. Biases are stored 1 x d, the attention vector
/// q1 as d x 1.
struct ModelParams {
    index_t n_users = 0;
    index_t n_items = 0;
    DenseMatrix e_id;  // (n_users + n_items) x d, user rows first

    struct ModalityParams {
        DenseMatrix w1;  // d x d_m
        DenseMatrix b1;  // 1 x d
        DenseMatrix w2;  // d x d
        DenseMatrix b2;  // 1 x d
        DenseMatrix w3;  // d x d, only with per_modality_gate
        DenseMatrix b3;  // 1 x d, only with per_modality_gate
    };
    std::vector<ModalityParams> modality;  // aligned with config order

    DenseMatrix w3;  // d x d (shared gate)
    DenseMatrix b3;  // 1 x d
    DenseMatrix w4;  // d x d
    DenseMatrix b4;  // 1 x d
    DenseMatrix q1;  // d x 1

    bool per_modality_gate = false;
    std::vector<std::string> modality_tags;

    /// Tensors in canonical (checkpoint / optimizer) order.
    std::vector<std::pair<std::string, DenseMatrix*>> tensors();
    std::vector<std::pair<std::string, const DenseMatrix*>> tensors() const;
};

/// Xavier-uniform init: linear maps use their two dimensions as fans, the
/// embedding table uses fan_in = fan_out = d, q1 uses (d, 1). Biases zero.
ModelParams init_params(const ModelConfig& cfg, index_t n_users, index_t n_items,
                        std::uint64_t seed);

/// Prebuilt constant graphs for one dataset. Transposes are kept so the tape
/// can backpropagate through sparse products; item graphs are kept in model
/// config modality order.
struct Graphs {
    index_t n_users = 0;
    index_t n_items = 0;
    SparseGraph laplacian;    // (U+I)^2 symmetric-normalized bipartite graph
    SparseGraph r_block;      // user rows x item cols slice of laplacian
    SparseGraph r_block_t;
    std::vector<SparseGraph> item_graph;    // normalized KNN graph per modality
    std::vector<SparseGraph> item_graph_t;
};

Graphs build_graphs(const SplitDataset& split, const std::vector<FeatureMatrix>& features,
                    const ModelConfig& cfg);

/// Cached intermediates of one forward pass.
struct ForwardArtifacts {
    std::vector<DenseMatrix> e_hat;   // per modality, items x d
    std::vector<DenseMatrix> e_ddot;  // per modality, items x d
    DenseMatrix e_bar_id;             // (U+I) x d
    std::vector<DenseMatrix> e_bar_m;  // per modality, (U+I) x d
    DenseMatrix alpha;                // (U+I) x |M|, rows sum to 1
    DenseMatrix e_s;                  // (U+I) x d
    std::vector<DenseMatrix> p_gate;  // per modality, (U+I) x d
    DenseMatrix e_mul;                // (U+I) x d
    DenseMatrix e_final;              // (U+I) x d; users first, then items
};

/// Tape handles of the forward pass, for training to attach losses to.
struct ForwardHandles {
    ad::Tape::Handle e_bar_id = -1;
    std::vector<ad::Tape::Handle> e_hat;
    std::vector<ad::Tape::Handle> e_ddot;
    std::vector<ad::Tape::Handle> e_bar_m;
    ad::Tape::Handle alpha = -1;  // -1 when the fuser is disabled
    ad::Tape::Handle e_s = -1;
    std::vector<ad::Tape::Handle> p_gate;
    ad::Tape::Handle e_mul = -1;
    ad::Tape::Handle e_final = -1;
};

/// Parameter leaves registered on a tape, in canonical tensor order.
struct ParamLeaves {
    std::vector<std::pair<std::string, ad::Tape::Handle>> named;
    ad::Tape::Handle e_id = -1;
    struct PerModality {
        ad::Tape::Handle w1, b1, w2, b2, w3 = -1, b3 = -1;
    };
    std::vector<PerModality> modality;
    ad::Tape::Handle w3 = -1, b3 = -1, w4 = -1, b4 = -1, q1 = -1;
};

ParamLeaves register_params(ad::Tape& tape, const ModelParams& params, bool requires_grad);

/// Build the full forward computation on the tape. `graphs` must outlive
/// the tape. Features are taken as constants.
ForwardHandles build_forward(ad::Tape& tape, const ParamLeaves& leaves, const ModelConfig& cfg,
                             const Graphs& graphs, const std::vector<FeatureMatrix>& features);

/// Convenience wrapper: run one forward pass and extract all artifacts.
ForwardArtifacts forward(const ModelParams& params, const ModelConfig& cfg, const Graphs& graphs,
                         const std::vector<FeatureMatrix>& features);

// -- standalone operations (thin wrappers over the same tape ops) -----------

/// Eq-level purifier: returns (E_hat, E_ddot) for one modality.
std::pair<DenseMatrix, DenseMatrix> purify(const DenseMatrix& w1, const DenseMatrix& b1,
                                           const DenseMatrix& w2, const DenseMatrix& b2,
                                           const DenseMatrix& raw, const DenseMatrix& e_item_id);

/// Layer-averaged propagation over the user-item graph: mean of layers
/// 0..layers of repeated multiplication by l_norm.
DenseMatrix propagate_user_item(const SparseGraph& l_norm, const DenseMatrix& e0, index_t layers);

/// Repeated sparse product on the item-item graph (no layer averaging).
DenseMatrix propagate_item_item(const SparseGraph& s_norm, const DenseMatrix& e_items,
                                index_t layers);

/// User modality features from interacted items: r_norm_block * e_bar_items.
DenseMatrix aggregate_user_modality(const SparseGraph& r_norm_block,
                                    const DenseMatrix& e_bar_items);

struct FuseResult {
    DenseMatrix alpha;                 // n x |M|
    DenseMatrix e_s;                   // n x d
    std::vector<DenseMatrix> p_gate;   // per modality
    DenseMatrix e_mul;                 // n x d
};

FuseResult fuse(const ModelParams& params, const std::vector<DenseMatrix>& e_bar_m,
                const DenseMatrix& e_bar_id);

/// Inner-product scores of one user row against every item row.
std::vector<double> predict_scores(const double* e_u, const DenseMatrix& e_items);

}  // namespace mgcn
