#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mgcn/dataset.hpp"
#include "mgcn/dense.hpp"
#include "mgcn/model.hpp"

namespace mgcn {

enum class EvalPhase { validation, test };

struct EvalReport {
    std::string phase;
    std::vector<index_t> cutoffs;
    std::map<index_t, double> recall;  // K -> mean recall over evaluated users
    std::map<index_t, double> ndcg;
    index_t n_users_evaluated = 0;

    struct UserRecord {
        index_t user = 0;
        std::vector<index_t> top_items;           // first max(cutoffs) ranked items
        std::map<index_t, double> recall, ndcg;  // per cutoff
    };
    std::vector<UserRecord> per_user;  // filled only when requested
};

/// All items sorted by score descending, masked ids removed, ties broken by
/// smaller item id.
std::vector<index_t> rank_items(const double* e_u, const DenseMatrix& e_items,
                                const std::set<index_t>& mask);

/// |top-K intersect relevant| / |relevant|; relevant must be non-empty.
double recall_at_k(const std::vector<index_t>& ranked, const std::set<index_t>& relevant,
                   index_t k);

/// Binary-relevance NDCG: DCG uses 1/log2(rank+1), IDCG truncates at
/// min(|relevant|, K).
double ndcg_at_k(const std::vector<index_t>& ranked, const std::set<index_t>& relevant, index_t k);

/// One forward pass, then per-user all-ranking with training items masked
/// (validation) or train+val items masked (test, unless mask_val_in_test is
/// false). Users whose phase ground truth is empty are skipped.
EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg, const Graphs& graphs,
                    const std::vector<FeatureMatrix>& features, const SplitDataset& split,
                    EvalPhase phase, const std::vector<index_t>& cutoffs,
                    bool mask_val_in_test = true, bool collect_per_user = false);

}  // namespace mgcn
