#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mgcn/dense.hpp"

namespace mgcn {

using Edge = std::pair<index_t, index_t>;  // (user_id, item_id), dense ids

/// Deduplicated user-item interactions with dense integer ids. Every user
/// and every item appears in at least one edge.
struct InteractionDataset {
    index_t n_users = 0;
    index_t n_items = 0;
    std::vector<std::string> user_labels;  // external id per dense user id
    std::vector<std::string> item_labels;
    std::vector<Edge> edges;

    void validate() const;
};

struct LoadStats {
    index_t duplicates_dropped = 0;
    index_t lines_read = 0;
};

/// Parse `user<TAB>item` lines; '#' comments and blank lines are skipped.
/// Dense ids are assigned in first-seen order; duplicate pairs are dropped
/// and counted. An empty edge set or a malformed line is an error.
InteractionDataset load_interactions(const std::string& path, LoadStats* stats = nullptr);

void save_interactions(const std::string& path, const InteractionDataset& ds);

/// Per-user split. train/val/test partition base.edges; every user keeps at
/// least one training edge.
struct SplitDataset {
    InteractionDataset base;
    std::vector<Edge> train_edges;
    std::vector<Edge> val_edges;
    std::vector<Edge> test_edges;
    std::vector<std::vector<index_t>> train_items_by_user;  // sorted item ids

    void rebuild_user_index();
};

/// Shuffle each user's edges with the seeded RNG, then allocate
/// floor(n * ratio) edges to val and test and the remainder to train.
SplitDataset split_per_user(const InteractionDataset& ds, std::array<double, 3> ratios,
                            std::uint64_t seed);

/// Raw per-item modality features, 32-bit floats, row i = item i.
struct FeatureMatrix {
    std::string modality;
    index_t n_items = 0;
    index_t dim = 0;
    std::vector<float> values;  // row-major, n_items * dim

    float at(index_t i, index_t j) const { return values[static_cast<std::size_t>(i * dim + j)]; }
};

/// Binary format: magic "MGFM", u32 version=1, u32 n_items, u32 dim, then
/// n_items*dim little-endian f32 values row-major.
FeatureMatrix load_modality_features(const std::string& path, index_t expected_items,
                                     const std::string& modality_tag = "");
void save_modality_features(const std::string& path, const FeatureMatrix& fm);

DenseMatrix to_dense(const FeatureMatrix& fm);

struct SynthSpec {
    index_t n_users = 200;
    index_t n_items = 100;
    index_t latent_dim = 8;
    index_t edges_per_user = 10;
    double noise_std = 0.1;
    // (modality tag, feature dim) in model order
    std::vector<std::pair<std::string, index_t>> modality_dims = {{"visual", 16}, {"textual", 8}};
};

struct SynthResult {
    SplitDataset split;
    std::vector<FeatureMatrix> features;  // aligned with spec.modality_dims
};

/// Planted-preference generator: latent user/item vectors are i.i.d.
/// standard normal; each user interacts with the edges_per_user items of
/// largest inner product; modality features are fixed random linear images
/// of the item latents plus Gaussian noise. Items left without any
/// interaction are covered by swapping in their best-matching user (see
/// implementation note). Fully deterministic per seed; split 8:1:1 via
/// split_per_user with the same seed.
SynthResult generate_synthetic(const SynthSpec& spec, std::uint64_t seed);

/// Split manifest: three dense-id edge-list files plus a JSON header
/// recording seed, ratios and counts.
void save_split(const std::string& dir, const SplitDataset& split, std::uint64_t seed,
                std::array<double, 3> ratios);
SplitDataset load_split(const std::string& dir, const InteractionDataset& base);

}  // namespace mgcn
