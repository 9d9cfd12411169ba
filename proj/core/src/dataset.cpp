#include "mgcn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mgcn/errors.hpp"
#include "mgcn/rng.hpp"

namespace mgcn {

void InteractionDataset::validate() const {
    if (n_users <= 0 || n_items <= 0 || edges.empty())
        throw DataError("InteractionDataset: empty dataset");
    if (static_cast<index_t>(user_labels.size()) != n_users ||
        static_cast<index_t>(item_labels.size()) != n_items)
        throw DataError("InteractionDataset: label count mismatch");
    std::vector<bool> user_seen(static_cast<std::size_t>(n_users), false);
    std::vector<bool> item_seen(static_cast<std::size_t>(n_items), false);
    std::set<Edge> uniq;
    for (const Edge& e : edges) {
        if (e.first < 0 || e.first >= n_users || e.second < 0 || e.second >= n_items)
            throw DataError("InteractionDataset: edge id out of range");
        if (!uniq.insert(e).second) throw DataError("InteractionDataset: duplicate edge");
        user_seen[static_cast<std::size_t>(e.first)] = true;
        item_seen[static_cast<std::size_t>(e.second)] = true;
    }
    for (bool s : user_seen)
        if (!s) throw DataError("InteractionDataset: user without edges");
    for (bool s : item_seen)
        if (!s) throw DataError("InteractionDataset: item without edges");
}

InteractionDataset load_interactions(const std::string& path, LoadStats* stats) {
    std::ifstream is(path);
    if (!is) throw DataError("load_interactions: cannot open " + path);

    InteractionDataset ds;
    std::unordered_map<std::string, index_t> user_ids, item_ids;
    std::set<Edge> seen;
    LoadStats local;

    std::string line;
    index_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        ++local.lines_read;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
            throw DataError("load_interactions: malformed line " + std::to_string(line_no) +
                            " in " + path);
        const std::string user = line.substr(0, tab);
        const std::string item = line.substr(tab + 1);
        if (item.find('\t') != std::string::npos)
            throw DataError("load_interactions: malformed line " + std::to_string(line_no) +
                            " in " + path);

        auto [uit, u_new] = user_ids.try_emplace(user, ds.n_users);
        if (u_new) {
            ds.user_labels.push_back(user);
            ++ds.n_users;
        }
        auto [iit, i_new] = item_ids.try_emplace(item, ds.n_items);
        if (i_new) {
            ds.item_labels.push_back(item);
            ++ds.n_items;
        }
        const Edge e{uit->second, iit->second};
        if (seen.insert(e).second)
            ds.edges.push_back(e);
        else
            ++local.duplicates_dropped;
    }
    if (ds.edges.empty()) throw DataError("load_interactions: no interactions in " + path);
    if (stats) *stats = local;
    ds.validate();
    return ds;
}

void save_interactions(const std::string& path, const InteractionDataset& ds) {
    std::ofstream os(path);
    if (!os) throw DataError("save_interactions: cannot open " + path);
    for (const Edge& e : ds.edges)
        os << ds.user_labels[static_cast<std::size_t>(e.first)] << '\t'
           << ds.item_labels[static_cast<std::size_t>(e.second)] << '\n';
    if (!os) throw DataError("save_interactions: write failed for " + path);
}

void SplitDataset::rebuild_user_index() {
    train_items_by_user.assign(static_cast<std::size_t>(base.n_users), {});
    for (const Edge& e : train_edges)
        train_items_by_user[static_cast<std::size_t>(e.first)].push_back(e.second);
    for (auto& items : train_items_by_user) std::sort(items.begin(), items.end());
}

SplitDataset split_per_user(const InteractionDataset& ds, std::array<double, 3> ratios,
                            std::uint64_t seed) {
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
        throw DataError("split_per_user: ratios must sum to 1");
    ds.validate();

    std::vector<std::vector<index_t>> items_by_user(static_cast<std::size_t>(ds.n_users));
    for (const Edge& e : ds.edges)
        items_by_user[static_cast<std::size_t>(e.first)].push_back(e.second);

    SplitDataset split;
    split.base = ds;
    Rng rng(seed);
    for (index_t u = 0; u < ds.n_users; ++u) {
        auto& items = items_by_user[static_cast<std::size_t>(u)];
        rng.shuffle(items);
        const index_t n = static_cast<index_t>(items.size());
        const index_t n_val = static_cast<index_t>(std::floor(static_cast<double>(n) * ratios[1]));
        const index_t n_test = static_cast<index_t>(std::floor(static_cast<double>(n) * ratios[2]));
        const index_t n_train = n - n_val - n_test;  // remainder goes to train
        for (index_t t = 0; t < n; ++t) {
            const Edge e{u, items[static_cast<std::size_t>(t)]};
            if (t < n_train)
                split.train_edges.push_back(e);
            else if (t < n_train + n_val)
                split.val_edges.push_back(e);
            else
                split.test_edges.push_back(e);
        }
    }
    split.rebuild_user_index();
    return split;
}

namespace {
constexpr char kFeatureMagic[4] = {'M', 'G', 'F', 'M'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("feature file truncated: " + path);
    return v;
}
}  // namespace

FeatureMatrix load_modality_features(const std::string& path, index_t expected_items,
                                     const std::string& modality_tag) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_modality_features: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kFeatureMagic, 4) != 0)
        throw DataError("load_modality_features: bad magic in " + path);
    const auto version = read_pod<std::uint32_t>(is, path);
    if (version != 1)
        throw DataError("load_modality_features: unsupported version " + std::to_string(version));
    FeatureMatrix fm;
    fm.modality = modality_tag;
    fm.n_items = static_cast<index_t>(read_pod<std::uint32_t>(is, path));
    fm.dim = static_cast<index_t>(read_pod<std::uint32_t>(is, path));
    if (fm.n_items != expected_items)
        throw DataError("load_modality_features: " + path + " has " + std::to_string(fm.n_items) +
                        " rows, expected " + std::to_string(expected_items));
    fm.values.resize(static_cast<std::size_t>(fm.n_items * fm.dim));
    is.read(reinterpret_cast<char*>(fm.values.data()),
            static_cast<std::streamsize>(fm.values.size() * sizeof(float)));
    if (!is) throw DataError("feature file truncated: " + path);
    for (std::size_t i = 0; i < fm.values.size(); ++i)
        if (!std::isfinite(fm.values[i]))
            throw DataError("load_modality_features: non-finite entry at flat index " +
                            std::to_string(i) + " in " + path);
    return fm;
}

void save_modality_features(const std::string& path, const FeatureMatrix& fm) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_modality_features: cannot open " + path);
    os.write(kFeatureMagic, 4);
    write_pod<std::uint32_t>(os, 1);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(fm.n_items));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(fm.dim));
    os.write(reinterpret_cast<const char*>(fm.values.data()),
             static_cast<std::streamsize>(fm.values.size() * sizeof(float)));
    if (!os) throw DataError("save_modality_features: write failed for " + path);
}

DenseMatrix to_dense(const FeatureMatrix& fm) {
    DenseMatrix m(fm.n_items, fm.dim);
    for (index_t i = 0; i < fm.n_items; ++i)
        for (index_t j = 0; j < fm.dim; ++j) m.at(i, j) = static_cast<double>(fm.at(i, j));
    return m;
}

SynthResult generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.edges_per_user < 3) throw DataError("generate_synthetic: edges_per_user must be >= 3");
    if (spec.n_items <= spec.edges_per_user)
        throw DataError("generate_synthetic: n_items must exceed edges_per_user");
    if (spec.modality_dims.empty()) throw DataError("generate_synthetic: no modalities");

    Rng rng(seed);
    const index_t U = spec.n_users, I = spec.n_items, D = spec.latent_dim;

    DenseMatrix z_user(U, D), z_item(I, D);
    for (double& v : z_user.data) v = rng.normal();
    for (double& v : z_item.data) v = rng.normal();

    // Per user: the edges_per_user highest-scoring items.
    std::vector<std::vector<index_t>> chosen(static_cast<std::size_t>(U));
    std::vector<index_t> coverage(static_cast<std::size_t>(I), 0);
    std::vector<std::pair<double, index_t>> scored(static_cast<std::size_t>(I));
    for (index_t u = 0; u < U; ++u) {
        for (index_t i = 0; i < I; ++i) {
            double s = 0.0;
            for (index_t d = 0; d < D; ++d) s += z_user.at(u, d) * z_item.at(i, d);
            scored[static_cast<std::size_t>(i)] = {s, i};
        }
        std::partial_sort(scored.begin(), scored.begin() + spec.edges_per_user, scored.end(),
                          [](const auto& a, const auto& b) {
                              return a.first != b.first ? a.first > b.first : a.second < b.second;
                          });
        auto& mine = chosen[static_cast<std::size_t>(u)];
        for (index_t t = 0; t < spec.edges_per_user; ++t) {
            mine.push_back(scored[static_cast<std::size_t>(t)].second);
            ++coverage[static_cast<std::size_t>(scored[static_cast<std::size_t>(t)].second)];
        }
    }

    // Items nobody picked would violate the dataset invariants; swap each
    // one in for its best-matching user's weakest removable edge.
    for (index_t j = 0; j < I; ++j) {
        if (coverage[static_cast<std::size_t>(j)] > 0) continue;
        std::vector<index_t> users_by_affinity(static_cast<std::size_t>(U));
        for (index_t u = 0; u < U; ++u) users_by_affinity[static_cast<std::size_t>(u)] = u;
        std::sort(users_by_affinity.begin(), users_by_affinity.end(),
                  [&](index_t a, index_t b) {
                      double sa = 0.0, sb = 0.0;
                      for (index_t d = 0; d < D; ++d) {
                          sa += z_user.at(a, d) * z_item.at(j, d);
                          sb += z_user.at(b, d) * z_item.at(j, d);
                      }
                      return sa != sb ? sa > sb : a < b;
                  });
        bool placed = false;
        for (index_t u : users_by_affinity) {
            auto& mine = chosen[static_cast<std::size_t>(u)];
            // weakest edge whose item stays covered after removal
            index_t drop_pos = -1;
            double drop_score = 0.0;
            for (std::size_t p = 0; p < mine.size(); ++p) {
                const index_t it = mine[p];
                if (coverage[static_cast<std::size_t>(it)] < 2) continue;
                double s = 0.0;
                for (index_t d = 0; d < D; ++d) s += z_user.at(u, d) * z_item.at(it, d);
                if (drop_pos < 0 || s < drop_score) {
                    drop_pos = static_cast<index_t>(p);
                    drop_score = s;
                }
            }
            if (drop_pos >= 0) {
                --coverage[static_cast<std::size_t>(mine[static_cast<std::size_t>(drop_pos)])];
                mine[static_cast<std::size_t>(drop_pos)] = j;
                ++coverage[static_cast<std::size_t>(j)];
                placed = true;
                break;
            }
        }
        if (!placed) throw DataError("generate_synthetic: cannot cover item " + std::to_string(j));
    }

    InteractionDataset ds;
    ds.n_users = U;
    ds.n_items = I;
    for (index_t u = 0; u < U; ++u) ds.user_labels.push_back("u" + std::to_string(u));
    for (index_t i = 0; i < I; ++i) ds.item_labels.push_back("i" + std::to_string(i));
    for (index_t u = 0; u < U; ++u)
        for (index_t i : chosen[static_cast<std::size_t>(u)]) ds.edges.push_back({u, i});
    ds.validate();

    // Modality features: fixed random linear map of z_item plus noise.
    SynthResult out;
    for (const auto& [tag, dm] : spec.modality_dims) {
        DenseMatrix map(D, dm);
        for (double& v : map.data) v = rng.normal() / std::sqrt(static_cast<double>(D));
        FeatureMatrix fm;
        fm.modality = tag;
        fm.n_items = I;
        fm.dim = dm;
        fm.values.resize(static_cast<std::size_t>(I * dm));
        for (index_t i = 0; i < I; ++i) {
            for (index_t j = 0; j < dm; ++j) {
                double v = 0.0;
                for (index_t d = 0; d < D; ++d) v += z_item.at(i, d) * map.at(d, j);
                v += spec.noise_std * rng.normal();
                fm.values[static_cast<std::size_t>(i * dm + j)] = static_cast<float>(v);
            }
        }
        out.features.push_back(std::move(fm));
    }

    out.split = split_per_user(ds, {0.8, 0.1, 0.1}, seed);
    return out;
}

namespace {
void save_edge_list(const std::string& path, const std::vector<Edge>& edges) {
    std::ofstream os(path);
    if (!os) throw DataError("save_split: cannot open " + path);
    for (const Edge& e : edges) os << e.first << '\t' << e.second << '\n';
}

std::vector<Edge> load_edge_list(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("load_split: cannot open " + path);
    std::vector<Edge> edges;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        index_t u, i;
        if (!(ss >> u >> i)) throw DataError("load_split: malformed line in " + path);
        edges.push_back({u, i});
    }
    return edges;
}
}  // namespace

void save_split(const std::string& dir, const SplitDataset& split, std::uint64_t seed,
                std::array<double, 3> ratios) {
    save_edge_list(dir + "/split_train.txt", split.train_edges);
    save_edge_list(dir + "/split_val.txt", split.val_edges);
    save_edge_list(dir + "/split_test.txt", split.test_edges);
    nlohmann::json header{{"seed", seed},
                          {"ratios", ratios},
                          {"n_users", split.base.n_users},
                          {"n_items", split.base.n_items},
                          {"n_train", split.train_edges.size()},
                          {"n_val", split.val_edges.size()},
                          {"n_test", split.test_edges.size()}};
    std::ofstream os(dir + "/split_header.json");
    if (!os) throw DataError("save_split: cannot open header in " + dir);
    os << header.dump(2) << '\n';
}

SplitDataset load_split(const std::string& dir, const InteractionDataset& base) {
    std::ifstream hs(dir + "/split_header.json");
    if (!hs) throw DataError("load_split: missing header in " + dir);
    nlohmann::json header = nlohmann::json::parse(hs);
    if (header.at("n_users").get<index_t>() != base.n_users ||
        header.at("n_items").get<index_t>() != base.n_items)
        throw DataError("load_split: header does not match dataset");
    SplitDataset split;
    split.base = base;
    split.train_edges = load_edge_list(dir + "/split_train.txt");
    split.val_edges = load_edge_list(dir + "/split_val.txt");
    split.test_edges = load_edge_list(dir + "/split_test.txt");
    split.rebuild_user_index();
    return split;
}

}  // namespace mgcn
