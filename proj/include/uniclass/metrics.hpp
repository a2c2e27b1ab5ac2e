#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "uniclass/errors.hpp"
#include "uniclass/matrix.hpp"

namespace uniclass {

using Label = std::uint32_t;
using Partition = std::vector<Label>;

// Joint count matrix of two partitions over the same items, with marginals.
struct ContingencyTable {
    std::size_t k_pred = 0;
    std::size_t k_true = 0;
    std::size_t total = 0;
    std::vector<std::uint64_t> counts;      // k_pred x k_true, row-major
    std::vector<std::uint64_t> pred_sizes;  // row marginals
    std::vector<std::uint64_t> true_sizes;  // column marginals

    std::uint64_t at(std::size_t i, std::size_t j) const { return counts[i * k_true + j]; }

    static ContingencyTable from(const Partition& pred, const Partition& truth) {
        if (pred.size() != truth.size())
            throw DimensionError("ContingencyTable: partition lengths differ");
        ContingencyTable t;
        t.total = pred.size();
        for (Label l : pred) t.k_pred = std::max<std::size_t>(t.k_pred, l + 1);
        for (Label l : truth) t.k_true = std::max<std::size_t>(t.k_true, l + 1);
        t.counts.assign(t.k_pred * t.k_true, 0);
        t.pred_sizes.assign(t.k_pred, 0);
        t.true_sizes.assign(t.k_true, 0);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            t.counts[pred[i] * t.k_true + truth[i]]++;
            t.pred_sizes[pred[i]]++;
            t.true_sizes[truth[i]]++;
        }
        return t;
    }
};

enum class MeanKind { Geometric, Arithmetic, Max, Min };

namespace detail {

inline double entropy_of_marginals(const std::vector<std::uint64_t>& sizes, std::size_t total) {
    double h = 0.0;
    for (std::uint64_t s : sizes) {
        if (s == 0) continue;
        const double p = static_cast<double>(s) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h;
}

inline double mutual_information(const ContingencyTable& t) {
    double mi = 0.0;
    const double m = static_cast<double>(t.total);
    for (std::size_t i = 0; i < t.k_pred; ++i) {
        for (std::size_t j = 0; j < t.k_true; ++j) {
            const std::uint64_t n = t.at(i, j);
            if (n == 0) continue;
            const double nij = static_cast<double>(n);
            mi += (nij / m) * std::log((m * nij) /
                                       (static_cast<double>(t.pred_sizes[i]) *
                                        static_cast<double>(t.true_sizes[j])));
        }
    }
    return mi;
}

inline double combine_entropies(double hp, double ht, MeanKind kind) {
    switch (kind) {
        case MeanKind::Geometric: return std::sqrt(hp * ht);
        case MeanKind::Arithmetic: return 0.5 * (hp + ht);
        case MeanKind::Max: return std::max(hp, ht);
        case MeanKind::Min: return std::min(hp, ht);
    }
    return 0.0;
}

inline std::vector<double> log_factorial_table(std::size_t n) {
    std::vector<double> lf(n + 1, 0.0);
    for (std::size_t i = 2; i <= n; ++i) lf[i] = lf[i - 1] + std::log(static_cast<double>(i));
    return lf;
}

// Near-zero threshold for the adjusted-metric denominators. Structural zeros
// come out as accumulated rounding around 1e-15; genuinely non-degenerate
// denominators at desk scale are orders of magnitude larger.
inline constexpr double kAdjustedDenomFloor = 1e-10;

}  // namespace detail

// Exact expectation of the mutual information under the fixed-marginals
// permutation (hypergeometric) model, via log-factorials.
inline double expected_mutual_information(const ContingencyTable& t) {
    const std::size_t m = t.total;
    const std::vector<double> lf = detail::log_factorial_table(m);
    const double md = static_cast<double>(m);
    double emi = 0.0;
    for (std::size_t i = 0; i < t.k_pred; ++i) {
        const std::uint64_t a = t.pred_sizes[i];
        if (a == 0) continue;
        for (std::size_t j = 0; j < t.k_true; ++j) {
            const std::uint64_t b = t.true_sizes[j];
            if (b == 0) continue;
            const std::int64_t lo =
                std::max<std::int64_t>(1, static_cast<std::int64_t>(a + b) - static_cast<std::int64_t>(m));
            const std::int64_t hi = static_cast<std::int64_t>(std::min(a, b));
            for (std::int64_t nij = lo; nij <= hi; ++nij) {
                const double nd = static_cast<double>(nij);
                const double log_term =
                    std::log(md * nd) - std::log(static_cast<double>(a) * static_cast<double>(b));
                const double log_prob = lf[a] + lf[b] + lf[m - a] + lf[m - b] - lf[m] - lf[nij] -
                                        lf[a - nij] - lf[b - nij] - lf[m - a - b + nij];
                emi += (nd / md) * log_term * std::exp(log_prob);
            }
        }
    }
    return emi;
}

// Normalized mutual information: I / mean(H_pred, H_true). 1 if both
// entropies vanish, 0 if exactly one does.
inline double nmi(const Partition& pred, const Partition& truth,
                  MeanKind normalizer = MeanKind::Geometric) {
    const ContingencyTable t = ContingencyTable::from(pred, truth);
    if (t.total == 0) throw DimensionError("nmi: empty partitions");
    const double hp = detail::entropy_of_marginals(t.pred_sizes, t.total);
    const double ht = detail::entropy_of_marginals(t.true_sizes, t.total);
    if (hp == 0.0 && ht == 0.0) return 1.0;
    if (hp == 0.0 || ht == 0.0) return 0.0;
    return detail::mutual_information(t) / detail::combine_entropies(hp, ht, normalizer);
}

// Adjusted mutual information: (I - E[I]) / (mean(H) - E[I]); 0 when the
// denominator degenerates.
inline double ami(const Partition& pred, const Partition& truth,
                  MeanKind normalizer = MeanKind::Arithmetic) {
    const ContingencyTable t = ContingencyTable::from(pred, truth);
    if (t.total == 0) throw DimensionError("ami: empty partitions");
    const double hp = detail::entropy_of_marginals(t.pred_sizes, t.total);
    const double ht = detail::entropy_of_marginals(t.true_sizes, t.total);
    const double mi = detail::mutual_information(t);
    const double emi = expected_mutual_information(t);
    const double denom = detail::combine_entropies(hp, ht, normalizer) - emi;
    if (std::abs(denom) < detail::kAdjustedDenomFloor) return 0.0;
    return (mi - emi) / denom;
}

// Adjusted Rand index from the contingency pair counts.
inline double ari(const Partition& pred, const Partition& truth) {
    const ContingencyTable t = ContingencyTable::from(pred, truth);
    if (t.total < 2) throw DimensionError("ari: need at least 2 items");
    auto comb2 = [](std::uint64_t x) {
        return x < 2 ? 0.0 : 0.5 * static_cast<double>(x) * static_cast<double>(x - 1);
    };
    double sum_index = 0.0;
    for (std::uint64_t n : t.counts) sum_index += comb2(n);
    double sum_pred = 0.0, sum_true = 0.0;
    for (std::uint64_t a : t.pred_sizes) sum_pred += comb2(a);
    for (std::uint64_t b : t.true_sizes) sum_true += comb2(b);
    const double expected = sum_pred * sum_true / comb2(t.total);
    const double num = sum_index - expected;
    const double den = 0.5 * (sum_pred + sum_true) - expected;
    if (den == 0.0) return num == 0.0 ? 1.0 : 0.0;
    return num / den;
}

// Exact O(n^3) minimum-cost square assignment (Kuhn-Munkres with potentials).
// Returns col_of_row. Internal helper for the max-weight wrapper below.
namespace detail {
inline std::vector<std::int64_t> min_cost_assignment_square(const std::vector<double>& cost,
                                                            std::size_t n) {
    const double kInf = std::numeric_limits<double>::infinity();
    // 1-based arrays; p[j] = row assigned to column j.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::int64_t> col_of_row(n, -1);
    for (std::size_t j = 1; j <= n; ++j)
        if (p[j] != 0) col_of_row[p[j] - 1] = static_cast<std::int64_t>(j - 1);
    return col_of_row;
}
}  // namespace detail

// Maximum-weight one-to-one assignment on a rectangular weight matrix
// (rows x cols, row-major). Unmatched rows (when rows > cols) get -1.
inline std::vector<std::int64_t> max_weight_assignment(const std::vector<double>& weights,
                                                       std::size_t rows, std::size_t cols) {
    const std::size_t n = std::max(rows, cols);
    if (n == 0) return {};
    std::vector<double> cost(n * n, 0.0);  // dummies cost 0 == weight 0
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) cost[i * n + j] = -weights[i * cols + j];
    std::vector<std::int64_t> assignment = detail::min_cost_assignment_square(cost, n);
    assignment.resize(rows);
    for (std::size_t i = 0; i < rows; ++i)
        if (assignment[i] >= static_cast<std::int64_t>(cols)) assignment[i] = -1;
    return assignment;
}

struct AssignmentResult {
    double acc = 0.0;
    // mapping[p] = truth label assigned to predicted cluster p, or -1 when the
    // cluster is left unmatched (possible only when k_pred > k_true).
    std::vector<std::int64_t> mapping;
};

// Clustering accuracy under the optimal one-to-one matching of predicted
// clusters to truth classes on the contingency table.
inline AssignmentResult hungarian_acc(const Partition& pred, const Partition& truth) {
    const ContingencyTable t = ContingencyTable::from(pred, truth);
    if (t.total == 0) throw DimensionError("hungarian_acc: empty partitions");
    std::vector<double> weights(t.counts.size());
    for (std::size_t i = 0; i < t.counts.size(); ++i)
        weights[i] = static_cast<double>(t.counts[i]);
    AssignmentResult res;
    res.mapping = max_weight_assignment(weights, t.k_pred, t.k_true);
    std::uint64_t matched = 0;
    for (std::size_t i = 0; i < t.k_pred; ++i)
        if (res.mapping[i] >= 0) matched += t.at(i, static_cast<std::size_t>(res.mapping[i]));
    res.acc = static_cast<double>(matched) / static_cast<double>(t.total);
    return res;
}

// Accuracy under a many-to-one majority mapping: each predicted cluster votes
// for its most frequent truth class. Alternative protocol for over-clustering
// heads.
inline double majority_acc(const Partition& pred, const Partition& truth) {
    const ContingencyTable t = ContingencyTable::from(pred, truth);
    if (t.total == 0) throw DimensionError("majority_acc: empty partitions");
    std::uint64_t matched = 0;
    for (std::size_t i = 0; i < t.k_pred; ++i) {
        std::uint64_t best = 0;
        for (std::size_t j = 0; j < t.k_true; ++j) best = std::max(best, t.at(i, j));
        matched += best;
    }
    return static_cast<double>(matched) / static_cast<double>(t.total);
}

enum class OverclusterMode { Matching, Majority };

// One named taxonomy level: a total map from leaf class id to superclass id,
// with superclass ids dense in [0, k_super).
struct HierarchyLevel {
    std::string name;
    std::vector<Label> leaf_to_super;
    std::size_t k_super = 0;
};

struct HierarchyMap {
    std::vector<HierarchyLevel> levels;

    // TSV with header "leaf<TAB>level<TAB>super", one row per (leaf, level).
    // Levels keep first-appearance order.
    static HierarchyMap read_tsv(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("HierarchyMap: cannot open " + path.string());
        std::string line;
        if (!std::getline(in, line)) throw ConfigError("HierarchyMap: empty file");
        if (line != "leaf\tlevel\tsuper")
            throw ConfigError("HierarchyMap: expected header 'leaf\\tlevel\\tsuper'");
        HierarchyMap map;
        std::map<std::string, std::size_t> level_index;
        std::vector<std::map<Label, Label>> sparse;
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            std::istringstream ss(line);
            std::string leaf_s, level_s, super_s;
            if (!std::getline(ss, leaf_s, '\t') || !std::getline(ss, level_s, '\t') ||
                !std::getline(ss, super_s, '\t'))
                throw ConfigError("HierarchyMap: malformed row at line " + std::to_string(line_no));
            const Label leaf = static_cast<Label>(std::stoul(leaf_s));
            const Label super = static_cast<Label>(std::stoul(super_s));
            auto [it, inserted] = level_index.try_emplace(level_s, sparse.size());
            if (inserted) {
                sparse.emplace_back();
                map.levels.push_back(HierarchyLevel{level_s, {}, 0});
            }
            auto [cell, fresh] = sparse[it->second].try_emplace(leaf, super);
            if (!fresh && cell->second != super)
                throw ConfigError("HierarchyMap: conflicting entries for leaf " + leaf_s +
                                  " at level " + level_s);
        }
        for (std::size_t l = 0; l < sparse.size(); ++l) {
            HierarchyLevel& level = map.levels[l];
            Label max_leaf = 0, max_super = 0;
            for (const auto& [leaf, super] : sparse[l]) {
                max_leaf = std::max(max_leaf, leaf);
                max_super = std::max(max_super, super);
            }
            if (sparse[l].size() != static_cast<std::size_t>(max_leaf) + 1)
                throw ConfigError("HierarchyMap: level " + level.name + " does not map every leaf");
            level.leaf_to_super.resize(max_leaf + 1);
            std::vector<bool> seen(max_super + 1, false);
            for (const auto& [leaf, super] : sparse[l]) {
                level.leaf_to_super[leaf] = super;
                seen[super] = true;
            }
            for (bool s : seen)
                if (!s)
                    throw ConfigError("HierarchyMap: superclass ids not dense at level " + level.name);
            level.k_super = max_super + 1;
        }
        return map;
    }
};

struct LevelMetrics {
    std::string level;
    double acc = 0.0;
    double nmi = 0.0;
    double ami = 0.0;
    double ari = 0.0;
};

// Scores a predicted partition against ground-truth leaves rolled up to every
// level of the hierarchy. Predicted clusters are never merged: ACC maps each
// cluster to a truth leaf via the flat optimal matching and rolls that leaf
// up, so splitting a superclass into several clusters costs nothing at the
// super level. NMI/AMI/ARI compare the raw clusters to the rolled-up truth.
inline std::vector<LevelMetrics> hierarchical_eval(const Partition& pred,
                                                   const Partition& truth_leaf,
                                                   const HierarchyMap& map,
                                                   MeanKind nmi_norm = MeanKind::Geometric,
                                                   MeanKind ami_norm = MeanKind::Arithmetic) {
    if (pred.size() != truth_leaf.size())
        throw DimensionError("hierarchical_eval: partition lengths differ");
    const AssignmentResult leaf_match = hungarian_acc(pred, truth_leaf);
    std::vector<LevelMetrics> out;
    for (const HierarchyLevel& level : map.levels) {
        for (Label l : truth_leaf)
            if (l >= level.leaf_to_super.size())
                throw ConfigError("hierarchical_eval: leaf " + std::to_string(l) +
                                  " unmapped at level " + level.name);
        Partition rolled(truth_leaf.size());
        for (std::size_t i = 0; i < truth_leaf.size(); ++i)
            rolled[i] = level.leaf_to_super[truth_leaf[i]];
        LevelMetrics lm;
        lm.level = level.name;
        lm.nmi = nmi(pred, rolled, nmi_norm);
        lm.ami = ami(pred, rolled, ami_norm);
        lm.ari = ari(pred, rolled);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const std::int64_t leaf = leaf_match.mapping[pred[i]];
            if (leaf >= 0 && leaf < static_cast<std::int64_t>(level.leaf_to_super.size()) &&
                level.leaf_to_super[static_cast<std::size_t>(leaf)] == rolled[i])
                ++correct;
        }
        lm.acc = static_cast<double>(correct) / static_cast<double>(pred.size());
        out.push_back(std::move(lm));
    }
    return out;
}

// Cosine-similarity K-NN classification accuracy on L2-normalized embeddings.
// Majority vote over the K nearest training points; vote ties go to the class
// of the most similar tied neighbor. K is capped at the training-set size.
inline double knn_accuracy(const Mat& train_emb, const Partition& train_labels,
                           const Mat& test_emb, const Partition& test_labels, std::size_t k) {
    if (train_emb.rows == 0 || test_emb.rows == 0)
        throw ParameterError("knn_accuracy: empty embedding set");
    if (train_emb.rows != train_labels.size() || test_emb.rows != test_labels.size())
        throw DimensionError("knn_accuracy: labels do not match embeddings");
    if (train_emb.cols != test_emb.cols) throw DimensionError("knn_accuracy: dimension mismatch");
    if (k == 0) throw ParameterError("knn_accuracy: k must be positive");
    k = std::min(k, train_emb.rows);

    std::size_t correct = 0;
    std::vector<std::pair<double, std::size_t>> sims(train_emb.rows);
    for (std::size_t q = 0; q < test_emb.rows; ++q) {
        for (std::size_t i = 0; i < train_emb.rows; ++i) {
            double dot = 0.0;
            for (std::size_t c = 0; c < train_emb.cols; ++c) dot += test_emb(q, c) * train_emb(i, c);
            sims[i] = {dot, i};
        }
        std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(),
                          [](const auto& a, const auto& b) {
                              return a.first != b.first ? a.first > b.first : a.second < b.second;
                          });
        std::map<Label, std::size_t> votes;
        std::map<Label, double> best_sim;
        for (std::size_t i = 0; i < k; ++i) {
            const Label l = train_labels[sims[i].second];
            votes[l]++;
            auto [it, fresh] = best_sim.try_emplace(l, sims[i].first);
            if (!fresh) it->second = std::max(it->second, sims[i].first);
        }
        Label winner = 0;
        std::size_t max_votes = 0;
        double winner_sim = -std::numeric_limits<double>::infinity();
        for (const auto& [label, count] : votes) {
            if (count > max_votes || (count == max_votes && best_sim[label] > winner_sim)) {
                winner = label;
                max_votes = count;
                winner_sim = best_sim[label];
            }
        }
        if (winner == test_labels[q]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test_emb.rows);
}

// One label per line.
inline Partition read_label_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("read_label_file: cannot open " + path.string());
    Partition labels;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        labels.push_back(static_cast<Label>(std::stoul(line)));
    }
    return labels;
}

}  // namespace uniclass
