#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "uniclass/errors.hpp"
#include "uniclass/tensor.hpp"

namespace uniclass {

struct LossConfig {
    double tau_row = 0.1;   // temperature of the per-sample (row) softmax
    double tau_col = 0.05;  // temperature of the per-class (column) softmax
    std::size_t batch = 0;  // N
    std::size_t classes = 0;  // C

    bool ratio_in_recommended_range() const {
        const double r = tau_row / tau_col;
        return r >= 2.0 && r <= 3.5;
    }

    // Throws ParameterError on fatal settings; the temperature-ratio check is
    // advisory only and goes to `warn` when given.
    void validate(std::ostream* warn = nullptr) const {
        if (!(tau_row > 0.0) || !(tau_col > 0.0))
            throw ParameterError("LossConfig: temperatures must be positive");
        if (batch == 0 || classes == 0)
            throw ParameterError("LossConfig: batch and classes must be positive");
        if (warn && !ratio_in_recommended_range())
            *warn << "warning: tau_row/tau_col = " << tau_row / tau_col
                  << " outside the recommended range [2.0, 3.5]\n";
    }
};

enum class ViewKind { Global, Local };

// One head's logits for every view of the same batch, all N x C.
struct ViewLogits {
    std::vector<Var> logits;
    std::vector<ViewKind> kinds;

    std::size_t count() const { return logits.size(); }
};

enum class LossKind { UniformPrior, Naive };

namespace detail {
inline void check_logits_shape(const Graph& g, Var s, const LossConfig& cfg, const char* who) {
    const Mat& v = g.value(s);
    if (v.rows != cfg.batch || v.cols != cfg.classes)
        throw DimensionError(std::string(who) + ": logits shape does not match config");
}
}  // namespace detail

// Per-class assignment weights: column softmax at tau_col, then each row
// renormalized to a distribution over classes. No stop-gradient: this stays
// differentiable w.r.t. the logits.
inline Var target_distribution(Graph& g, Var s, const LossConfig& cfg) {
    detail::check_logits_shape(g, s, cfg, "target_distribution");
    return g.l1_normalize(g.softmax(s, Axis::Cols, cfg.tau_col), Axis::Rows);
}

// log(N/C * column-normalized row softmax at tau_row).
inline Var log_prediction(Graph& g, Var s, const LossConfig& cfg) {
    detail::check_logits_shape(g, s, cfg, "log_prediction");
    const double n_over_c = static_cast<double>(cfg.batch) / static_cast<double>(cfg.classes);
    return g.log(g.scale(g.l1_normalize(g.softmax(s, Axis::Rows, cfg.tau_row), Axis::Cols), n_over_c));
}

// Uniform-prior cross-entropy of view 1's predictions against view 2's
// assignment weights. Zero at a saturated equipartition; ln C under full
// collapse.
inline Var directional_loss(Graph& g, Var s1, Var s2, const LossConfig& cfg) {
    Var weights = target_distribution(g, s2, cfg);
    Var log_pred = log_prediction(g, s1, cfg);
    return g.scale(g.sum_all(g.mul(weights, log_pred)), -1.0 / static_cast<double>(cfg.batch));
}

// Plain two-view cross-entropy over row softmaxes (tau_row on both factors).
// Collapsing every sample onto one class is optimal for this loss; it is kept
// as the degenerate baseline for comparative runs.
inline Var naive_loss(Graph& g, Var s1, Var s2, const LossConfig& cfg) {
    detail::check_logits_shape(g, s1, cfg, "naive_loss");
    detail::check_logits_shape(g, s2, cfg, "naive_loss");
    Var p2 = g.softmax(s2, Axis::Rows, cfg.tau_row);
    Var log_p1 = g.log(g.softmax(s1, Axis::Rows, cfg.tau_row));
    return g.scale(g.sum_all(g.mul(p2, log_p1)), -1.0 / static_cast<double>(cfg.batch));
}

namespace detail {
inline Var pair_loss(Graph& g, Var s1, Var s2, const LossConfig& cfg, LossKind kind) {
    Var a = kind == LossKind::UniformPrior ? directional_loss(g, s1, s2, cfg)
                                           : naive_loss(g, s1, s2, cfg);
    Var b = kind == LossKind::UniformPrior ? directional_loss(g, s2, s1, cfg)
                                           : naive_loss(g, s2, s1, cfg);
    return g.scale(g.add(a, b), 0.5);
}
}  // namespace detail

inline Var symmetric_loss(Graph& g, Var s1, Var s2, const LossConfig& cfg) {
    return detail::pair_loss(g, s1, s2, cfg, LossKind::UniformPrior);
}

// Mean of the symmetric pair loss over every unordered view pair containing at
// least one global view. Local-local pairs are skipped.
inline Var multiview_loss(Graph& g, const ViewLogits& views, const LossConfig& cfg,
                          LossKind kind = LossKind::UniformPrior) {
    if (views.count() < 2) throw ConfigError("multiview_loss: need at least two views");
    if (views.kinds.size() != views.logits.size())
        throw ConfigError("multiview_loss: one kind per view required");
    bool any_global = false;
    for (ViewKind k : views.kinds) any_global = any_global || k == ViewKind::Global;
    if (!any_global) throw ConfigError("multiview_loss: at least one global view required");
    const Mat& first = g.value(views.logits[0]);
    for (Var v : views.logits)
        if (!g.value(v).same_shape(first)) throw DimensionError("multiview_loss: mixed view shapes");

    Var total{};
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < views.count(); ++i) {
        for (std::size_t j = i + 1; j < views.count(); ++j) {
            if (views.kinds[i] != ViewKind::Global && views.kinds[j] != ViewKind::Global) continue;
            Var l = detail::pair_loss(g, views.logits[i], views.logits[j], cfg, kind);
            total = pairs == 0 ? l : g.add(total, l);
            ++pairs;
        }
    }
    return g.scale(total, 1.0 / static_cast<double>(pairs));
}

// Unweighted mean of multiview_loss over heads; all heads are trained
// simultaneously. `cfgs[h]` carries head h's class count.
inline Var multihead_loss(Graph& g, std::span<const ViewLogits> heads,
                          std::span<const LossConfig> cfgs,
                          LossKind kind = LossKind::UniformPrior) {
    if (heads.empty()) throw ConfigError("multihead_loss: need at least one head");
    if (heads.size() != cfgs.size())
        throw ConfigError("multihead_loss: one config per head required");
    Var total{};
    for (std::size_t h = 0; h < heads.size(); ++h) {
        Var l = multiview_loss(g, heads[h], cfgs[h], kind);
        total = h == 0 ? l : g.add(total, l);
    }
    return g.scale(total, 1.0 / static_cast<double>(heads.size()));
}

}  // namespace uniclass
