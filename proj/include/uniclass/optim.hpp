#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "uniclass/errors.hpp"
#include "uniclass/matrix.hpp"

namespace uniclass {

// One optimizable tensor. Blocks flagged lars_exempt (batch-norm scale/shift)
// take plain SGD-momentum steps: no trust ratio, no weight decay.
struct ParamBlock {
    std::string name;
    Mat* value = nullptr;
    bool lars_exempt = false;
};

struct OptimConfig {
    double base_lr = 4.8;
    double warmup_start_lr = 0.3;
    double final_lr = 0.0048;
    std::size_t warmup_epochs = 10;
    std::size_t total_epochs = 800;
    double weight_decay = 1e-6;
    double momentum = 0.9;
    double lars_eta = 0.001;  // trust coefficient
    double lars_eps = 1e-9;

    void validate() const {
        if (warmup_epochs >= total_epochs)
            throw ParameterError("OptimConfig: warmup_epochs must be < total_epochs");
        if (base_lr < 0.0 || warmup_start_lr < 0.0 || final_lr < 0.0)
            throw ParameterError("OptimConfig: learning rates must be >= 0");
        if (momentum < 0.0 || momentum >= 1.0)
            throw ParameterError("OptimConfig: momentum must be in [0, 1)");
        if (lars_eta <= 0.0 || lars_eps <= 0.0)
            throw ParameterError("OptimConfig: lars_eta and lars_eps must be positive");
    }
};

// Linear ramp warmup_start_lr -> base_lr over the warmup epochs, then cosine
// decay to final_lr at total_epochs. Continuous at the junction.
inline double lr_at(const OptimConfig& cfg, double epoch_fraction) {
    if (epoch_fraction < 0.0 || epoch_fraction > static_cast<double>(cfg.total_epochs))
        throw ParameterError("lr_at: epoch_fraction out of [0, total_epochs]");
    const double warmup = static_cast<double>(cfg.warmup_epochs);
    if (epoch_fraction < warmup)
        return cfg.warmup_start_lr + (cfg.base_lr - cfg.warmup_start_lr) * (epoch_fraction / warmup);
    const double t = (epoch_fraction - warmup) / (static_cast<double>(cfg.total_epochs) - warmup);
    const double w = 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
    return w * cfg.base_lr + (1.0 - w) * cfg.final_lr;  // endpoints land exactly on base/final
}

struct OptimState {
    std::vector<Mat> momentum_buffers;  // one per block, same shapes
    std::size_t step_count = 0;
};

inline OptimState make_optim_state(std::span<const ParamBlock> params) {
    OptimState st;
    st.momentum_buffers.reserve(params.size());
    for (const ParamBlock& p : params)
        st.momentum_buffers.emplace_back(p.value->rows, p.value->cols, 0.0);
    return st;
}

// One LARS update. Per block: g' = grad + wd * w; the local rate is
// eta * |w| / (|g'| + eps) when both norms are positive, else 1; momentum
// buffers accumulate local_lr * g' and parameters move by -lr * buffer.
inline void lars_step(std::span<const ParamBlock> params, std::span<const Mat> grads,
                      OptimState& state, const OptimConfig& cfg, double lr) {
    if (params.size() != grads.size() || params.size() != state.momentum_buffers.size())
        throw DimensionError("lars_step: params/grads/state sizes differ");
    for (std::size_t b = 0; b < params.size(); ++b) {
        Mat& w = *params[b].value;
        const Mat& g = grads[b];
        Mat& m = state.momentum_buffers[b];
        if (!w.same_shape(g) || !w.same_shape(m))
            throw DimensionError("lars_step: shape mismatch in block " + params[b].name);

        const double wd = params[b].lars_exempt ? 0.0 : cfg.weight_decay;
        double local_lr = 1.0;
        if (!params[b].lars_exempt) {
            double wn2 = 0.0, gn2 = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = g.data[i] + wd * w.data[i];
                wn2 += w.data[i] * w.data[i];
                gn2 += gi * gi;
            }
            const double wn = std::sqrt(wn2), gn = std::sqrt(gn2);
            if (wn > 0.0 && gn > 0.0) local_lr = cfg.lars_eta * wn / (gn + cfg.lars_eps);
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g.data[i] + wd * w.data[i];
            m.data[i] = cfg.momentum * m.data[i] + local_lr * gi;
            w.data[i] -= lr * m.data[i];
        }
    }
    ++state.step_count;
}

}  // namespace uniclass
