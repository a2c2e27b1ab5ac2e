#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "uniclass/errors.hpp"
#include "uniclass/matrix.hpp"
#include "uniclass/optim.hpp"
#include "uniclass/rng.hpp"
#include "uniclass/tensor.hpp"

namespace uniclass {

enum class HeadMode { Learnable, Fixed };

struct ModelConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> encoder_layers;  // hidden widths; may be empty
    std::size_t proj_hidden = 64;
    std::size_t proj_out = 16;
    std::vector<std::size_t> head_sizes;  // class count per classification head
    HeadMode head_mode = HeadMode::Learnable;
    double leaky_slope = 0.01;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    void validate() const {
        if (input_dim == 0) throw ConfigError("ModelConfig: input_dim must be positive");
        for (std::size_t w : encoder_layers)
            if (w == 0) throw ConfigError("ModelConfig: encoder layer width must be positive");
        if (proj_hidden == 0) throw ConfigError("ModelConfig: proj_hidden must be positive");
        if (proj_out < 2) throw ConfigError("ModelConfig: proj_out must be >= 2");
        if (head_sizes.empty()) throw ConfigError("ModelConfig: need at least one head");
        for (std::size_t c : head_sizes)
            if (c < 2) throw ConfigError("ModelConfig: every head needs >= 2 classes");
    }

    // Index of the head evaluation defaults to: the one with the fewest classes.
    std::size_t base_head() const {
        std::size_t best = 0;
        for (std::size_t h = 1; h < head_sizes.size(); ++h)
            if (head_sizes[h] < head_sizes[best]) best = h;
        return best;
    }
};

struct BnLayer {
    Mat scale;  // 1 x D
    Mat shift;  // 1 x D
    BatchNormState state;

    static BnLayer fresh(std::size_t dim) {
        BnLayer l;
        l.scale = Mat(1, dim, 1.0);
        l.shift = Mat(1, dim, 0.0);
        l.state = BatchNormState::fresh(dim);
        return l;
    }
};

// All weights are bias-free; batch-norm shift plays that role inside the MLPs
// and the classification heads deliberately have no additive term.
struct ModelParams {
    ModelConfig cfg;
    std::vector<Mat> encoder_weights;  // [in x out] per encoder layer
    std::vector<BnLayer> encoder_bn;
    Mat proj_hidden_weight;
    BnLayer proj_bn;
    Mat proj_out_weight;
    std::vector<Mat> head_weights;  // C_h x proj_out
};

// Deterministic uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SplitMix64 rng = make_stream(seed, streams::kModelInit);
    auto init_weight = [&rng](std::size_t fan_in, std::size_t fan_out, bool transposed) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Mat w = transposed ? Mat(fan_out, fan_in) : Mat(fan_in, fan_out);
        for (double& v : w.data) v = rng.next_uniform(-bound, bound);
        return w;
    };

    ModelParams p;
    p.cfg = cfg;
    std::size_t width = cfg.input_dim;
    for (std::size_t out : cfg.encoder_layers) {
        p.encoder_weights.push_back(init_weight(width, out, false));
        p.encoder_bn.push_back(BnLayer::fresh(out));
        width = out;
    }
    p.proj_hidden_weight = init_weight(width, cfg.proj_hidden, false);
    p.proj_bn = BnLayer::fresh(cfg.proj_hidden);
    p.proj_out_weight = init_weight(cfg.proj_hidden, cfg.proj_out, false);
    for (std::size_t c : cfg.head_sizes) p.head_weights.push_back(init_weight(cfg.proj_out, c, true));
    return p;
}

// Every parameter block in declaration order. Head blocks are listed so
// callers can filter on trainability; batch-norm affine blocks are flagged
// lars_exempt.
inline std::vector<ParamBlock> all_param_blocks(ModelParams& p) {
    std::vector<ParamBlock> blocks;
    for (std::size_t l = 0; l < p.encoder_weights.size(); ++l) {
        blocks.push_back({"encoder" + std::to_string(l) + ".weight", &p.encoder_weights[l], false});
        blocks.push_back({"encoder" + std::to_string(l) + ".bn_scale", &p.encoder_bn[l].scale, true});
        blocks.push_back({"encoder" + std::to_string(l) + ".bn_shift", &p.encoder_bn[l].shift, true});
    }
    blocks.push_back({"proj_hidden.weight", &p.proj_hidden_weight, false});
    blocks.push_back({"proj.bn_scale", &p.proj_bn.scale, true});
    blocks.push_back({"proj.bn_shift", &p.proj_bn.shift, true});
    blocks.push_back({"proj_out.weight", &p.proj_out_weight, false});
    for (std::size_t h = 0; h < p.head_weights.size(); ++h)
        blocks.push_back({"head" + std::to_string(h) + ".weight", &p.head_weights[h], false});
    return blocks;
}

// The optimizer's parameter set: everything, minus head weights when the
// classifier is fixed. Fixed heads still drive the forward pass.
inline std::vector<ParamBlock> trainable_parameters(ModelParams& p) {
    std::vector<ParamBlock> blocks = all_param_blocks(p);
    if (p.cfg.head_mode == HeadMode::Fixed) {
        std::erase_if(blocks, [](const ParamBlock& b) {
            return b.name.rfind("head", 0) == 0;
        });
    }
    return blocks;
}

// Graph leaves for one training step, aligned with a param-block list.
struct ModelBinding {
    std::vector<Var> leaves;
    std::vector<ParamBlock> blocks;
};

inline ModelBinding bind_model(Graph& g, ModelParams& p, bool with_grad) {
    ModelBinding bind;
    bind.blocks = with_grad ? trainable_parameters(p) : all_param_blocks(p);
    bind.leaves.reserve(bind.blocks.size());
    for (const ParamBlock& b : bind.blocks) bind.leaves.push_back(g.leaf(*b.value, with_grad));
    return bind;
}

struct ForwardResult {
    Var embedding;                // N x proj_out, unit-norm rows
    std::vector<Var> head_logits;  // N x C_h each
};

// Encoder MLP (linear -> BN -> leaky ReLU per layer), projection MLP (one
// hidden layer, then linear), L2 row normalization, then one bias-free linear
// head per class count. Train mode updates BN running statistics in `p`.
inline ForwardResult forward(Graph& g, ModelParams& p, const ModelBinding& bind, const Mat& batch,
                             RunMode mode) {
    if (batch.cols != p.cfg.input_dim) throw DimensionError("forward: input dimension mismatch");
    if (mode == RunMode::Train && batch.rows < 2)
        throw BatchTooSmallError("forward: train mode needs a batch of at least 2");

    auto leaf_of = [&](const Mat* tensor) -> Var {
        for (std::size_t i = 0; i < bind.blocks.size(); ++i)
            if (bind.blocks[i].value == tensor) return bind.leaves[i];
        return g.constant(*tensor);  // untracked block (fixed head)
    };

    Var x = g.constant(batch);
    for (std::size_t l = 0; l < p.encoder_weights.size(); ++l) {
        x = g.matmul(x, leaf_of(&p.encoder_weights[l]));
        x = g.batch_norm(x, leaf_of(&p.encoder_bn[l].scale), leaf_of(&p.encoder_bn[l].shift),
                         p.encoder_bn[l].state, mode, p.cfg.bn_eps, p.cfg.bn_momentum);
        x = g.leaky_relu(x, p.cfg.leaky_slope);
    }
    x = g.matmul(x, leaf_of(&p.proj_hidden_weight));
    x = g.batch_norm(x, leaf_of(&p.proj_bn.scale), leaf_of(&p.proj_bn.shift), p.proj_bn.state, mode,
                     p.cfg.bn_eps, p.cfg.bn_momentum);
    x = g.leaky_relu(x, p.cfg.leaky_slope);
    x = g.matmul(x, leaf_of(&p.proj_out_weight));

    ForwardResult out;
    out.embedding = g.l2_normalize_rows(x);
    for (Mat& head : p.head_weights)
        out.head_logits.push_back(g.matmul_nt(out.embedding, leaf_of(&head)));
    return out;
}

// Logits for an already-computed embedding (used when a view's embedding is
// replaced by its queue nearest neighbor).
inline std::vector<Var> head_logits_of(Graph& g, ModelParams& p, const ModelBinding& bind,
                                       Var embedding) {
    auto leaf_of = [&](const Mat* tensor) -> Var {
        for (std::size_t i = 0; i < bind.blocks.size(); ++i)
            if (bind.blocks[i].value == tensor) return bind.leaves[i];
        return g.constant(*tensor);
    };
    std::vector<Var> logits;
    for (Mat& head : p.head_weights) logits.push_back(g.matmul_nt(embedding, leaf_of(&head)));
    return logits;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "SCCK", u32 version, config echo, then every f64
// array in declaration order. Little-endian throughout.
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace detail {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_f64(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_mat(std::ostream& out, const Mat& m) {
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

inline std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
inline std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
inline double read_f64(std::istream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
inline void read_mat(std::istream& in, Mat& m) {
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("save_checkpoint: cannot open " + path.string());
    out.write("SCCK", 4);
    detail::write_u32(out, detail::kCheckpointVersion);
    detail::write_u64(out, p.cfg.input_dim);
    detail::write_u64(out, p.cfg.encoder_layers.size());
    for (std::size_t w : p.cfg.encoder_layers) detail::write_u64(out, w);
    detail::write_u64(out, p.cfg.proj_hidden);
    detail::write_u64(out, p.cfg.proj_out);
    detail::write_u64(out, p.cfg.head_sizes.size());
    for (std::size_t c : p.cfg.head_sizes) detail::write_u64(out, c);
    detail::write_u32(out, p.cfg.head_mode == HeadMode::Fixed ? 1u : 0u);
    detail::write_f64(out, p.cfg.leaky_slope);
    detail::write_f64(out, p.cfg.bn_eps);
    detail::write_f64(out, p.cfg.bn_momentum);

    auto write_bn = [&out](const BnLayer& bn) {
        detail::write_mat(out, bn.scale);
        detail::write_mat(out, bn.shift);
        detail::write_mat(out, bn.state.running_mean);
        detail::write_mat(out, bn.state.running_var);
    };
    for (std::size_t l = 0; l < p.encoder_weights.size(); ++l) {
        detail::write_mat(out, p.encoder_weights[l]);
        write_bn(p.encoder_bn[l]);
    }
    detail::write_mat(out, p.proj_hidden_weight);
    write_bn(p.proj_bn);
    detail::write_mat(out, p.proj_out_weight);
    for (const Mat& h : p.head_weights) detail::write_mat(out, h);
    if (!out) throw ConfigError("save_checkpoint: write failed for " + path.string());
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("load_checkpoint: cannot open " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (std::memcmp(magic, "SCCK", 4) != 0)
        throw ConfigError("load_checkpoint: bad magic in " + path.string());
    if (detail::read_u32(in) != detail::kCheckpointVersion)
        throw ConfigError("load_checkpoint: unsupported format version");

    ModelConfig cfg;
    cfg.input_dim = detail::read_u64(in);
    cfg.encoder_layers.resize(detail::read_u64(in));
    for (std::size_t& w : cfg.encoder_layers) w = detail::read_u64(in);
    cfg.proj_hidden = detail::read_u64(in);
    cfg.proj_out = detail::read_u64(in);
    cfg.head_sizes.resize(detail::read_u64(in));
    for (std::size_t& c : cfg.head_sizes) c = detail::read_u64(in);
    cfg.head_mode = detail::read_u32(in) == 1u ? HeadMode::Fixed : HeadMode::Learnable;
    cfg.leaky_slope = detail::read_f64(in);
    cfg.bn_eps = detail::read_f64(in);
    cfg.bn_momentum = detail::read_f64(in);
    if (!in) throw ConfigError("load_checkpoint: truncated header in " + path.string());
    cfg.validate();

    ModelParams p;
    p.cfg = cfg;
    auto read_bn = [&in](std::size_t dim) {
        BnLayer bn = BnLayer::fresh(dim);
        detail::read_mat(in, bn.scale);
        detail::read_mat(in, bn.shift);
        detail::read_mat(in, bn.state.running_mean);
        detail::read_mat(in, bn.state.running_var);
        return bn;
    };
    std::size_t width = cfg.input_dim;
    for (std::size_t out_w : cfg.encoder_layers) {
        Mat w(width, out_w);
        detail::read_mat(in, w);
        p.encoder_weights.push_back(std::move(w));
        p.encoder_bn.push_back(read_bn(out_w));
        width = out_w;
    }
    p.proj_hidden_weight = Mat(width, cfg.proj_hidden);
    detail::read_mat(in, p.proj_hidden_weight);
    p.proj_bn = read_bn(cfg.proj_hidden);
    p.proj_out_weight = Mat(cfg.proj_hidden, cfg.proj_out);
    detail::read_mat(in, p.proj_out_weight);
    for (std::size_t c : cfg.head_sizes) {
        Mat h(c, cfg.proj_out);
        detail::read_mat(in, h);
        p.head_weights.push_back(std::move(h));
    }
    if (!in) throw ConfigError("load_checkpoint: truncated arrays in " + path.string());
    return p;
}

}  // namespace uniclass
