#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "uniclass/errors.hpp"
#include "uniclass/loss.hpp"
#include "uniclass/model.hpp"

namespace uniclass {

// Flat key = value run description. Unknown keys are a hard error; every key
// matches one field below. Learning rates left negative resolve to the
// reference values (4.8 / 0.3 / 0.0048 at batch 4096) linearly rescaled by
// batch_size / 4096.
struct RunConfig {
    // dataset: a CSV file, or the mixture generator when data_file is empty
    std::string data_file;
    std::uint64_t gen_seed = 0;
    bool gen_seed_auto = true;  // follow `seed` unless gen_seed was given
    std::size_t gen_classes = 4;
    std::size_t gen_dim = 16;
    std::size_t gen_points = 2000;
    double gen_separation = 10.0;
    bool gen_balanced = true;

    // model
    std::vector<std::size_t> encoder_layers = {64};
    std::size_t proj_hidden = 64;
    std::size_t proj_out = 16;
    std::vector<std::size_t> head_sizes = {4, 8, 16, 32};  // C, 2C, 4C, 8C
    HeadMode head_mode = HeadMode::Learnable;
    double leaky_slope = 0.01;

    // loss
    double tau_row = 0.1;
    double tau_col = 0.05;
    LossKind loss_kind = LossKind::UniformPrior;

    // optimizer
    double base_lr = -1.0;
    double warmup_start_lr = -1.0;
    double final_lr = -1.0;
    std::size_t warmup_epochs = 10;
    double weight_decay = 1e-6;
    double momentum = 0.9;
    double lars_eta = 0.001;
    double lars_eps = 1e-9;

    // augmentation
    std::size_t n_global = 2;
    std::size_t n_local = 0;
    double sigma_global = 0.5;
    double sigma_local = 0.5;
    double keep_fraction = 0.75;
    bool nn_enabled = false;
    std::size_t queue_capacity = 4096;
    std::size_t nn_warmup_epochs = 1;

    // run
    std::size_t batch_size = 256;
    std::size_t epochs = 200;
    std::size_t eval_every = 0;  // 0: evaluate only at the end
    std::uint64_t seed = 1;
    std::string output_dir = "run_out";
    double collapse_threshold = 0.5;  // alarm level, as a fraction of ln C
    std::size_t knn_k = 20;

    // Fills auto fields and validates. Call once before training.
    void finalize() {
        if (gen_seed_auto) gen_seed = seed;
        const double batch_scale = static_cast<double>(batch_size) / 4096.0;
        if (base_lr < 0.0) base_lr = 4.8 * batch_scale;
        if (warmup_start_lr < 0.0) warmup_start_lr = 0.3 * batch_scale;
        if (final_lr < 0.0) final_lr = 0.0048 * batch_scale;
        if (batch_size < 2) throw ConfigError("RunConfig: batch_size must be >= 2");
        if (n_global < 1) throw ConfigError("RunConfig: n_global must be >= 1");
        if (n_global + n_local < 2) throw ConfigError("RunConfig: need at least two views");
        if (!(tau_row > 0.0) || !(tau_col > 0.0))
            throw ConfigError("RunConfig: temperatures must be positive");
        if (keep_fraction <= 0.0 || keep_fraction > 1.0)
            throw ConfigError("RunConfig: keep_fraction must be in (0, 1]");
        if (sigma_global < 0.0 || sigma_local < 0.0)
            throw ConfigError("RunConfig: noise scales must be >= 0");
        if (queue_capacity == 0) throw ConfigError("RunConfig: queue_capacity must be >= 1");
        if (collapse_threshold < 0.0 || collapse_threshold > 1.0)
            throw ConfigError("RunConfig: collapse_threshold must be in [0, 1]");
        if (knn_k == 0) throw ConfigError("RunConfig: knn_k must be >= 1");
        if (head_sizes.empty()) throw ConfigError("RunConfig: head_sizes must be non-empty");
        if (epochs > 0) warmup_epochs = std::min(warmup_epochs, epochs - 1);
        if (output_dir.empty()) throw ConfigError("RunConfig: output_dir must be set");
    }

    ModelConfig model_config(std::size_t input_dim) const {
        ModelConfig m;
        m.input_dim = input_dim;
        m.encoder_layers = encoder_layers;
        m.proj_hidden = proj_hidden;
        m.proj_out = proj_out;
        m.head_sizes = head_sizes;
        m.head_mode = head_mode;
        m.leaky_slope = leaky_slope;
        return m;
    }

    OptimConfig optim_config() const {
        OptimConfig o;
        o.base_lr = base_lr;
        o.warmup_start_lr = warmup_start_lr;
        o.final_lr = final_lr;
        o.warmup_epochs = warmup_epochs;
        o.total_epochs = epochs;
        o.weight_decay = weight_decay;
        o.momentum = momentum;
        o.lars_eta = lars_eta;
        o.lars_eps = lars_eps;
        return o;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("RunConfig: key '" + key + "' expects true or false, got '" + v + "'");
}

inline std::size_t parse_size(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const unsigned long long n = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
        throw ConfigError("RunConfig: key '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
}

inline double parse_real(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("RunConfig: key '" + key + "' expects a number, got '" + v + "'");
    }
}

inline std::vector<std::size_t> parse_size_list(const std::string& v, const std::string& key) {
    std::vector<std::size_t> out;
    if (trim(v).empty()) return out;
    std::istringstream ss(v);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(parse_size(trim(cell), key));
    return out;
}

inline std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string format_size_list(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

}  // namespace detail

inline void apply_run_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "data_file") cfg.data_file = value;
    else if (key == "gen_seed") { cfg.gen_seed = parse_size(value, key); cfg.gen_seed_auto = false; }
    else if (key == "gen_classes") cfg.gen_classes = parse_size(value, key);
    else if (key == "gen_dim") cfg.gen_dim = parse_size(value, key);
    else if (key == "gen_points") cfg.gen_points = parse_size(value, key);
    else if (key == "gen_separation") cfg.gen_separation = parse_real(value, key);
    else if (key == "gen_balanced") cfg.gen_balanced = parse_bool(value, key);
    else if (key == "encoder_layers") cfg.encoder_layers = parse_size_list(value, key);
    else if (key == "proj_hidden") cfg.proj_hidden = parse_size(value, key);
    else if (key == "proj_out") cfg.proj_out = parse_size(value, key);
    else if (key == "head_sizes") cfg.head_sizes = parse_size_list(value, key);
    else if (key == "head_mode") {
        if (value == "learnable") cfg.head_mode = HeadMode::Learnable;
        else if (value == "fixed") cfg.head_mode = HeadMode::Fixed;
        else throw ConfigError("RunConfig: head_mode must be learnable or fixed");
    }
    else if (key == "leaky_slope") cfg.leaky_slope = parse_real(value, key);
    else if (key == "tau_row") cfg.tau_row = parse_real(value, key);
    else if (key == "tau_col") cfg.tau_col = parse_real(value, key);
    else if (key == "loss_kind") {
        if (value == "uniform_prior") cfg.loss_kind = LossKind::UniformPrior;
        else if (value == "naive") cfg.loss_kind = LossKind::Naive;
        else throw ConfigError("RunConfig: loss_kind must be uniform_prior or naive");
    }
    else if (key == "base_lr") cfg.base_lr = parse_real(value, key);
    else if (key == "warmup_start_lr") cfg.warmup_start_lr = parse_real(value, key);
    else if (key == "final_lr") cfg.final_lr = parse_real(value, key);
    else if (key == "warmup_epochs") cfg.warmup_epochs = parse_size(value, key);
    else if (key == "weight_decay") cfg.weight_decay = parse_real(value, key);
    else if (key == "momentum") cfg.momentum = parse_real(value, key);
    else if (key == "lars_eta") cfg.lars_eta = parse_real(value, key);
    else if (key == "lars_eps") cfg.lars_eps = parse_real(value, key);
    else if (key == "n_global") cfg.n_global = parse_size(value, key);
    else if (key == "n_local") cfg.n_local = parse_size(value, key);
    else if (key == "sigma_global") cfg.sigma_global = parse_real(value, key);
    else if (key == "sigma_local") cfg.sigma_local = parse_real(value, key);
    else if (key == "keep_fraction") cfg.keep_fraction = parse_real(value, key);
    else if (key == "nn_enabled") cfg.nn_enabled = parse_bool(value, key);
    else if (key == "queue_capacity") cfg.queue_capacity = parse_size(value, key);
    else if (key == "nn_warmup_epochs") cfg.nn_warmup_epochs = parse_size(value, key);
    else if (key == "batch_size") cfg.batch_size = parse_size(value, key);
    else if (key == "epochs") cfg.epochs = parse_size(value, key);
    else if (key == "eval_every") cfg.eval_every = parse_size(value, key);
    else if (key == "seed") cfg.seed = parse_size(value, key);
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "collapse_threshold") cfg.collapse_threshold = parse_real(value, key);
    else if (key == "knn_k") cfg.knn_k = parse_size(value, key);
    else throw ConfigError("RunConfig: unknown key '" + key + "'");
}

// Parses `key = value` lines; '#' starts a comment; blank lines are skipped.
inline RunConfig parse_run_config(std::istream& in) {
    RunConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("RunConfig: line " + std::to_string(line_no) + " is not key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        apply_run_config_key(cfg, key, value);
    }
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("RunConfig: cannot open " + path.string());
    return parse_run_config(in);
}

// Canonical serialization of the resolved config; also the config echo
// embedded in run reports.
inline std::string canonical_echo(const RunConfig& cfg) {
    using namespace detail;
    std::ostringstream out;
    out << "data_file = " << cfg.data_file << '\n'
        << "gen_seed = " << cfg.gen_seed << '\n'
        << "gen_classes = " << cfg.gen_classes << '\n'
        << "gen_dim = " << cfg.gen_dim << '\n'
        << "gen_points = " << cfg.gen_points << '\n'
        << "gen_separation = " << format_real(cfg.gen_separation) << '\n'
        << "gen_balanced = " << (cfg.gen_balanced ? "true" : "false") << '\n'
        << "encoder_layers = " << format_size_list(cfg.encoder_layers) << '\n'
        << "proj_hidden = " << cfg.proj_hidden << '\n'
        << "proj_out = " << cfg.proj_out << '\n'
        << "head_sizes = " << format_size_list(cfg.head_sizes) << '\n'
        << "head_mode = " << (cfg.head_mode == HeadMode::Fixed ? "fixed" : "learnable") << '\n'
        << "leaky_slope = " << format_real(cfg.leaky_slope) << '\n'
        << "tau_row = " << format_real(cfg.tau_row) << '\n'
        << "tau_col = " << format_real(cfg.tau_col) << '\n'
        << "loss_kind = " << (cfg.loss_kind == LossKind::Naive ? "naive" : "uniform_prior") << '\n'
        << "base_lr = " << format_real(cfg.base_lr) << '\n'
        << "warmup_start_lr = " << format_real(cfg.warmup_start_lr) << '\n'
        << "final_lr = " << format_real(cfg.final_lr) << '\n'
        << "warmup_epochs = " << cfg.warmup_epochs << '\n'
        << "weight_decay = " << format_real(cfg.weight_decay) << '\n'
        << "momentum = " << format_real(cfg.momentum) << '\n'
        << "lars_eta = " << format_real(cfg.lars_eta) << '\n'
        << "lars_eps = " << format_real(cfg.lars_eps) << '\n'
        << "n_global = " << cfg.n_global << '\n'
        << "n_local = " << cfg.n_local << '\n'
        << "sigma_global = " << format_real(cfg.sigma_global) << '\n'
        << "sigma_local = " << format_real(cfg.sigma_local) << '\n'
        << "keep_fraction = " << format_real(cfg.keep_fraction) << '\n'
        << "nn_enabled = " << (cfg.nn_enabled ? "true" : "false") << '\n'
        << "queue_capacity = " << cfg.queue_capacity << '\n'
        << "nn_warmup_epochs = " << cfg.nn_warmup_epochs << '\n'
        << "batch_size = " << cfg.batch_size << '\n'
        << "epochs = " << cfg.epochs << '\n'
        << "eval_every = " << cfg.eval_every << '\n'
        << "seed = " << cfg.seed << '\n'
        << "output_dir = " << cfg.output_dir << '\n'
        << "collapse_threshold = " << format_real(cfg.collapse_threshold) << '\n'
        << "knn_k = " << cfg.knn_k << '\n';
    return out.str();
}

}  // namespace uniclass
