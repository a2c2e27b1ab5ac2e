#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "uniclass/data.hpp"
#include "uniclass/errors.hpp"
#include "uniclass/loss.hpp"
#include "uniclass/metrics.hpp"
#include "uniclass/model.hpp"
#include "uniclass/optim.hpp"
#include "uniclass/rng.hpp"
#include "uniclass/run_config.hpp"
#include "uniclass/tensor.hpp"

namespace uniclass {

// Entropy of the batch-averaged class distribution of one head: ln C when the
// head spreads mass evenly, 0 when every sample lands on one class.
class CollapseMonitor {
public:
    void observe(const Mat& logits, double tau_row) {
        if (mean_dist_.empty()) mean_dist_.assign(logits.cols, 0.0);
        if (mean_dist_.size() != logits.cols)
            throw DimensionError("CollapseMonitor: class count changed");
        std::vector<double> row(logits.cols);
        for (std::size_t r = 0; r < logits.rows; ++r) {
            double mx = logits(r, 0);
            for (std::size_t c = 1; c < logits.cols; ++c) mx = std::max(mx, logits(r, c));
            double sum = 0.0;
            for (std::size_t c = 0; c < logits.cols; ++c) {
                row[c] = std::exp((logits(r, c) - mx) / tau_row);
                sum += row[c];
            }
            for (std::size_t c = 0; c < logits.cols; ++c) mean_dist_[c] += row[c] / sum;
            ++count_;
        }
    }

    // Entropy in nats of the accumulated mean distribution.
    double entropy() const {
        if (count_ == 0) throw ParameterError("CollapseMonitor: nothing observed");
        double h = 0.0;
        for (double s : mean_dist_) {
            const double p = s / static_cast<double>(count_);
            if (p > 0.0) h -= p * std::log(p);
        }
        return h;
    }

    void reset() {
        mean_dist_.clear();
        count_ = 0;
    }

private:
    std::vector<double> mean_dist_;
    std::size_t count_ = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 0-based index of the completed epoch
    double loss = 0.0;      // mean over the epoch's batches
    double lr = 0.0;        // rate used by the epoch's last step
    std::vector<double> head_entropy;
    double queue_fill = 0.0;
    // Any head's marginal entropy below collapse_threshold * ln C_h.
    bool collapse_alarm = false;
};

struct HeadEval {
    std::size_t head = 0;
    std::size_t classes = 0;
    double acc = 0.0;
    double nmi = 0.0;
    double ami = 0.0;
    double ari = 0.0;
    std::vector<LevelMetrics> levels;
};

struct EvalRecord {
    std::size_t epochs_completed = 0;
    double knn_acc = 0.0;
    std::vector<HeadEval> heads;
};

struct RunReport {
    std::string config_echo;
    std::vector<EpochRecord> epochs;
    std::vector<EvalRecord> evals;
    // Printed to the console only. Deliberately excluded from the serialized
    // report so identical runs produce byte-identical files.
    double wall_seconds = 0.0;

    const EvalRecord& final_eval() const {
        if (evals.empty()) throw ParameterError("RunReport: no evaluation recorded");
        return evals.back();
    }
};

struct EvalOptions {
    std::size_t knn_k = 20;
    OverclusterMode overcluster = OverclusterMode::Matching;
    MeanKind nmi_norm = MeanKind::Geometric;
    MeanKind ami_norm = MeanKind::Arithmetic;
    const HierarchyMap* hierarchy = nullptr;
};

inline std::string render_report_json(const RunReport& report);
inline void write_epoch_csv(const RunReport& report, std::ostream& out);

// Eval-mode forward over the whole dataset: argmax class per head scored
// against the truth, plus a cosine K-NN probe on the embeddings over an
// even/odd split.
inline EvalRecord evaluate(ModelParams& params, const Dataset& data, const EvalOptions& opts,
                           std::size_t epochs_completed = 0) {
    if (data.dim() != params.cfg.input_dim)
        throw DimensionError("evaluate: dataset dimension does not match model");
    Graph g;
    ModelBinding bind = bind_model(g, params, false);
    ForwardResult out = forward(g, params, bind, data.points, RunMode::Eval);

    EvalRecord rec;
    rec.epochs_completed = epochs_completed;
    for (std::size_t h = 0; h < out.head_logits.size(); ++h) {
        const Mat& logits = g.value(out.head_logits[h]);
        Partition pred(logits.rows);
        for (std::size_t r = 0; r < logits.rows; ++r) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < logits.cols; ++c)
                if (logits(r, c) > logits(r, best)) best = c;
            pred[r] = static_cast<Label>(best);
        }
        HeadEval he;
        he.head = h;
        he.classes = params.cfg.head_sizes[h];
        he.acc = opts.overcluster == OverclusterMode::Matching
                     ? hungarian_acc(pred, data.true_labels).acc
                     : majority_acc(pred, data.true_labels);
        he.nmi = nmi(pred, data.true_labels, opts.nmi_norm);
        he.ami = ami(pred, data.true_labels, opts.ami_norm);
        he.ari = ari(pred, data.true_labels);
        if (opts.hierarchy)
            he.levels = hierarchical_eval(pred, data.true_labels, *opts.hierarchy, opts.nmi_norm,
                                          opts.ami_norm);
        rec.heads.push_back(std::move(he));
    }

    // Stratified held-out split for the probe: within each class, occurrences
    // alternate between the reference and query sides, so both sides carry
    // every class regardless of how the dataset orders its labels.
    const Mat& emb = g.value(out.embedding);
    std::vector<std::size_t> train_idx, test_idx;
    std::vector<std::size_t> seen_per_class;
    for (std::size_t i = 0; i < data.count(); ++i) {
        const Label l = data.true_labels[i];
        if (l >= seen_per_class.size()) seen_per_class.resize(l + 1, 0);
        (seen_per_class[l]++ % 2 == 0 ? train_idx : test_idx).push_back(i);
    }
    if (train_idx.empty() || test_idx.empty()) {  // degenerate: probe the set against itself
        rec.knn_acc = knn_accuracy(emb, data.true_labels, emb, data.true_labels, opts.knn_k);
        return rec;
    }
    Mat train_emb(train_idx.size(), emb.cols), test_emb(test_idx.size(), emb.cols);
    Partition train_labels(train_idx.size()), test_labels(test_idx.size());
    for (std::size_t t = 0; t < train_idx.size(); ++t) {
        for (std::size_t c = 0; c < emb.cols; ++c) train_emb(t, c) = emb(train_idx[t], c);
        train_labels[t] = data.true_labels[train_idx[t]];
    }
    for (std::size_t t = 0; t < test_idx.size(); ++t) {
        for (std::size_t c = 0; c < emb.cols; ++c) test_emb(t, c) = emb(test_idx[t], c);
        test_labels[t] = data.true_labels[test_idx[t]];
    }
    rec.knn_acc = knn_accuracy(train_emb, train_labels, test_emb, test_labels, opts.knn_k);
    return rec;
}

namespace detail {

inline std::string logits_stats_dump(Graph& g, const std::vector<std::vector<Var>>& per_view_head_logits) {
    std::ostringstream out;
    for (std::size_t v = 0; v < per_view_head_logits.size(); ++v) {
        for (std::size_t h = 0; h < per_view_head_logits[v].size(); ++h) {
            const Mat& m = g.value(per_view_head_logits[v][h]);
            double mn = std::numeric_limits<double>::infinity();
            double mx = -std::numeric_limits<double>::infinity();
            double mean = 0.0;
            bool finite = true;
            for (double x : m.data) {
                mn = std::min(mn, x);
                mx = std::max(mx, x);
                mean += x;
                finite = finite && std::isfinite(x);
            }
            mean /= static_cast<double>(m.size());
            out << "  view " << v << " head " << h << ": min=" << mn << " max=" << mx
                << " mean=" << mean << (finite ? "" : " NON-FINITE") << '\n';
        }
    }
    return out.str();
}

}  // namespace detail

// Full training loop: seeded shuffling, multi-view augmentation, optional
// nearest-neighbor replacement of the designated target global view, the
// multi-head multi-view loss, LARS updates on the warmup+cosine schedule,
// per-epoch collapse monitoring, and periodic evaluation. Identical configs
// produce bitwise-identical reports on one platform.
inline RunReport train(RunConfig cfg, const Dataset* preloaded = nullptr) {
    const auto t_start = std::chrono::steady_clock::now();
    cfg.finalize();
    LossConfig tau_probe{cfg.tau_row, cfg.tau_col, 2, 2};
    if (!tau_probe.ratio_in_recommended_range())
        std::cerr << "warning: tau_row/tau_col = " << cfg.tau_row / cfg.tau_col
                  << " outside the recommended range [2.0, 3.5]\n";

    Dataset ds;
    if (preloaded) {
        ds = *preloaded;
    } else if (!cfg.data_file.empty()) {
        ds = read_csv(cfg.data_file);
    } else {
        ds = generate_mixture(cfg.gen_seed, cfg.gen_classes, cfg.gen_dim, cfg.gen_points,
                              cfg.gen_separation, cfg.gen_balanced);
    }
    if (ds.count() < 2) throw ConfigError("train: dataset needs at least 2 points");

    const ModelConfig mcfg = cfg.model_config(ds.dim());
    mcfg.validate();
    ModelParams params = init_model(mcfg, cfg.seed);
    const OptimConfig ocfg = cfg.optim_config();
    if (cfg.epochs > 0) ocfg.validate();

    std::vector<ParamBlock> blocks = trainable_parameters(params);
    OptimState ostate = make_optim_state(blocks);
    NNQueue queue(cfg.queue_capacity, cfg.proj_out);

    RunReport report;
    report.config_echo = canonical_echo(cfg);

    const std::size_t n_heads = cfg.head_sizes.size();
    const std::size_t n_views = cfg.n_global + cfg.n_local;
    const std::size_t nn_target_view = cfg.n_global >= 2 ? 1 : 0;
    std::vector<CollapseMonitor> monitors(n_heads);
    const AugmentParams aug{cfg.sigma_global, cfg.sigma_local, cfg.keep_fraction};

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        SplitMix64 shuffle_rng = make_stream(cfg.seed, streams::kShuffle, epoch);
        SplitMix64 aug_rng = make_stream(cfg.seed, streams::kAugment, epoch);
        std::vector<std::size_t> order(ds.count());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i-- > 1;)
            std::swap(order[i], order[shuffle_rng.next_below(i + 1)]);

        const std::size_t num_batches = (ds.count() + cfg.batch_size - 1) / cfg.batch_size;
        double epoch_loss = 0.0;
        std::size_t batches_done = 0;
        double last_lr = 0.0;
        for (CollapseMonitor& m : monitors) m.reset();

        for (std::size_t b = 0; b < num_batches; ++b) {
            const std::size_t begin = b * cfg.batch_size;
            const std::size_t end = std::min(ds.count(), begin + cfg.batch_size);
            const std::size_t n = end - begin;
            if (n < 2) continue;  // a 1-sample tail cannot feed train-mode BN

            Mat raw(n, ds.dim());
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < ds.dim(); ++c)
                    raw(i, c) = ds.points(order[begin + i], c);

            std::vector<Mat> views;
            views.reserve(n_views);
            for (std::size_t v = 0; v < n_views; ++v) {
                const AugmentKind kind = v < cfg.n_global ? AugmentKind::Global : AugmentKind::Local;
                Mat view(n, ds.dim());
                for (std::size_t i = 0; i < n; ++i) {
                    const std::vector<double> a =
                        augment(std::span<const double>(&raw.data[i * ds.dim()], ds.dim()), kind,
                                aug, aug_rng);
                    for (std::size_t c = 0; c < ds.dim(); ++c) view(i, c) = a[c];
                }
                views.push_back(std::move(view));
            }

            Graph g;
            ModelBinding bind = bind_model(g, params, true);
            std::vector<ForwardResult> fwd;
            fwd.reserve(n_views);
            std::vector<std::vector<Var>> view_logits;
            Var loss{};
            double loss_value = 0.0;
            const auto abort_with_dump = [&](const char* kind, const std::string& why) {
                throw NanAbortError("train: " + std::string(kind) + " at epoch " +
                                    std::to_string(epoch) + " batch " + std::to_string(b) + " (" +
                                    why + "); logits statistics:\n" +
                                    detail::logits_stats_dump(g, view_logits));
            };
            try {
                for (const Mat& view : views) {
                    fwd.push_back(forward(g, params, bind, view, RunMode::Train));
                    view_logits.push_back(fwd.back().head_logits);
                }

                const bool nn_active =
                    cfg.nn_enabled && epoch >= cfg.nn_warmup_epochs && !queue.empty();
                if (nn_active) {
                    const Mat& emb = g.value(fwd[nn_target_view].embedding);
                    Mat replaced(emb.rows, emb.cols);
                    for (std::size_t i = 0; i < emb.rows; ++i) {
                        const std::vector<double> nn = queue.nearest(
                            std::span<const double>(&emb.data[i * emb.cols], emb.cols));
                        for (std::size_t c = 0; c < emb.cols; ++c) replaced(i, c) = nn[c];
                    }
                    // The queue element is a stored constant; gradients reach
                    // the heads but not the replaced view's encoder pass.
                    view_logits[nn_target_view] =
                        head_logits_of(g, params, bind, g.constant(replaced));
                }
                if (cfg.nn_enabled) {
                    for (std::size_t v = 0; v < cfg.n_global; ++v) {
                        const Mat& emb = g.value(fwd[v].embedding);
                        for (std::size_t i = 0; i < emb.rows; ++i)
                            queue.push(std::span<const double>(&emb.data[i * emb.cols], emb.cols));
                    }
                }

                std::vector<ViewLogits> heads(n_heads);
                std::vector<LossConfig> head_cfgs(n_heads);
                for (std::size_t h = 0; h < n_heads; ++h) {
                    for (std::size_t v = 0; v < n_views; ++v) {
                        heads[h].logits.push_back(view_logits[v][h]);
                        heads[h].kinds.push_back(v < cfg.n_global ? ViewKind::Global
                                                                  : ViewKind::Local);
                    }
                    head_cfgs[h] = LossConfig{cfg.tau_row, cfg.tau_col, n, cfg.head_sizes[h]};
                }
                loss = multihead_loss(g, heads, head_cfgs, cfg.loss_kind);
                loss_value = g.value(loss)(0, 0);
            } catch (const DomainError& e) {
                abort_with_dump("numeric failure", e.what());
            } catch (const DegenerateSliceError& e) {
                abort_with_dump("degenerate slice", e.what());
            } catch (const DegenerateRowError& e) {
                abort_with_dump("degenerate row", e.what());
            } catch (const ParameterError& e) {
                abort_with_dump("numeric failure", e.what());
            }
            if (!std::isfinite(loss_value))
                abort_with_dump("non-finite loss", "loss value is not finite");
            epoch_loss += loss_value;
            ++batches_done;
            for (std::size_t h = 0; h < n_heads; ++h)
                monitors[h].observe(g.value(fwd[0].head_logits[h]), cfg.tau_row);

            g.backward(loss);
            std::vector<Mat> grads;
            grads.reserve(bind.leaves.size());
            for (Var leaf : bind.leaves) grads.push_back(g.grad(leaf));
            const double lr = lr_at(
                ocfg, static_cast<double>(epoch) +
                          static_cast<double>(b) / static_cast<double>(num_batches));
            lars_step(blocks, grads, ostate, ocfg, lr);
            last_lr = lr;
        }

        if (batches_done == 0) throw ConfigError("train: no usable batches (dataset too small)");
        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = epoch_loss / static_cast<double>(batches_done);
        rec.lr = last_lr;
        for (std::size_t h = 0; h < n_heads; ++h) {
            const double entropy = monitors[h].entropy();
            rec.head_entropy.push_back(entropy);
            if (entropy < cfg.collapse_threshold * std::log(static_cast<double>(cfg.head_sizes[h])))
                rec.collapse_alarm = true;
        }
        rec.queue_fill = cfg.nn_enabled
                             ? static_cast<double>(queue.size()) / static_cast<double>(queue.capacity())
                             : 0.0;
        report.epochs.push_back(std::move(rec));

        if (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 && epoch + 1 < cfg.epochs) {
            EvalOptions opts;
            opts.knn_k = cfg.knn_k;
            report.evals.push_back(evaluate(params, ds, opts, epoch + 1));
        }
    }

    EvalOptions opts;
    opts.knn_k = cfg.knn_k;
    report.evals.push_back(evaluate(params, ds, opts, cfg.epochs));

    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    save_checkpoint(params, fs::path(cfg.output_dir) / "checkpoint.scck");
    {
        std::ofstream out(fs::path(cfg.output_dir) / "report.json", std::ios::binary);
        out << render_report_json(report);
    }
    {
        std::ofstream out(fs::path(cfg.output_dir) / "epochs.csv", std::ios::binary);
        write_epoch_csv(report, out);
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json report_to_json(const RunReport& report) {
    nlohmann::ordered_json j;
    j["config"] = report.config_echo;
    j["epochs"] = nlohmann::ordered_json::array();
    for (const EpochRecord& e : report.epochs) {
        nlohmann::ordered_json je;
        je["epoch"] = e.epoch;
        je["loss"] = e.loss;
        je["lr"] = e.lr;
        je["entropy"] = e.head_entropy;
        je["queue_fill"] = e.queue_fill;
        je["collapse_alarm"] = e.collapse_alarm;
        j["epochs"].push_back(std::move(je));
    }
    j["evals"] = nlohmann::ordered_json::array();
    for (const EvalRecord& ev : report.evals) {
        nlohmann::ordered_json je;
        je["epochs_completed"] = ev.epochs_completed;
        je["knn_acc"] = ev.knn_acc;
        je["heads"] = nlohmann::ordered_json::array();
        for (const HeadEval& h : ev.heads) {
            nlohmann::ordered_json jh;
            jh["head"] = h.head;
            jh["classes"] = h.classes;
            jh["acc"] = h.acc;
            jh["nmi"] = h.nmi;
            jh["ami"] = h.ami;
            jh["ari"] = h.ari;
            jh["levels"] = nlohmann::ordered_json::array();
            for (const LevelMetrics& l : h.levels) {
                nlohmann::ordered_json jl;
                jl["level"] = l.level;
                jl["acc"] = l.acc;
                jl["nmi"] = l.nmi;
                jl["ami"] = l.ami;
                jl["ari"] = l.ari;
                jh["levels"].push_back(std::move(jl));
            }
            je["heads"].push_back(std::move(jh));
        }
        j["evals"].push_back(std::move(je));
    }
    return j;
}

inline RunReport report_from_json(const nlohmann::ordered_json& j) {
    RunReport report;
    report.config_echo = j.at("config").get<std::string>();
    for (const auto& je : j.at("epochs")) {
        EpochRecord e;
        e.epoch = je.at("epoch").get<std::size_t>();
        e.loss = je.at("loss").get<double>();
        e.lr = je.at("lr").get<double>();
        e.head_entropy = je.at("entropy").get<std::vector<double>>();
        e.queue_fill = je.at("queue_fill").get<double>();
        e.collapse_alarm = je.at("collapse_alarm").get<bool>();
        report.epochs.push_back(std::move(e));
    }
    for (const auto& je : j.at("evals")) {
        EvalRecord ev;
        ev.epochs_completed = je.at("epochs_completed").get<std::size_t>();
        ev.knn_acc = je.at("knn_acc").get<double>();
        for (const auto& jh : je.at("heads")) {
            HeadEval h;
            h.head = jh.at("head").get<std::size_t>();
            h.classes = jh.at("classes").get<std::size_t>();
            h.acc = jh.at("acc").get<double>();
            h.nmi = jh.at("nmi").get<double>();
            h.ami = jh.at("ami").get<double>();
            h.ari = jh.at("ari").get<double>();
            for (const auto& jl : jh.at("levels")) {
                LevelMetrics l;
                l.level = jl.at("level").get<std::string>();
                l.acc = jl.at("acc").get<double>();
                l.nmi = jl.at("nmi").get<double>();
                l.ami = jl.at("ami").get<double>();
                l.ari = jl.at("ari").get<double>();
                h.levels.push_back(std::move(l));
            }
            ev.heads.push_back(std::move(h));
        }
        report.evals.push_back(std::move(ev));
    }
    return report;
}

inline std::string render_report_json(const RunReport& report) {
    return report_to_json(report).dump(2) + "\n";
}

// "epoch,loss,lr,entropy_h0,...,acc_h0,..." with accuracy cells filled on the
// rows whose epoch ended with an evaluation.
inline void write_epoch_csv(const RunReport& report, std::ostream& out) {
    std::size_t n_heads = 0;
    if (!report.epochs.empty()) n_heads = report.epochs.front().head_entropy.size();
    else if (!report.evals.empty()) n_heads = report.evals.front().heads.size();
    out << "epoch,loss,lr";
    for (std::size_t h = 0; h < n_heads; ++h) out << ",entropy_h" << h;
    for (std::size_t h = 0; h < n_heads; ++h) out << ",acc_h" << h;
    out << '\n';
    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const EpochRecord& e : report.epochs) {
        out << e.epoch << ',' << fmt(e.loss) << ',' << fmt(e.lr);
        for (double h : e.head_entropy) out << ',' << fmt(h);
        const EvalRecord* eval = nullptr;
        for (const EvalRecord& ev : report.evals)
            if (ev.epochs_completed == e.epoch + 1) eval = &ev;
        for (std::size_t h = 0; h < n_heads; ++h) {
            out << ',';
            if (eval) out << fmt(eval->heads[h].acc);
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Full-pipeline gradient verification
// ---------------------------------------------------------------------------

struct GradCheckBlock {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradCheckResult {
    double tolerance = 0.0;
    std::vector<GradCheckBlock> blocks;
    bool pass = false;
};

inline ModelConfig toy_grad_check_config() {
    ModelConfig cfg;
    cfg.input_dim = 5;
    cfg.encoder_layers = {6};
    cfg.proj_hidden = 7;
    cfg.proj_out = 4;
    cfg.head_sizes = {3, 5};
    return cfg;
}

// Analytic gradients of the full two-view multi-head loss (train-mode BN)
// against central finite differences, reported per parameter block.
// `corrupt_backward` is a negative-control hook for the test suite.
inline GradCheckResult grad_check(const ModelConfig& mcfg, std::uint64_t seed, double tolerance,
                                  LossKind kind = LossKind::UniformPrior,
                                  bool corrupt_backward = false) {
    mcfg.validate();
    const std::size_t batch = 8;
    SplitMix64 rng = make_stream(seed, streams::kEval);
    Mat view1(batch, mcfg.input_dim), view2(batch, mcfg.input_dim);
    for (double& v : view1.data) v = rng.next_uniform(-1.0, 1.0);
    for (double& v : view2.data) v = rng.next_uniform(-1.0, 1.0);

    auto loss_of = [&](ModelParams p) {
        Graph g;
        ModelBinding bind = bind_model(g, p, false);
        ForwardResult f1 = forward(g, p, bind, view1, RunMode::Train);
        ForwardResult f2 = forward(g, p, bind, view2, RunMode::Train);
        std::vector<ViewLogits> heads(p.cfg.head_sizes.size());
        std::vector<LossConfig> cfgs(p.cfg.head_sizes.size());
        for (std::size_t h = 0; h < heads.size(); ++h) {
            heads[h].logits = {f1.head_logits[h], f2.head_logits[h]};
            heads[h].kinds = {ViewKind::Global, ViewKind::Global};
            cfgs[h] = LossConfig{0.1, 0.05, batch, p.cfg.head_sizes[h]};
        }
        return g.value(multihead_loss(g, heads, cfgs, kind))(0, 0);
    };

    ModelParams params = init_model(mcfg, seed);
    Graph g;
    ModelBinding bind = bind_model(g, params, true);
    {
        ForwardResult f1 = forward(g, params, bind, view1, RunMode::Train);
        ForwardResult f2 = forward(g, params, bind, view2, RunMode::Train);
        std::vector<ViewLogits> heads(mcfg.head_sizes.size());
        std::vector<LossConfig> cfgs(mcfg.head_sizes.size());
        for (std::size_t h = 0; h < heads.size(); ++h) {
            heads[h].logits = {f1.head_logits[h], f2.head_logits[h]};
            heads[h].kinds = {ViewKind::Global, ViewKind::Global};
            cfgs[h] = LossConfig{0.1, 0.05, batch, mcfg.head_sizes[h]};
        }
        g.backward(multihead_loss(g, heads, cfgs, kind));
    }

    // Forward mutated the live params' BN running stats; restore a pristine
    // copy for the finite-difference evaluations.
    ModelParams pristine = init_model(mcfg, seed);
    std::vector<ParamBlock> pristine_blocks = trainable_parameters(pristine);

    GradCheckResult result;
    result.tolerance = tolerance;
    const double step = 1e-4;
    for (std::size_t b = 0; b < bind.blocks.size(); ++b) {
        Mat analytic = g.grad(bind.leaves[b]);
        if (corrupt_backward)
            for (double& v : analytic.data) v = v * 1.5 + 0.05;
        GradCheckBlock gb;
        gb.name = bind.blocks[b].name;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            Mat& target = *pristine_blocks[b].value;
            const double saved = target.data[i];
            target.data[i] = saved + step;
            const double hi = loss_of(pristine);
            target.data[i] = saved - step;
            const double lo = loss_of(pristine);
            target.data[i] = saved;
            const double fd = (hi - lo) / (2.0 * step);
            const double err = std::abs(analytic.data[i] - fd) /
                               std::max({std::abs(analytic.data[i]), std::abs(fd), 1e-6});
            gb.max_rel_err = std::max(gb.max_rel_err, err);
        }
        gb.pass = gb.max_rel_err < tolerance;
        result.blocks.push_back(std::move(gb));
    }
    result.pass = true;
    for (const GradCheckBlock& gb : result.blocks) result.pass = result.pass && gb.pass;
    return result;
}

}  // namespace uniclass
