// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Tolerances are fixed here, not tuned at runtime.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "uniclass/data.hpp"
#include "uniclass/loss.hpp"
#include "uniclass/metrics.hpp"
#include "uniclass/optim.hpp"
#include "uniclass/run_config.hpp"
#include "uniclass/trainer.hpp"

using namespace uniclass;

namespace {

constexpr double kLn4 = 1.3862943611198906;

struct Check {
    bool pass = true;
    std::string details;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!details.empty()) details += "; ";
            details += what;
        }
    }
    void note(const std::string& what) {
        if (!details.empty()) details += "; ";
        details += what;
    }
};

int g_failures = 0;

void run_criterion(const std::string& name, const std::function<void(Check&)>& fn) {
    Check check;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        fn(check);
    } catch (const std::exception& e) {
        check.pass = false;
        check.require(false, std::string("exception: ") + e.what());
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!check.pass) ++g_failures;
    std::printf("[%s] %-28s (%.2fs)%s%s\n", check.pass ? "PASS" : "FAIL", name.c_str(), seconds,
                check.details.empty() ? "" : " -- ", check.details.c_str());
    std::fflush(stdout);
}

Mat equipartition_logits(std::size_t n, std::size_t c, double magnitude) {
    Mat m(n, c, 0.0);
    for (std::size_t i = 0; i < n; ++i) m(i, i % c) = magnitude;
    return m;
}

Mat collapsed_logits(std::size_t n, std::size_t c, double magnitude) {
    Mat m(n, c, 0.0);
    for (std::size_t i = 0; i < n; ++i) m(i, 0) = magnitude;
    return m;
}

double eval_directional(const Mat& s1, const Mat& s2, const LossConfig& cfg) {
    Graph g;
    return g.value(directional_loss(g, g.constant(s1), g.constant(s2), cfg))(0, 0);
}

std::string temp_out(const char* name) {
    const auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(p);
    return p.string();
}

RunConfig desk_config(const char* out_name) {
    RunConfig cfg;
    cfg.gen_classes = 4;
    cfg.gen_dim = 16;
    cfg.gen_points = 2000;
    cfg.gen_separation = 10.0;
    cfg.encoder_layers = {64};
    cfg.proj_hidden = 64;
    cfg.proj_out = 16;
    cfg.head_sizes = {4, 8, 16};
    cfg.batch_size = 256;
    cfg.epochs = 200;
    cfg.seed = 42;
    cfg.output_dir = temp_out(out_name);
    return cfg;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --------------------------------------------------------------------------

void criterion_equipartition_zero(Check& check) {
    const auto t0 = std::chrono::steady_clock::now();
    const LossConfig cfg{0.1, 0.05, 8, 4};
    const Mat eq = equipartition_logits(8, 4, 50.0);
    Graph g;
    const double value = g.value(symmetric_loss(g, g.constant(eq), g.constant(eq), cfg))(0, 0);
    check.require(std::abs(value) <= 1e-6, "equipartition symmetric loss " + std::to_string(value));
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    check.require(secs < 1.0, "runtime " + std::to_string(secs) + " s (limit 1)");
    check.note("loss at saturated equipartition = " + std::to_string(value));
}

void criterion_collapse_penalty(Check& check) {
    const LossConfig cfg{0.1, 0.05, 8, 4};
    for (double magnitude : {5.0, 10.0, 30.0, 50.0}) {
        const Mat col = collapsed_logits(8, 4, magnitude);
        const double value = eval_directional(col, col, cfg);
        check.require(std::abs(value - kLn4) <= 1e-6,
                      "collapse loss at magnitude " + std::to_string(magnitude) + " = " +
                          std::to_string(value));
    }
    check.note("collapse costs ln 4 independent of saturation");
}

void criterion_naive_contrast(Check& check) {
    const LossConfig cfg{0.1, 0.05, 8, 4};
    const Mat col = collapsed_logits(8, 4, 50.0);
    Graph g;
    const double naive = g.value(naive_loss(g, g.constant(col), g.constant(col), cfg))(0, 0);
    const double ours = eval_directional(col, col, cfg);
    check.require(std::abs(naive) <= 1e-6, "naive loss on collapse = " + std::to_string(naive));
    check.require(std::abs(ours - kLn4) <= 1e-6,
                  "uniform-prior loss on collapse = " + std::to_string(ours));
    check.note("collapse optimal for naive CE, costs ln C here");
}

void criterion_gradient_gate(Check& check) {
    const auto t0 = std::chrono::steady_clock::now();
    const GradCheckResult full = grad_check(toy_grad_check_config(), 7, 1e-3);
    double worst = 0.0;
    for (const GradCheckBlock& b : full.blocks) worst = std::max(worst, b.max_rel_err);
    check.require(full.pass, "full pipeline worst rel err " + std::to_string(worst));
    check.note("pipeline max rel err = " + std::to_string(worst));

    // Component ops at the tighter tolerance.
    SplitMix64 rng(2024);
    double comp_worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        const Mat a = oracles::random_mat(5, 3, rng);
        const Mat bmat = oracles::random_mat(3, 4, rng);
        const Mat r = oracles::random_mat(5, 4, rng);
        const Mat x = oracles::random_mat(4, 6, rng);
        const Mat rx = oracles::random_mat(4, 6, rng);

        auto eval_mm = [&r](const std::vector<Mat>& xs) {
            Graph g;
            return g.value(
                g.sum_all(g.mul(g.matmul(g.constant(xs[0]), g.constant(xs[1])), g.constant(r))))(0, 0);
        };
        Graph g;
        Var va = g.leaf(a, true), vb = g.leaf(bmat, true);
        g.backward(g.sum_all(g.mul(g.matmul(va, vb), g.constant(r))));
        for (std::size_t which = 0; which < 2; ++which) {
            const Mat fd = oracles::finite_difference_grad(eval_mm, {a, bmat}, which);
            const Mat& an = which == 0 ? g.grad(va) : g.grad(vb);
            for (std::size_t i = 0; i < fd.size(); ++i)
                comp_worst = std::max(comp_worst, oracles::rel_err(an.data[i], fd.data[i]));
        }

        auto eval_soft = [&rx](const std::vector<Mat>& xs) {
            Graph g2;
            return g2.value(g2.sum_all(
                g2.mul(g2.softmax(g2.constant(xs[0]), Axis::Rows, 0.1), g2.constant(rx))))(0, 0);
        };
        Graph g2;
        Var vx = g2.leaf(x, true);
        g2.backward(g2.sum_all(g2.mul(g2.softmax(vx, Axis::Rows, 0.1), g2.constant(rx))));
        const Mat fd = oracles::finite_difference_grad(eval_soft, {x}, 0);
        for (std::size_t i = 0; i < fd.size(); ++i)
            comp_worst = std::max(comp_worst, oracles::rel_err(g2.grad(vx).data[i], fd.data[i]));
    }
    check.require(comp_worst < 1e-4, "component worst rel err " + std::to_string(comp_worst));
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    check.require(secs < 10.0, "runtime " + std::to_string(secs) + " s (limit 10)");
}

void criterion_metric_oracles(Check& check) {
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t pairs = 0;
    double worst = 0.0;
    for (std::size_t m = 1; m <= 6; ++m) {
        const std::vector<Partition> parts = oracles::all_partitions(m);
        for (const Partition& pred : parts) {
            for (const Partition& truth : parts) {
                ++pairs;
                worst = std::max(worst, std::abs(nmi(pred, truth) - oracles::nmi_bf(pred, truth)));
                worst = std::max(worst, std::abs(ami(pred, truth) - oracles::ami_bf(pred, truth)));
                if (m >= 2)
                    worst = std::max(worst,
                                     std::abs(ari(pred, truth) - oracles::ari_bf(pred, truth)));
                worst = std::max(worst, std::abs(hungarian_acc(pred, truth).acc -
                                                 oracles::acc_bf(pred, truth)));
                if (worst >= 1e-12) {
                    check.require(false, "mismatch at m=" + std::to_string(m));
                    return;
                }
            }
        }
    }
    SplitMix64 rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t kp = 2 + rng.next_below(6), kt = 2 + rng.next_below(6);
        Partition pred(60), truth(60);
        for (std::size_t i = 0; i < 60; ++i) {
            pred[i] = static_cast<Label>(rng.next_below(kp));
            truth[i] = static_cast<Label>(rng.next_below(kt));
        }
        const double diff = std::abs(hungarian_acc(pred, truth).acc - oracles::acc_bf(pred, truth));
        check.require(diff < 1e-12, "assignment mismatch vs permutation maximum");
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    check.require(secs < 60.0, "runtime " + std::to_string(secs) + " s (limit 60)");
    check.note(std::to_string(pairs) + " partition pairs, worst deviation " +
               std::to_string(worst));
}

void criterion_ami_chance(Check& check) {
    SplitMix64 rng(88);
    Partition truth(200);
    for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = static_cast<Label>(i % 5);
    for (std::size_t i = truth.size(); i-- > 1;) std::swap(truth[i], truth[rng.next_below(i + 1)]);
    double mean = 0.0;
    for (int s = 0; s < 1000; ++s) {
        Partition pred(200);
        for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = static_cast<Label>(i % 5);
        for (std::size_t i = pred.size(); i-- > 1;) std::swap(pred[i], pred[rng.next_below(i + 1)]);
        mean += ami(pred, truth);
    }
    mean /= 1000.0;
    check.require(mean >= -0.02 && mean <= 0.02, "mean AMI over shuffles = " + std::to_string(mean));
    check.note("mean AMI over 1000 shuffles = " + std::to_string(mean));
}

void criterion_desk_training(Check& check) {
    RunConfig cfg = desk_config("uniclass_acceptance_desk");
    cfg.finalize();
    const auto t0 = std::chrono::steady_clock::now();
    const RunReport report = train(cfg);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // The k-means oracle must solve the same data nearly perfectly.
    const Dataset ds = generate_mixture(cfg.gen_seed, cfg.gen_classes, cfg.gen_dim, cfg.gen_points,
                                        cfg.gen_separation, cfg.gen_balanced);
    const double oracle_acc = hungarian_acc(oracles::kmeans(ds.points, 4, 11), ds.true_labels).acc;
    check.require(oracle_acc >= 0.99, "k-means oracle acc " + std::to_string(oracle_acc));

    const std::size_t base_head = cfg.model_config(cfg.gen_dim).base_head();
    const HeadEval& base = report.final_eval().heads[base_head];
    check.require(base.acc >= 0.95, "base-head acc " + std::to_string(base.acc));

    // Entropies normalized by each head's ln C.
    double min_entropy = 1e9;
    const double lnc[3] = {std::log(4.0), std::log(8.0), std::log(16.0)};
    for (const EpochRecord& e : report.epochs)
        if (e.epoch > 5)
            for (std::size_t h = 0; h < e.head_entropy.size(); ++h)
                min_entropy = std::min(min_entropy, e.head_entropy[h] / lnc[h]);
    check.require(min_entropy >= 0.5,
                  "min normalized marginal entropy after epoch 5 = " + std::to_string(min_entropy));
    for (const EpochRecord& e : report.epochs)
        if (e.epoch > 5 && e.collapse_alarm)
            check.require(false, "collapse alarm at epoch " + std::to_string(e.epoch));

    check.require(report.epochs.back().loss < report.epochs.front().loss, "loss did not descend");
    check.require(seconds < 120.0, "runtime " + std::to_string(seconds) + " s");
    check.note("base acc " + std::to_string(base.acc) + ", oracle " + std::to_string(oracle_acc) +
               ", min norm entropy " + std::to_string(min_entropy));
}

void criterion_batch_smaller_than_classes(Check& check) {
    RunConfig cfg;
    cfg.gen_classes = 4;
    cfg.gen_dim = 16;
    cfg.gen_points = 400;
    cfg.gen_separation = 10.0;
    cfg.encoder_layers = {32};
    cfg.proj_hidden = 32;
    cfg.proj_out = 8;
    cfg.head_sizes = {16};  // C = 16 with batches of 8
    cfg.batch_size = 8;
    cfg.epochs = 25;
    cfg.seed = 7;
    cfg.output_dir = temp_out("uniclass_acceptance_small_batch");
    const RunReport report = train(cfg);  // throws on degenerate slices
    const double threshold = 0.5 * std::log(16.0);
    double min_entropy = 1e9;
    for (const EpochRecord& e : report.epochs) {
        min_entropy = std::min(min_entropy, e.head_entropy[0]);
        check.require(!e.collapse_alarm, "collapse alarm at epoch " + std::to_string(e.epoch));
    }
    check.require(min_entropy >= threshold,
                  "marginal entropy fell to " + std::to_string(min_entropy) + " (alarm at " +
                      std::to_string(threshold) + ")");
    check.note("batch 8 < C 16 completed; min entropy " + std::to_string(min_entropy) + " vs ln16 " +
               std::to_string(std::log(16.0)));
}

void criterion_collapse_demonstration(Check& check) {
    RunConfig cfg = desk_config("uniclass_acceptance_naive");
    cfg.loss_kind = LossKind::Naive;
    const RunReport report = train(cfg);
    double min_entropy = 1e9;
    std::size_t at_epoch = 0;
    const double lnc[3] = {std::log(4.0), std::log(8.0), std::log(16.0)};
    for (const EpochRecord& e : report.epochs)
        for (std::size_t h = 0; h < e.head_entropy.size(); ++h)
            if (e.head_entropy[h] / lnc[h] < min_entropy) {
                min_entropy = e.head_entropy[h] / lnc[h];
                at_epoch = e.epoch;
            }
    check.require(min_entropy < 0.1, "naive-loss entropy only fell to " +
                                         std::to_string(min_entropy) + " of ln C");
    bool alarm_fired = false;
    for (const EpochRecord& e : report.epochs) alarm_fired = alarm_fired || e.collapse_alarm;
    check.require(alarm_fired, "collapse alarm never fired on the degenerate run");
    check.note("naive loss collapsed to " + std::to_string(min_entropy) + " of ln C by epoch " +
               std::to_string(at_epoch));
}

void criterion_schedule_endpoints(Check& check) {
    OptimConfig cfg;
    check.require(lr_at(cfg, 0.0) == 0.3, "lr(0) != 0.3");
    check.require(lr_at(cfg, 10.0) == 4.8, "lr(10) != 4.8");
    check.require(lr_at(cfg, 800.0) == 0.0048, "lr(800) != 0.0048");
    const double eps = 1e-9;
    const double jump = std::abs(lr_at(cfg, 10.0 - eps) - lr_at(cfg, 10.0 + eps));
    check.require(jump <= 1e-8, "junction jump " + std::to_string(jump));
    const double left_limit = std::abs(lr_at(cfg, 10.0 - 1e-12) - 4.8);
    check.require(left_limit <= 1e-11, "left limit gap " + std::to_string(left_limit));
    check.note("0.3 / 4.8 / 0.0048 reproduced exactly");
}

void criterion_hierarchical_rollup(Check& check) {
    HierarchyMap map;
    map.levels.push_back(HierarchyLevel{"coarse", {0, 0, 1}, 2});
    const Partition truth_leaf{0, 0, 1, 1, 2, 2};
    const Partition pred{0, 1, 0, 1, 2, 2};
    const double leaf_acc = hungarian_acc(pred, truth_leaf).acc;
    const std::vector<LevelMetrics> levels = hierarchical_eval(pred, truth_leaf, map);
    check.require(levels.size() == 1, "level count");
    check.require(std::abs(levels[0].acc - 1.0) < 1e-12,
                  "level-1 acc " + std::to_string(levels[0].acc));
    check.require(leaf_acc < 1.0, "leaf acc " + std::to_string(leaf_acc));
    check.note("level-1 acc 1.0, leaf acc " + std::to_string(leaf_acc));
}

void criterion_reproducibility(Check& check) {
    RunConfig cfg;
    cfg.gen_classes = 3;
    cfg.gen_dim = 8;
    cfg.gen_points = 120;
    cfg.gen_separation = 6.0;
    cfg.encoder_layers = {16};
    cfg.proj_hidden = 16;
    cfg.proj_out = 6;
    cfg.head_sizes = {3, 6};
    cfg.batch_size = 32;
    cfg.epochs = 8;
    cfg.eval_every = 3;
    cfg.seed = 1234;
    cfg.nn_enabled = true;
    cfg.queue_capacity = 256;
    cfg.output_dir = temp_out("uniclass_acceptance_repro");
    train(cfg);
    const std::string first = slurp(std::filesystem::path(cfg.output_dir) / "report.json");
    const std::string first_csv = slurp(std::filesystem::path(cfg.output_dir) / "epochs.csv");
    train(cfg);
    const std::string second = slurp(std::filesystem::path(cfg.output_dir) / "report.json");
    const std::string second_csv = slurp(std::filesystem::path(cfg.output_dir) / "epochs.csv");
    check.require(!first.empty() && first == second, "report.json differs between identical runs");
    check.require(first_csv == second_csv, "epochs.csv differs between identical runs");
    check.note("report.json and epochs.csv byte-identical across reruns");
}

}  // namespace

int main() {
    std::printf("uniclass acceptance suite\n");
    run_criterion("equipartition-zero-loss", criterion_equipartition_zero);
    run_criterion("collapse-costs-lnC", criterion_collapse_penalty);
    run_criterion("naive-vs-uniform-prior", criterion_naive_contrast);
    run_criterion("gradient-gate", criterion_gradient_gate);
    run_criterion("metric-oracle-equivalence", criterion_metric_oracles);
    run_criterion("ami-chance-adjustment", criterion_ami_chance);
    run_criterion("desk-scale-training", criterion_desk_training);
    run_criterion("batch-smaller-than-C", criterion_batch_smaller_than_classes);
    run_criterion("collapse-demonstration", criterion_collapse_demonstration);
    run_criterion("schedule-endpoints", criterion_schedule_endpoints);
    run_criterion("hierarchical-rollup", criterion_hierarchical_rollup);
    run_criterion("report-reproducibility", criterion_reproducibility);
    if (g_failures) {
        std::printf("%d criterion(s) FAILED\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
