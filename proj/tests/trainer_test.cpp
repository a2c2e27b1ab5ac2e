#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "uniclass/run_config.hpp"
#include "uniclass/trainer.hpp"

using namespace uniclass;

namespace {

std::filesystem::path temp_dir(const char* name) {
    const auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(p);
    return p;
}

RunConfig tiny_run_config(const char* out_name) {
    RunConfig cfg;
    cfg.gen_classes = 3;
    cfg.gen_dim = 6;
    cfg.gen_points = 60;
    cfg.gen_separation = 8.0;
    cfg.encoder_layers = {8};
    cfg.proj_hidden = 8;
    cfg.proj_out = 4;
    cfg.head_sizes = {3};
    cfg.batch_size = 16;
    cfg.epochs = 3;
    cfg.seed = 5;
    cfg.knn_k = 5;
    cfg.output_dir = temp_dir(out_name).string();
    return cfg;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("run config parsing: comments, defaults, errors") {
    std::istringstream in(
        "# a comment\n"
        "batch_size = 64   # trailing comment\n"
        "epochs = 7\n"
        "head_sizes = 4,8\n"
        "\n"
        "loss_kind = naive\n"
        "nn_enabled = true\n");
    RunConfig cfg = parse_run_config(in);
    CHECK(cfg.batch_size == 64);
    CHECK(cfg.epochs == 7);
    CHECK(cfg.head_sizes == std::vector<std::size_t>{4, 8});
    CHECK(cfg.loss_kind == LossKind::Naive);
    CHECK(cfg.nn_enabled);

    std::istringstream unknown("no_such_key = 1\n");
    CHECK_THROWS_AS(parse_run_config(unknown), ConfigError);
    std::istringstream malformed("batch_size 64\n");
    CHECK_THROWS_AS(parse_run_config(malformed), ConfigError);
    std::istringstream bad_value("batch_size = many\n");
    CHECK_THROWS_AS(parse_run_config(bad_value), ConfigError);
    std::istringstream bad_bool("nn_enabled = yes\n");
    CHECK_THROWS_AS(parse_run_config(bad_bool), ConfigError);
}

TEST_CASE("run config finalize resolves batch-scaled learning rates") {
    RunConfig cfg;
    cfg.batch_size = 256;
    cfg.finalize();
    CHECK(cfg.base_lr == doctest::Approx(4.8 * 256.0 / 4096.0));
    CHECK(cfg.warmup_start_lr == doctest::Approx(0.3 * 256.0 / 4096.0));
    CHECK(cfg.final_lr == doctest::Approx(0.0048 * 256.0 / 4096.0));
    CHECK(cfg.gen_seed == cfg.seed);

    RunConfig explicit_cfg;
    explicit_cfg.base_lr = 1.0;
    explicit_cfg.finalize();
    CHECK(explicit_cfg.base_lr == 1.0);

    RunConfig bad;
    bad.batch_size = 1;
    CHECK_THROWS_AS(bad.finalize(), ConfigError);
    RunConfig no_views;
    no_views.n_global = 1;
    no_views.n_local = 0;
    CHECK_THROWS_AS(no_views.finalize(), ConfigError);
}

TEST_CASE("canonical echo parses back to the same config") {
    RunConfig cfg = tiny_run_config("uniclass_echo_test");
    cfg.finalize();
    const std::string echo = canonical_echo(cfg);
    std::istringstream in(echo);
    RunConfig back = parse_run_config(in);
    back.finalize();
    CHECK(canonical_echo(back) == echo);
}

TEST_CASE("collapse monitor entropy range") {
    // Uniform predictions: ln C.
    CollapseMonitor m;
    m.observe(Mat(10, 4, 0.0), 0.1);
    CHECK(m.entropy() == doctest::Approx(std::log(4.0)).epsilon(1e-9));

    // Fully collapsed one-hot predictions: 0.
    CollapseMonitor m2;
    Mat collapsed(10, 4, 0.0);
    for (std::size_t r = 0; r < 10; ++r) collapsed(r, 0) = 50.0;
    m2.observe(collapsed, 0.1);
    CHECK(m2.entropy() == doctest::Approx(0.0).epsilon(1e-9));

    // Balanced one-hot equipartition: uniform marginal, ln C again.
    CollapseMonitor m3;
    Mat eq(8, 4, 0.0);
    for (std::size_t r = 0; r < 8; ++r) eq(r, r % 4) = 50.0;
    m3.observe(eq, 0.1);
    CHECK(m3.entropy() == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("grad check passes on the toy model and fails when corrupted") {
    const GradCheckResult res = grad_check(toy_grad_check_config(), 3, 1e-3);
    for (const GradCheckBlock& b : res.blocks) {
        CAPTURE(b.name);
        CHECK(b.max_rel_err < 1e-3);
    }
    CHECK(res.pass);

    const GradCheckResult inf_tol = grad_check(toy_grad_check_config(), 3,
                                               std::numeric_limits<double>::infinity());
    CHECK(inf_tol.pass);

    const GradCheckResult corrupted =
        grad_check(toy_grad_check_config(), 3, 1e-3, LossKind::UniformPrior, true);
    CHECK_FALSE(corrupted.pass);
}

TEST_CASE("epochs=0 yields an initial-model evaluation only") {
    RunConfig cfg = tiny_run_config("uniclass_zero_epochs");
    cfg.epochs = 0;
    const RunReport report = train(cfg);
    CHECK(report.epochs.empty());
    REQUIRE(report.evals.size() == 1);
    CHECK(report.evals[0].epochs_completed == 0);
    CHECK(report.evals[0].heads.size() == 1);
}

TEST_CASE("tiny training run: records, files, periodic evals") {
    RunConfig cfg = tiny_run_config("uniclass_tiny_run");
    cfg.epochs = 4;
    cfg.eval_every = 2;
    cfg.finalize();
    const RunReport report = train(cfg);
    REQUIRE(report.epochs.size() == 4);
    for (std::size_t e = 0; e < 4; ++e) {
        CHECK(report.epochs[e].epoch == e);
        CHECK(std::isfinite(report.epochs[e].loss));
        CHECK(report.epochs[e].head_entropy.size() == 1);
    }
    REQUIRE(report.evals.size() == 2);  // epoch 2 periodic + final
    CHECK(report.evals[0].epochs_completed == 2);
    CHECK(report.evals[1].epochs_completed == 4);

    namespace fs = std::filesystem;
    CHECK(fs::exists(fs::path(cfg.output_dir) / "checkpoint.scck"));
    CHECK(fs::exists(fs::path(cfg.output_dir) / "report.json"));
    CHECK(fs::exists(fs::path(cfg.output_dir) / "epochs.csv"));

    // The checkpoint evaluates identically to the trained model's final eval.
    ModelParams params = load_checkpoint(fs::path(cfg.output_dir) / "checkpoint.scck");
    Dataset ds = generate_mixture(cfg.gen_seed, cfg.gen_classes, cfg.gen_dim, cfg.gen_points,
                                  cfg.gen_separation, cfg.gen_balanced);
    EvalOptions opts;
    opts.knn_k = cfg.knn_k;
    const EvalRecord again = evaluate(params, ds, opts, cfg.epochs);
    CHECK(again.heads[0].acc == report.evals.back().heads[0].acc);
    CHECK(again.heads[0].nmi == report.evals.back().heads[0].nmi);
    CHECK(again.knn_acc == report.evals.back().knn_acc);
}

TEST_CASE("reports are bitwise reproducible") {
    RunConfig cfg = tiny_run_config("uniclass_repro_run");
    const RunReport first = train(cfg);
    const std::string first_json = slurp(std::filesystem::path(cfg.output_dir) / "report.json");
    const std::string first_csv = slurp(std::filesystem::path(cfg.output_dir) / "epochs.csv");
    const RunReport second = train(cfg);
    const std::string second_json = slurp(std::filesystem::path(cfg.output_dir) / "report.json");
    const std::string second_csv = slurp(std::filesystem::path(cfg.output_dir) / "epochs.csv");
    CHECK(first_json == second_json);
    CHECK(first_csv == second_csv);
    CHECK(render_report_json(first) == render_report_json(second));
}

TEST_CASE("report JSON round trips through the parser") {
    RunConfig cfg = tiny_run_config("uniclass_json_round");
    cfg.epochs = 2;
    const RunReport report = train(cfg);
    const RunReport back = report_from_json(report_to_json(report));
    CHECK(render_report_json(back) == render_report_json(report));

    std::ostringstream csv;
    write_epoch_csv(report, csv);
    CHECK(csv.str().rfind("epoch,loss,lr,entropy_h0,acc_h0\n", 0) == 0);
}

TEST_CASE("nearest-neighbor queue path runs and fills") {
    RunConfig cfg = tiny_run_config("uniclass_nn_run");
    cfg.epochs = 3;
    cfg.nn_enabled = true;
    cfg.nn_warmup_epochs = 1;
    cfg.queue_capacity = 128;
    const RunReport report = train(cfg);
    CHECK(report.epochs.back().queue_fill > 0.0);
    CHECK(std::isfinite(report.epochs.back().loss));
}

TEST_CASE("multi-view local augmentation path runs") {
    RunConfig cfg = tiny_run_config("uniclass_multiview_run");
    cfg.epochs = 2;
    cfg.n_global = 2;
    cfg.n_local = 2;
    const RunReport report = train(cfg);
    CHECK(report.epochs.size() == 2);
    CHECK(std::isfinite(report.epochs.back().loss));
}

TEST_CASE("evaluation is deterministic and invariant to truth relabeling") {
    RunConfig cfg = tiny_run_config("uniclass_eval_det");
    cfg.epochs = 1;
    cfg.finalize();
    train(cfg);
    ModelParams params =
        load_checkpoint(std::filesystem::path(cfg.output_dir) / "checkpoint.scck");
    Dataset ds = generate_mixture(cfg.gen_seed, cfg.gen_classes, cfg.gen_dim, cfg.gen_points,
                                  cfg.gen_separation, cfg.gen_balanced);
    EvalOptions opts;
    const EvalRecord a = evaluate(params, ds, opts);
    const EvalRecord b = evaluate(params, ds, opts);
    CHECK(a.heads[0].acc == b.heads[0].acc);
    CHECK(a.heads[0].ami == b.heads[0].ami);

    Dataset permuted = ds;
    const Label perm[3] = {2, 0, 1};
    for (Label& l : permuted.true_labels) l = perm[l];
    const EvalRecord c = evaluate(params, permuted, opts);
    CHECK(c.heads[0].acc == doctest::Approx(a.heads[0].acc).epsilon(1e-12));
    CHECK(c.heads[0].nmi == doctest::Approx(a.heads[0].nmi).epsilon(1e-12));
    CHECK(c.heads[0].ami == doctest::Approx(a.heads[0].ami).epsilon(1e-12));
    CHECK(c.heads[0].ari == doctest::Approx(a.heads[0].ari).epsilon(1e-12));
}

TEST_CASE("a short run on separated mixtures solves them and the knn probe agrees") {
    RunConfig cfg;
    cfg.gen_classes = 4;
    cfg.gen_dim = 16;
    cfg.gen_points = 600;
    cfg.gen_separation = 10.0;
    cfg.encoder_layers = {32};
    cfg.proj_hidden = 32;
    cfg.proj_out = 8;
    cfg.head_sizes = {4};
    cfg.batch_size = 64;
    cfg.epochs = 30;
    cfg.seed = 3;
    cfg.output_dir = temp_dir("uniclass_short_mixture").string();
    const RunReport report = train(cfg);
    const EvalRecord& final = report.final_eval();
    CHECK(final.heads[0].acc >= 0.9);
    CHECK(final.knn_acc >= 0.9);
    CHECK(final.heads[0].nmi >= 0.8);
}

TEST_CASE("fixed-head training leaves head weights untouched end to end") {
    RunConfig cfg = tiny_run_config("uniclass_fixed_head_run");
    cfg.head_mode = HeadMode::Fixed;
    cfg.epochs = 3;
    cfg.finalize();
    const ModelParams init = init_model(cfg.model_config(cfg.gen_dim), cfg.seed);
    const RunReport report = train(cfg);
    CHECK(std::isfinite(report.epochs.back().loss));
    const ModelParams trained =
        load_checkpoint(std::filesystem::path(cfg.output_dir) / "checkpoint.scck");
    CHECK(trained.head_weights[0].data == init.head_weights[0].data);  // bitwise
    CHECK(trained.proj_out_weight.data != init.proj_out_weight.data);  // the rest trained
}

TEST_CASE("the schedule is stepped per iteration") {
    RunConfig cfg = tiny_run_config("uniclass_lr_steps");
    cfg.epochs = 3;
    cfg.finalize();
    const RunReport report = train(cfg);
    const OptimConfig ocfg = cfg.optim_config();
    const std::size_t num_batches = (cfg.gen_points + cfg.batch_size - 1) / cfg.batch_size;
    for (const EpochRecord& e : report.epochs) {
        const double expected = lr_at(
            ocfg, static_cast<double>(e.epoch) +
                      static_cast<double>(num_batches - 1) / static_cast<double>(num_batches));
        CHECK(e.lr == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("untrained models score near chance with matching slack") {
    // Interval frozen from this Monte-Carlo baseline: chance is 0.25 on four
    // balanced classes; optimal matching adds slack above it. Separation 0
    // removes any structure an untrained projection could pick up.
    Dataset ds = generate_mixture(99, 4, 16, 2000, 0.0, true);
    ModelConfig mcfg;
    mcfg.input_dim = 16;
    mcfg.encoder_layers = {64};
    mcfg.proj_hidden = 64;
    mcfg.proj_out = 16;
    mcfg.head_sizes = {4};
    EvalOptions opts;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ModelParams params = init_model(mcfg, seed);
        const EvalRecord rec = evaluate(params, ds, opts);
        CHECK(rec.heads[0].acc >= 0.22);
        CHECK(rec.heads[0].acc <= 0.45);
    }
}

TEST_CASE("exploding optimization aborts with a diagnostic dump") {
    RunConfig cfg = tiny_run_config("uniclass_nan_run");
    cfg.epochs = 4;
    cfg.base_lr = 1e15;
    cfg.warmup_start_lr = 1e15;
    cfg.final_lr = 1e15;
    CHECK_THROWS_AS(train(cfg), NanAbortError);
    try {
        train(cfg);
    } catch (const NanAbortError& e) {
        CHECK(std::string(e.what()).find("head") != std::string::npos);
    }
}
