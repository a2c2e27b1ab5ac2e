// uniclass: train and evaluate a self-supervised classifier on vector data.
//
// Subcommands:
//   gen-data    write a Gaussian-mixture dataset CSV
//   train       run a training config; writes checkpoint + report + epoch CSV
//   eval        score a checkpoint on a dataset (optionally with a hierarchy)
//   grad-check  verify full-pipeline analytic gradients against finite differences
//   report      render a report.json back to CSV tables
//
// Exit codes: 0 ok, 1 config error, 2 runtime/NaN abort, 3 verification failure.

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "uniclass/data.hpp"
#include "uniclass/errors.hpp"
#include "uniclass/metrics.hpp"
#include "uniclass/model.hpp"
#include "uniclass/run_config.hpp"
#include "uniclass/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerification = 3;

struct GenDataArgs {
    std::uint64_t seed = 1;
    std::size_t classes = 4;
    std::size_t dim = 16;
    std::size_t points = 2000;
    double separation = 10.0;
    bool unbalanced = false;
    std::string out;
};

int run_gen_data(const GenDataArgs& args) {
    uniclass::Dataset ds = uniclass::generate_mixture(args.seed, args.classes, args.dim,
                                                      args.points, args.separation, !args.unbalanced);
    uniclass::write_csv(ds, args.out);
    std::cout << "wrote " << ds.count() << " points (" << ds.dim() << "-d, " << ds.k_true
              << " classes) to " << args.out << "\n";
    return kExitOk;
}

int run_train(const std::string& config_path, const std::string& output_dir_override) {
    uniclass::RunConfig cfg = uniclass::load_run_config(config_path);
    if (!output_dir_override.empty()) cfg.output_dir = output_dir_override;
    uniclass::RunReport report = uniclass::train(cfg);
    const uniclass::EvalRecord& final = report.final_eval();
    std::cout << "training complete in " << report.wall_seconds << " s\n";
    for (const uniclass::HeadEval& h : final.heads)
        std::cout << "head " << h.head << " (C=" << h.classes << "): acc=" << h.acc
                  << " nmi=" << h.nmi << " ami=" << h.ami << " ari=" << h.ari << "\n";
    std::cout << "knn_acc=" << final.knn_acc << "\n";
    std::cout << "outputs in " << cfg.output_dir << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string pred_labels;
    std::string data;
    std::string hierarchy;
    std::size_t knn_k = 20;
    std::string overcluster = "matching";
    std::string nmi_norm = "geometric";
    std::string ami_norm = "arithmetic";
};

uniclass::MeanKind parse_mean_kind(const std::string& s) {
    if (s == "geometric") return uniclass::MeanKind::Geometric;
    if (s == "arithmetic") return uniclass::MeanKind::Arithmetic;
    if (s == "max") return uniclass::MeanKind::Max;
    if (s == "min") return uniclass::MeanKind::Min;
    throw uniclass::ConfigError("unknown normalization '" + s + "'");
}

// Flat + hierarchical metrics for an externally supplied partition file (one
// label per line) against the dataset's truth; no model involved.
int run_eval_labels(const EvalArgs& args, const uniclass::Dataset& ds,
                    const uniclass::EvalOptions& opts) {
    const uniclass::Partition pred = uniclass::read_label_file(args.pred_labels);
    if (pred.size() != ds.count())
        throw uniclass::ConfigError("eval: label file length does not match dataset");
    nlohmann::ordered_json j;
    j["acc"] = opts.overcluster == uniclass::OverclusterMode::Matching
                   ? uniclass::hungarian_acc(pred, ds.true_labels).acc
                   : uniclass::majority_acc(pred, ds.true_labels);
    j["nmi"] = uniclass::nmi(pred, ds.true_labels, opts.nmi_norm);
    j["ami"] = uniclass::ami(pred, ds.true_labels, opts.ami_norm);
    j["ari"] = uniclass::ari(pred, ds.true_labels);
    if (opts.hierarchy) {
        j["levels"] = nlohmann::ordered_json::array();
        for (const uniclass::LevelMetrics& l :
             uniclass::hierarchical_eval(pred, ds.true_labels, *opts.hierarchy, opts.nmi_norm,
                                         opts.ami_norm)) {
            nlohmann::ordered_json jl;
            jl["level"] = l.level;
            jl["acc"] = l.acc;
            jl["nmi"] = l.nmi;
            jl["ami"] = l.ami;
            jl["ari"] = l.ari;
            j["levels"].push_back(std::move(jl));
        }
    }
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int run_eval(const EvalArgs& args) {
    if (args.checkpoint.empty() == args.pred_labels.empty())
        throw uniclass::ConfigError("eval: give exactly one of --checkpoint or --pred-labels");
    uniclass::Dataset ds = uniclass::read_csv(args.data);
    uniclass::HierarchyMap hierarchy;
    uniclass::EvalOptions opts;
    opts.knn_k = args.knn_k;
    opts.nmi_norm = parse_mean_kind(args.nmi_norm);
    opts.ami_norm = parse_mean_kind(args.ami_norm);
    if (args.overcluster == "matching") opts.overcluster = uniclass::OverclusterMode::Matching;
    else if (args.overcluster == "majority") opts.overcluster = uniclass::OverclusterMode::Majority;
    else throw uniclass::ConfigError("--overcluster-mode must be matching or majority");
    if (!args.hierarchy.empty()) {
        hierarchy = uniclass::HierarchyMap::read_tsv(args.hierarchy);
        opts.hierarchy = &hierarchy;
    }
    if (!args.pred_labels.empty()) return run_eval_labels(args, ds, opts);

    uniclass::ModelParams params = uniclass::load_checkpoint(args.checkpoint);
    uniclass::EvalRecord rec = uniclass::evaluate(params, ds, opts);

    nlohmann::ordered_json j;
    j["knn_acc"] = rec.knn_acc;
    j["heads"] = nlohmann::ordered_json::array();
    for (const uniclass::HeadEval& h : rec.heads) {
        nlohmann::ordered_json jh;
        jh["head"] = h.head;
        jh["classes"] = h.classes;
        jh["acc"] = h.acc;
        jh["nmi"] = h.nmi;
        jh["ami"] = h.ami;
        jh["ari"] = h.ari;
        for (const uniclass::LevelMetrics& l : h.levels) {
            nlohmann::ordered_json jl;
            jl["level"] = l.level;
            jl["acc"] = l.acc;
            jl["nmi"] = l.nmi;
            jl["ami"] = l.ami;
            jl["ari"] = l.ari;
            jh["levels"].push_back(std::move(jl));
        }
        j["heads"].push_back(std::move(jh));
    }
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int run_grad_check(double tolerance, std::uint64_t seed) {
    uniclass::GradCheckResult res =
        uniclass::grad_check(uniclass::toy_grad_check_config(), seed, tolerance);
    for (const uniclass::GradCheckBlock& b : res.blocks)
        std::cout << (b.pass ? "PASS" : "FAIL") << "  " << b.name
                  << "  max_rel_err=" << b.max_rel_err << "\n";
    std::cout << (res.pass ? "grad-check passed" : "grad-check FAILED") << " (tolerance "
              << res.tolerance << ")\n";
    return res.pass ? kExitOk : kExitVerification;
}

int run_report(const std::string& input, const std::string& out_dir) {
    std::ifstream in(input);
    if (!in) throw uniclass::ConfigError("report: cannot open " + input);
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(in);
    uniclass::RunReport report = uniclass::report_from_json(j);

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
        std::ofstream out(fs::path(out_dir) / "epochs.csv", std::ios::binary);
        uniclass::write_epoch_csv(report, out);
    }
    {
        std::ofstream out(fs::path(out_dir) / "evals.csv", std::ios::binary);
        out << "epochs_completed,knn_acc,head,classes,acc,nmi,ami,ari\n";
        for (const uniclass::EvalRecord& ev : report.evals)
            for (const uniclass::HeadEval& h : ev.heads)
                out << ev.epochs_completed << ',' << ev.knn_acc << ',' << h.head << ','
                    << h.classes << ',' << h.acc << ',' << h.nmi << ',' << h.ami << ',' << h.ari
                    << '\n';
    }
    {
        std::ofstream out(fs::path(out_dir) / "levels.csv", std::ios::binary);
        out << "epochs_completed,head,level,acc,nmi,ami,ari\n";
        for (const uniclass::EvalRecord& ev : report.evals)
            for (const uniclass::HeadEval& h : ev.heads)
                for (const uniclass::LevelMetrics& l : h.levels)
                    out << ev.epochs_completed << ',' << h.head << ',' << l.level << ',' << l.acc
                        << ',' << l.nmi << ',' << l.ami << ',' << l.ari << '\n';
    }
    std::cout << "wrote epochs.csv, evals.csv, levels.csv to " << out_dir << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-supervised classification on vector data"};
    app.require_subcommand(1);

    GenDataArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "write a Gaussian-mixture dataset CSV");
    gen_cmd->add_option("--seed", gen.seed, "generator seed");
    gen_cmd->add_option("--classes", gen.classes, "number of mixture components");
    gen_cmd->add_option("--dim", gen.dim, "feature dimension");
    gen_cmd->add_option("--points", gen.points, "number of points");
    gen_cmd->add_option("--separation", gen.separation, "class-mean separation");
    gen_cmd->add_flag("--unbalanced", gen.unbalanced, "sample labels uniformly instead of evenly");
    gen_cmd->add_option("--out", gen.out, "output CSV path")->required();

    std::string train_config, train_out;
    CLI::App* train_cmd = app.add_subcommand("train", "train from a key = value config file");
    train_cmd->add_option("--config", train_config, "run config file")->required();
    train_cmd->add_option("--output-dir", train_out, "override the config's output_dir");

    EvalArgs eval_args;
    CLI::App* eval_cmd =
        app.add_subcommand("eval", "evaluate a checkpoint or a label file on a dataset");
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file");
    eval_cmd->add_option("--pred-labels", eval_args.pred_labels,
                         "score this partition (one label per line) instead of a checkpoint");
    eval_cmd->add_option("--data", eval_args.data, "dataset CSV")->required();
    eval_cmd->add_option("--hierarchy", eval_args.hierarchy, "hierarchy TSV (leaf/level/super)");
    eval_cmd->add_option("--knn-k", eval_args.knn_k, "K for the K-NN probe");
    eval_cmd->add_option("--overcluster-mode", eval_args.overcluster, "matching|majority");
    eval_cmd->add_option("--nmi-normalization", eval_args.nmi_norm,
                         "geometric|arithmetic|max|min");
    eval_cmd->add_option("--ami-normalization", eval_args.ami_norm,
                         "geometric|arithmetic|max|min");

    double gc_tolerance = 1e-3;
    std::uint64_t gc_seed = 1;
    CLI::App* gc_cmd = app.add_subcommand("grad-check", "verify gradients on a toy model");
    gc_cmd->add_option("--tolerance", gc_tolerance, "max relative error per block");
    gc_cmd->add_option("--seed", gc_seed, "model/init seed");

    std::string report_input, report_out = ".";
    CLI::App* report_cmd = app.add_subcommand("report", "render report.json to CSV tables");
    report_cmd->add_option("--input", report_input, "report.json path")->required();
    report_cmd->add_option("--out-dir", report_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen_cmd->parsed()) return run_gen_data(gen);
        if (train_cmd->parsed()) return run_train(train_config, train_out);
        if (eval_cmd->parsed()) return run_eval(eval_args);
        if (gc_cmd->parsed()) return run_grad_check(gc_tolerance, gc_seed);
        if (report_cmd->parsed()) return run_report(report_input, report_out);
    } catch (const uniclass::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const uniclass::ParameterError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const uniclass::NanAbortError& e) {
        std::cerr << "aborted: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
