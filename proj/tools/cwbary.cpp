// cwbary: continuous Wasserstein barycenters from the command line.
//
//   cwbary run     --config exp.json [--seed N] [--out DIR] [--log-interval N]
//   cwbary solve   --config exp.json [--seed N] [--out DIR] [--checkpoint PATH]
//   cwbary recover --config exp.json --checkpoint PATH [--out DIR]
//   cwbary eval    --config exp.json --checkpoint PATH [--out DIR]
//   cwbary oracle  --config exp.json [--seed N] [--out DIR]
//
// CWB_THREADS sets the thread count for parallel linear algebra.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "cwb/cwb.hpp"

namespace fs = std::filesystem;

namespace {

struct Args {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string checkpoint;
    std::optional<long> log_interval;
};

cwb::ExperimentConfig load(const Args& a) {
    cwb::ExperimentConfig cfg = cwb::load_experiment_config(a.config);
    cwb::RunOptions opt;
    opt.seed_override = a.seed;
    if (!a.out.empty()) opt.output_dir = a.out;
    opt.log_interval = a.log_interval;
    cwb::apply_overrides(cfg, opt);
    return cfg;
}

fs::path out_dir(const cwb::ExperimentConfig& cfg) {
    fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    return dir;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p);
    if (!f) throw cwb::IoError("cannot write " + p.string());
    return f;
}

void print_fit(const cwb::TrialEvaluation& ev) {
    if (!ev.fit) return;
    std::cout << "fitted mean: " << ev.fit->mean.transpose() << "\nfitted covariance:\n" << ev.fit->covariance << '\n';
}

int cmd_run(const Args& a) {
    cwb::ExperimentConfig cfg = load(a);
    cwb::RunOptions opt;
    opt.progress = &std::cerr;
    const auto res = cwb::run_experiment(cfg, opt);
    res.report.write_summary(std::cout);
    std::cout << "artifacts in " << res.output_dir.string() << '\n';
    return 0;
}

int cmd_solve(const Args& a) {
    const cwb::ExperimentConfig cfg = load(a);
    const fs::path dir = out_dir(cfg);
    const auto inst = cwb::build_problem(cfg, cfg.seed);
    cwb::SolveOptions so;
    so.log_path = dir / "training_log.csv";
    so.checkpoint_path = a.checkpoint.empty() ? dir / "checkpoint.json" : fs::path(a.checkpoint);
    so.on_log = [](const cwb::LogRecord& r) { std::cerr << "step " << r.step << " ema_objective " << r.ema_objective << '\n'; };
    const auto sp = cwb::solve_trial(cfg, inst, cfg.seed, so);
    std::cout << "solved " << sp.state.step << " steps, ema objective " << sp.state.ema_objective << "\ncheckpoint "
              << so.checkpoint_path->string() << '\n';
    return 0;
}

// Rebuilds the problem for the checkpoint's seed and recovers from it.
std::pair<cwb::SolvedProblem, cwb::RecoveryOutput> recover_from(const cwb::ExperimentConfig& cfg, const Args& a,
                                                                 cwb::ProblemInstance& inst) {
    if (a.checkpoint.empty()) throw cwb::ConfigError("--checkpoint is required");
    cwb::SolvedProblem sp = cwb::read_checkpoint(a.checkpoint);
    inst = cwb::build_problem(cfg, sp.seed);
    auto rec = cwb::recover_trial(cfg, inst, sp);
    for (const auto& w : rec.warnings) std::cerr << "warning: " << w << '\n';
    return {std::move(sp), std::move(rec)};
}

void write_recovery(const fs::path& dir, const cwb::RecoveryOutput& rec, const std::string& header) {
    auto f = open_out(dir / "samples.csv");
    cwb::write_samples_csv(f, rec.samples, {header});
    if (rec.grid) {
        auto g = open_out(dir / "grid.csv");
        cwb::write_grid_csv(g, *rec.grid, {header});
    }
}

int cmd_recover(const Args& a) {
    const cwb::ExperimentConfig cfg = load(a);
    const fs::path dir = out_dir(cfg);
    cwb::ProblemInstance inst;
    const auto [sp, rec] = recover_from(cfg, a, inst);
    write_recovery(dir, rec, cwb::artifact_header(cwb::config_hash(cfg.raw), sp.seed));
    std::cout << "wrote " << rec.samples.points.cols() << " " << cwb::to_string(rec.samples.method) << " samples to "
              << (dir / "samples.csv").string() << '\n';
    return 0;
}

int cmd_eval(const Args& a) {
    const cwb::ExperimentConfig cfg = load(a);
    const fs::path dir = out_dir(cfg);
    cwb::ProblemInstance inst;
    const auto [sp, rec] = recover_from(cfg, a, inst);
    const std::string header = cwb::artifact_header(cwb::config_hash(cfg.raw), sp.seed);
    write_recovery(dir, rec, header);
    const auto oracle = cwb::compute_oracle(cfg, inst);
    auto ev = cwb::evaluate_trial(cfg, oracle, rec, sp.seed);
    if (sp.state.step == 0) ev.record.flags.push_back("checkpoint holds untrained potentials (0 steps)");
    cwb::EvalReport report;
    report.records.push_back(ev.record);
    {
        auto f = open_out(dir / "eval.csv");
        report.write_csv(f, {header});
    }
    if (!ev.w2_curve.empty()) {
        auto f = open_out(dir / "w2_curve.csv");
        cwb::write_w2_curve_csv(f, ev.w2_curve, header);
    }
    report.write_summary(std::cout);
    print_fit(ev);
    return 0;
}

int cmd_oracle(const Args& a) {
    const cwb::ExperimentConfig cfg = load(a);
    const fs::path dir = out_dir(cfg);
    const auto inst = cwb::build_problem(cfg, cfg.seed);
    const auto oracle = cwb::compute_oracle(cfg, inst);
    auto f = open_out(dir / "oracle.json");
    cwb::write_oracle_json(f, oracle, cwb::artifact_header(cwb::config_hash(cfg.raw), cfg.seed));
    std::cout << "oracle: " << oracle.kind << '\n';
    if (oracle.params) std::cout << "mean: " << oracle.params->mean.transpose() << "\ncovariance:\n" << oracle.params->covariance << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    cwb::tune_allocator();
    cwb::configure_threads();

    CLI::App app{"Continuous regularized Wasserstein barycenters"};
    app.require_subcommand(1);
    Args args;
    auto add_common = [&](CLI::App* sub, bool needs_checkpoint) {
        sub->add_option("--config", args.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", args.seed, "override the config seed");
        sub->add_option("--out", args.out, "output directory (overrides the config)");
        auto* ck = sub->add_option("--checkpoint", args.checkpoint, needs_checkpoint ? "checkpoint to recover from" : "where to write the checkpoint");
        if (needs_checkpoint) ck->required()->check(CLI::ExistingFile);
        sub->add_option("--log-interval", args.log_interval, "solver steps between log records");
    };
    auto* run = app.add_subcommand("run", "solve, recover and evaluate every trial");
    auto* solve = app.add_subcommand("solve", "train the dual potentials and write a checkpoint");
    auto* recover = app.add_subcommand("recover", "sample the barycenter from a checkpoint");
    auto* eval = app.add_subcommand("eval", "recover from a checkpoint and compare with the oracle");
    auto* oracle = app.add_subcommand("oracle", "compute the reference barycenter for the config");
    add_common(run, false);
    add_common(solve, false);
    add_common(recover, true);
    add_common(eval, true);
    add_common(oracle, false);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run) return cmd_run(args);
        if (*solve) return cmd_solve(args);
        if (*recover) return cmd_recover(args);
        if (*eval) return cmd_eval(args);
        if (*oracle) return cmd_oracle(args);
    } catch (const cwb::Error& e) {
        std::cerr << "cwbary: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "cwbary: unexpected failure: " << e.what() << '\n';
        return 3;
    }
    return 1;
}
