#pragma once

// Command-line front end. run_cli returns the process exit code:
// 0 success, 1 usage or configuration error, 2 runtime failure,
// 3 self-check failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adaback/analytic_sim.hpp"
#include "adaback/config.hpp"
#include "adaback/datasets.hpp"
#include "adaback/eval.hpp"
#include "adaback/io.hpp"
#include "adaback/parity_env.hpp"
#include "adaback/run.hpp"
#include "adaback/self_check.hpp"

namespace adaback {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitCheckFailed = 3;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace cli_detail {

inline std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

/// Relative output paths are placed under ADABACK_OUTPUT_ROOT when it is set.
inline fs::path output_path(const std::string& p) {
  fs::path path(p);
  if (path.is_relative())
    if (auto root = env("ADABACK_OUTPUT_ROOT")) return fs::path(*root) / path;
  return path;
}

inline void require_fresh_file(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) throw UsageError("output " + p.string() + " already exists (use --force to overwrite)");
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

inline const std::vector<std::string>& run_artifacts() {
  static const std::vector<std::string> names{
      "config.json",  "sft_metrics.csv",     "sft_params.bin",    "metrics.csv",        "checkpoint",
      "checkpoint.old", "checkpoint.tmp",    "scheduler_snapshots", "final_report.json", "tau_sweep.csv",
      "per_problem.csv", "pass_at_k.csv",    "summary.jsonl",     "sim_summary.csv"};
  return names;
}

/// A run directory may be reused only with --force (artifacts are removed) or --resume.
inline void prepare_run_dir(const fs::path& dir, bool force, bool resume) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError("output " + dir.string() + " is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !resume) {
    if (!force) throw UsageError("output directory " + dir.string() + " is not empty (use --force or --resume)");
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      const bool known = std::find(run_artifacts().begin(), run_artifacts().end(), name) != run_artifacts().end() ||
                         name.rfind("trace_seed", 0) == 0 || name.rfind("tau_", 0) == 0 ||
                         name.rfind("diagnostics_iter", 0) == 0;
      if (known) fs::remove_all(entry.path());
    }
  }
  fs::create_directories(dir);
}

struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  bool force = false;
};

inline void add_config_options(CLI::App* cmd, ConfigOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON config file (defaults are used for missing keys)");
  cmd->add_option("--set", o.overrides, "Override a config key, e.g. --set trainer.rl_lr=0.01 (repeatable)");
  cmd->add_option("--seed", o.seed, "Run seed (config key: seed)");
  cmd->add_option("-o,--out", o.out, "Output directory (config key: output_dir)");
  cmd->add_option("-j,--workers", o.workers, "Worker threads; 0 uses all cores (env: ADABACK_WORKERS)");
  cmd->add_flag("--force", o.force, "Overwrite existing output");
}

/// Defaults <- config file <- --set overrides <- dedicated flags <- environment
/// (workers only, when no flag or key sets it).
inline RunConfig resolve_config(const ConfigOptions& o, const std::vector<std::string>& extra_overrides = {}) {
  json doc = o.config_path.empty() ? json::object() : read_json_file(o.config_path);
  for (const auto& s : o.overrides) apply_override(doc, s);
  for (const auto& s : extra_overrides) apply_override(doc, s);
  if (o.seed) doc["seed"] = *o.seed;
  if (o.out) doc["output_dir"] = *o.out;
  if (o.workers) {
    doc["workers"] = *o.workers;
  } else if (!doc.contains("workers")) {
    if (auto w = env("ADABACK_WORKERS")) {
      try {
        doc["workers"] = std::stoull(*w);
      } catch (const std::exception&) {
        throw UsageError("ADABACK_WORKERS must be a non-negative integer, got '" + *w + "'");
      }
    }
  }
  return run_config_from_json(doc);
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"AdaBack: adaptive backtracking curriculum for sparse-reward RL on chain-of-parities"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // gen-parity
  std::size_t gp_L = 8, gp_n = 1024;
  std::uint64_t gp_seed = 0;
  std::string gp_out;
  bool gp_force = false;
  auto* gen = app.add_subcommand("gen-parity", "Write a chain-of-parities dataset as JSONL");
  gen->add_option("-L,--L", gp_L, "Input length L")->check(CLI::PositiveNumber);
  gen->add_option("-n,--n", gp_n, "Number of instances")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gp_seed, "Dataset seed");
  gen->add_option("-o,--out", gp_out, "Output JSONL file")->required();
  gen->add_flag("--force", gp_force, "Overwrite an existing file");

  // transform
  std::string tr_kind, tr_in, tr_out;
  std::uint64_t tr_seed = 0;
  bool tr_force = false, tr_skip = false;
  auto* transform = app.add_subcommand("transform", "Apply the base7 or tensor2 transform to QA JSONL");
  transform->add_option("kind", tr_kind, "base7 | tensor2")->required()->check(CLI::IsMember({"base7", "tensor2"}));
  transform->add_option("-i,--in", tr_in, "Input JSONL")->required();
  transform->add_option("-o,--out", tr_out, "Output JSONL (a .report.json sidecar is written next to it)")->required();
  transform->add_option("--seed", tr_seed, "Pairing seed (tensor2)");
  transform->add_flag("--skip-malformed", tr_skip, "Skip malformed input lines instead of failing");
  transform->add_flag("--force", tr_force, "Overwrite existing output");

  // sft
  ConfigOptions sft_opts;
  std::optional<std::size_t> sft_epochs;
  auto* sft = app.add_subcommand("sft", "Supervised warm-up only; writes sft_params.bin and sft_metrics.csv");
  add_config_options(sft, sft_opts);
  sft->add_option("--epochs", sft_epochs, "SFT epochs (config key: trainer.sft_epochs)");

  // train
  ConfigOptions tr_opts;
  std::optional<std::string> train_mode;
  std::optional<std::size_t> train_iters;
  std::optional<std::string> init_ckpt;
  std::string tau_sweep;
  bool resume = false;
  auto* train = app.add_subcommand("train", "SFT (optional) then RL; writes metrics.csv, checkpoints, snapshots");
  add_config_options(train, tr_opts);
  train->add_option("--mode", train_mode, "adaback | plain | r3 (config key: trainer.mode)")
      ->check(CLI::IsMember({"adaback", "plain", "r3"}));
  train->add_option("--iterations", train_iters, "RL iterations (config key: trainer.iterations)");
  train->add_option("--init-checkpoint", init_ckpt, "Start RL from this params.bin instead of init + SFT");
  train->add_option("--tau-sweep", tau_sweep, "Comma-separated tau values; one run per value under <out>/tau_<v>");
  train->add_flag("--resume", resume, "Continue from <out>/checkpoint");

  // eval
  ConfigOptions ev_opts;
  std::optional<std::string> ev_ckpt, ev_k;
  std::optional<std::size_t> ev_rollouts, ev_test_size;
  std::optional<double> ev_temp;
  auto* evalc = app.add_subcommand("eval", "pass@k and greedy accuracy of a checkpoint on held-out instances");
  add_config_options(evalc, ev_opts);
  evalc->add_option("--checkpoint", ev_ckpt, "params.bin to evaluate (config key: eval.checkpoint)");
  evalc->add_option("--pass-at-k", ev_k, "Comma-separated k values (config key: eval.k_list)");
  evalc->add_option("--n-rollouts", ev_rollouts, "Samples per problem (config key: eval.n_rollouts)");
  evalc->add_option("--temperature", ev_temp, "Sampling temperature (config key: eval.temperature)");
  evalc->add_option("--test-size", ev_test_size, "Held-out instances (config key: trainer.eval_set_size)");

  // simulate
  ConfigOptions sim_opts;
  std::optional<std::string> sim_schedule;
  std::size_t sim_seeds = 1;
  auto* simulate = app.add_subcommand("simulate", "Ideal-learner simulation; writes per-seed trace CSVs");
  add_config_options(simulate, sim_opts);
  simulate->add_option("--schedule", sim_schedule, "adaback | plain (config key: sim.schedule)")
      ->check(CLI::IsMember({"adaback", "plain"}));
  simulate->add_option("--seeds", sim_seeds, "Number of consecutive seeds starting at --seed")
      ->check(CLI::PositiveNumber);

  auto* self_check = app.add_subcommand("self-check", "Run the built-in invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::ostringstream os, es;
    const int code = app.exit(e, os, es);
    out << os.str();
    err << es.str();
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      const auto path = output_path(gp_out);
      require_fresh_file(path, gp_force);
      const auto data = make_dataset(gp_n, gp_L, gp_seed);
      save_parity_dataset(data, path);
      out << "wrote " << data.size() << " instances (L=" << gp_L << ", seed=" << gp_seed << ") to " << path.string()
          << '\n';
      return kExitOk;
    }

    if (transform->parsed()) {
      const auto path = output_path(tr_out);
      const fs::path report_path = path.string() + ".report.json";
      require_fresh_file(path, tr_force);
      require_fresh_file(report_path, tr_force);
      LoadResult in;
      try {
        in = load_qa_jsonl(tr_in, tr_skip ? OnError::Skip : OnError::FailFast);
      } catch (const FormatError& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
      }
      json report;
      std::vector<QARecord> result;
      if (tr_kind == "base7") {
        Base7Report rep;
        result = base7_transform(in.records, &rep);
        report = rep.to_json();
      } else {
        if (in.records.size() < 2) throw UsageError("tensor2 needs at least 2 input records");
        Tensor2Report rep;
        result = tensor2(in.records, tr_seed, &rep);
        report = rep.to_json();
        report["seed"] = tr_seed;
      }
      report["malformed_skipped"] = in.skipped.size();
      save_qa_jsonl(result, path);
      std::ofstream(report_path) << report.dump(2) << '\n';
      out << report.dump() << '\n';
      return kExitOk;
    }

    if (sft->parsed()) {
      std::vector<std::string> extra;
      if (sft_epochs) extra.push_back("trainer.sft_epochs=" + std::to_string(*sft_epochs));
      auto cfg = resolve_config(sft_opts, extra);
      if (cfg.trainer.sft_epochs == 0) throw ConfigError("config key 'trainer.sft_epochs' must be >= 1 for sft");
      const auto dir = output_path(cfg.output_dir);
      prepare_run_dir(dir, sft_opts.force, false);
      save_config(cfg, dir / "config.json");
      const auto data = run_dataset(cfg);
      const auto test = make_eval_set(cfg.trainer.eval_set_size, cfg.env.L, cfg.seed);
      TrainOutcome outcome;
      cfg.init_checkpoint.clear();
      initial_policy(cfg, data, test, dir, outcome, &err);
      out << "sft: final loss " << outcome.sft_loss.back() << ", test reward " << outcome.sft_eval->mean_reward
          << ", format rate " << outcome.sft_eval->format_rate << "; wrote " << (dir / "sft_params.bin").string()
          << '\n';
      return kExitOk;
    }

    if (train->parsed()) {
      std::vector<std::string> extra;
      if (train_mode) extra.push_back("trainer.mode=" + *train_mode);
      if (train_iters) extra.push_back("trainer.iterations=" + std::to_string(*train_iters));
      if (init_ckpt) extra.push_back("init_checkpoint=" + json(*init_ckpt).dump());
      const auto base = resolve_config(tr_opts, extra);
      const auto dir = output_path(base.output_dir);
      if (!tau_sweep.empty()) {
        std::vector<double> taus;
        std::stringstream ss(tau_sweep);
        for (std::string item; std::getline(ss, item, ',');) {
          try {
            std::size_t used = 0;
            taus.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
          } catch (const std::exception&) {
            throw UsageError("--tau-sweep expects comma-separated numbers, got '" + tau_sweep + "'");
          }
        }
        prepare_run_dir(dir, tr_opts.force, resume);
        std::ofstream summary(dir / "tau_sweep.csv");
        summary << "tau,final_test_reward,final_test_accuracy,report_mode\n";
        for (double tau : taus) {
          auto cfg = base;
          cfg.curriculum.tau = tau;
          std::ostringstream name;
          name << "tau_" << tau;
          cfg.output_dir = (fs::path(base.output_dir) / name.str()).string();
          cfg.validate();
          const auto sub = dir / name.str();
          prepare_run_dir(sub, tr_opts.force, resume);
          const auto res = train_run(cfg, sub, resume, &err);
          summary << format_double(tau) << ',' << format_double(res.report.test_reward) << ','
                  << format_double(res.report.test_accuracy) << ',' << res.report.mode << '\n';
          out << "tau " << tau << ": final test reward " << res.report.test_reward << ", accuracy "
              << res.report.test_accuracy << " (" << res.report.mode << ")\n";
        }
        return kExitOk;
      }
      prepare_run_dir(dir, tr_opts.force, resume);
      const auto res = train_run(base, dir, resume, &err);
      out << to_string(base.trainer.mode) << ": final test reward " << res.report.test_reward << ", accuracy "
          << res.report.test_accuracy << " (" << res.report.mode << "); metrics in " << (dir / "metrics.csv").string()
          << '\n';
      return kExitOk;
    }

    if (evalc->parsed()) {
      std::vector<std::string> extra;
      if (ev_ckpt) extra.push_back("eval.checkpoint=" + json(*ev_ckpt).dump());
      if (ev_rollouts) extra.push_back("eval.n_rollouts=" + std::to_string(*ev_rollouts));
      if (ev_temp) extra.push_back("eval.temperature=" + format_double(*ev_temp));
      if (ev_test_size) extra.push_back("trainer.eval_set_size=" + std::to_string(*ev_test_size));
      if (ev_k) {
        std::vector<std::size_t> ks;
        try {
          ks = parse_k_list(*ev_k);
        } catch (const std::invalid_argument& e) {
          throw UsageError(std::string("--pass-at-k: ") + e.what());
        }
        extra.push_back("eval.k_list=" + json(ks).dump());
      }
      const auto cfg = resolve_config(ev_opts, extra);
      if (cfg.eval.checkpoint.empty()) throw UsageError("eval needs --checkpoint (or config key eval.checkpoint)");
      const auto dir = output_path(cfg.output_dir);
      prepare_run_dir(dir, ev_opts.force, false);
      save_config(cfg, dir / "config.json");
      const auto params = load_params(cfg.eval.checkpoint, cfg.dims());
      const auto test = make_eval_set(cfg.trainer.eval_set_size, cfg.env.L, cfg.seed);
      EvalOptions opt;
      opt.n_rollouts = cfg.eval.n_rollouts;
      opt.temperature = cfg.eval.temperature;
      opt.k_list = cfg.eval.k_list;
      opt.seed = cfg.seed;
      opt.workers = cfg.resolved_trainer().workers;
      opt.answer_cap = cfg.trainer.max_gen_len;
      const auto rep = eval_policy(params, test, opt, cfg.reward);
      {
        std::ofstream os(dir / "per_problem.csv");
        write_problem_counts_csv(os, rep);
      }
      {
        std::ofstream os(dir / "pass_at_k.csv");
        write_pass_at_k_csv(os, rep);
      }
      std::ofstream(dir / "summary.jsonl") << eval_summary_json(rep).dump() << '\n';
      out << eval_summary_json(rep).dump() << '\n';
      return kExitOk;
    }

    if (simulate->parsed()) {
      std::vector<std::string> extra;
      if (sim_schedule) extra.push_back("sim.schedule=" + *sim_schedule);
      const auto cfg = resolve_config(sim_opts, extra);
      const auto dir = output_path(cfg.output_dir);
      prepare_run_dir(dir, sim_opts.force, false);
      save_config(cfg, dir / "config.json");
      const auto schedule = cfg.sim.schedule == "plain" ? SimSchedule::Plain : SimSchedule::AdaBack;
      std::ofstream summary(dir / "sim_summary.csv");
      summary << "seed,schedule,final_learned_count,first_all_learned_iter,iterations_with_feedback\n";
      for (std::size_t i = 0; i < sim_seeds; ++i) {
        const std::uint64_t seed = cfg.seed + i;
        Rng rng = make_rng(seed, 0x5171);
        const auto res = simulate_run(IdealLearner::make(cfg.sim.n_steps, cfg.sim.p, cfg.sim.m_credit), cfg.curriculum,
                                      cfg.sim.group_size, cfg.sim.iterations, rng, schedule);
        std::ofstream trace(dir / ("trace_seed" + std::to_string(seed) + ".csv"));
        write_sim_trace_csv(trace, res.trace);
        std::string first;
        for (const auto& row : res.trace)
          if (row.learned_count == cfg.sim.n_steps) {
            first = std::to_string(row.iter);
            break;
          }
        summary << seed << ',' << cfg.sim.schedule << ',' << res.final_learner.learned_count() << ',' << first << ','
                << res.iterations_with_feedback << '\n';
        out << "seed " << seed << " (" << cfg.sim.schedule << "): learned " << res.final_learner.learned_count() << "/"
            << cfg.sim.n_steps << (first.empty() ? "" : " by iteration " + first) << '\n';
      }
      return kExitOk;
    }

    if (self_check->parsed()) {
      bool ok = true;
      for (const auto& r : run_self_checks()) {
        out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        ok = ok && r.passed;
      }
      return ok ? kExitOk : kExitCheckFailed;
    }
  } catch (const std::invalid_argument& e) {  // ConfigError, UsageError, bad values
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace adaback
