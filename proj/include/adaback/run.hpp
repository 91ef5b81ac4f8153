#pragma once

// End-to-end training runs: SFT warm-up, RL iterations with periodic held-out
// evaluation, metrics CSV, checkpoints, exact resume, and the final report.

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaback/config.hpp"
#include "adaback/curriculum.hpp"
#include "adaback/io.hpp"
#include "adaback/parity_env.hpp"
#include "adaback/policy.hpp"
#include "adaback/trainer.hpp"

namespace adaback {

namespace fs = std::filesystem;

inline constexpr const char* kMetricsHeader =
    "iter,mode,train_mean_reward,test_reward,test_accuracy,mean_rho,mean_rho_min,mean_rho_max,frac_graduated,"
    "wallclock_s";

inline std::string metrics_csv_row(const MetricsRecord& r) {
  std::ostringstream os;
  os << r.iter << ',' << to_string(r.mode) << ',' << format_double(r.train_mean_reward) << ','
     << format_optional(r.test_reward) << ',' << format_optional(r.test_accuracy) << ',' << format_double(r.mean_rho)
     << ',' << format_optional(r.mean_rho_min) << ',' << format_optional(r.mean_rho_max) << ','
     << format_optional(r.frac_graduated) << ',' << format_double(r.wallclock_s);
  return os.str();
}

inline MetricsRecord parse_metrics_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) f.push_back(cell);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  if (f.size() != 10) throw FormatError("metrics row has " + std::to_string(f.size()) + " fields: " + line);
  auto opt = [](const std::string& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
  };
  MetricsRecord r;
  r.iter = std::stoull(f[0]);
  r.mode = parse_train_mode(f[1]);
  r.train_mean_reward = std::stod(f[2]);
  r.test_reward = opt(f[3]);
  r.test_accuracy = opt(f[4]);
  r.mean_rho = std::stod(f[5]);
  r.mean_rho_min = opt(f[6]);
  r.mean_rho_max = opt(f[7]);
  r.frac_graduated = opt(f[8]);
  r.wallclock_s = std::stod(f[9]);
  return r;
}

inline std::vector<MetricsRecord> load_metrics_csv(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != kMetricsHeader) throw FormatError(path.string() + ": missing metrics header");
  std::vector<MetricsRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i)
    if (!lines[i].empty()) out.push_back(parse_metrics_row(lines[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Reporting

struct FinalReport {
  double test_reward = 0.0;
  double test_accuracy = 0.0;
  std::string mode;  // "last_k" or "increasing_fallback"
  std::size_t window = 0;
  std::vector<std::size_t> iters;  // evaluation iterations averaged
};

/// Mean over the last k evaluations. When the run deteriorated at the end
/// (the final evaluation's reward is below the first one in that window), the
/// mean is taken instead over the last k evaluations whose reward increased
/// over the preceding evaluation.
inline FinalReport final_report(const std::vector<MetricsRecord>& metrics, std::size_t k) {
  std::vector<const MetricsRecord*> evals;
  for (const auto& m : metrics)
    if (m.test_reward) evals.push_back(&m);
  FinalReport rep;
  rep.window = k;
  if (evals.empty()) {
    rep.mode = "none";
    return rep;
  }
  const std::size_t w = std::min(k, evals.size());
  std::vector<const MetricsRecord*> chosen(evals.end() - static_cast<std::ptrdiff_t>(w), evals.end());
  rep.mode = "last_k";
  if (*evals.back()->test_reward < *chosen.front()->test_reward) {
    std::vector<const MetricsRecord*> increasing;
    for (std::size_t i = 1; i < evals.size(); ++i)
      if (*evals[i]->test_reward > *evals[i - 1]->test_reward) increasing.push_back(evals[i]);
    if (!increasing.empty()) {
      const std::size_t wi = std::min(k, increasing.size());
      chosen.assign(increasing.end() - static_cast<std::ptrdiff_t>(wi), increasing.end());
      rep.mode = "increasing_fallback";
    }
  }
  for (const auto* m : chosen) {
    rep.test_reward += *m->test_reward;
    rep.test_accuracy += m->test_accuracy.value_or(0.0);
    rep.iters.push_back(m->iter);
  }
  rep.test_reward /= static_cast<double>(chosen.size());
  rep.test_accuracy /= static_cast<double>(chosen.size());
  return rep;
}

/// First evaluated iteration whose test reward (or accuracy) reaches the threshold.
inline std::optional<std::size_t> first_iter_reaching(const std::vector<MetricsRecord>& metrics, double threshold,
                                                      bool use_accuracy = false) {
  for (const auto& m : metrics) {
    const auto& v = use_accuracy ? m.test_accuracy : m.test_reward;
    if (v && *v >= threshold) return m.iter;
  }
  return std::nullopt;
}

inline json to_json(const FinalReport& r) {
  return json{{"test_reward", r.test_reward},
              {"test_accuracy", r.test_accuracy},
              {"report_mode", r.mode},
              {"window", r.window},
              {"evaluation_iters", r.iters}};
}

// ---------------------------------------------------------------------------
// Checkpoints

struct TrainOutcome {
  std::vector<double> sft_loss;
  std::optional<GreedyEval> sft_eval;
  std::vector<MetricsRecord> metrics;
  FinalReport report;
  bool resumed = false;
  std::size_t resumed_from = 0;
};

inline void save_checkpoint(const RlState& s, const RunConfig& cfg, const fs::path& dir) {
  const fs::path tmp = dir.string() + ".tmp";
  const fs::path old = dir.string() + ".old";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  save_params(s.params, tmp / "params.bin");
  save_optimizer(s.optimizer, tmp / "optimizer.bin");
  save_scheduler(s.scheduler, tmp / "scheduler.jsonl");
  save_config(cfg, tmp / "config.json");
  {
    std::ofstream os(tmp / "trainer_state.json");
    os << json{{"iter", s.iter}}.dump() << '\n';
    if (!os) throw std::runtime_error("write failed for " + (tmp / "trainer_state.json").string());
  }
  fs::remove_all(old);
  if (fs::exists(dir)) fs::rename(dir, old);
  fs::rename(tmp, dir);
  fs::remove_all(old);
}

inline RlState load_checkpoint(const fs::path& dir, const RunConfig& cfg) {
  const fs::path src = fs::exists(dir / "trainer_state.json") ? dir : fs::path(dir.string() + ".old");
  if (!fs::exists(src / "trainer_state.json")) throw std::runtime_error("no checkpoint found in " + dir.string());
  std::ifstream is(src / "trainer_state.json");
  const auto state = json::parse(is);
  auto params = load_params(src / "params.bin", cfg.dims());
  auto opt = load_optimizer(src / "optimizer.bin", params.values().size());
  auto sched = load_scheduler(src / "scheduler.jsonl");
  if (sched.size() != cfg.env.n) throw std::runtime_error("checkpoint scheduler size does not match env.n");
  return RlState{std::move(params), std::move(opt), std::move(sched), state.at("iter").get<std::size_t>()};
}

/// Keys that may differ between a checkpoint's config and a resumed run's.
inline json resume_comparable(json j) {
  j.erase("output_dir");
  j.erase("workers");
  j["trainer"].erase("iterations");
  return j;
}

namespace detail {

inline void write_diagnostics(const fs::path& path, const TrainingDivergedError& e) {
  std::ofstream os(path);
  os << json{{"error", e.what()}}.dump() << '\n';
  for (const auto& g : e.groups) {
    json gen = json::array();
    for (const auto& s : g.generated) gen.push_back(to_string(s));
    os << json{{"sample_id", g.sample_id},
               {"rho", g.rho},
               {"prefix", to_string(g.prefix)},
               {"generated", gen},
               {"rewards", g.rewards},
               {"advantages", g.advantages},
               {"mean_reward", g.mean_reward}}
              .dump()
       << '\n';
  }
}

}  // namespace detail

inline std::vector<ParitySample> run_dataset(const RunConfig& cfg) {
  if (cfg.env.dataset.empty()) return make_dataset(cfg.env.n, cfg.env.L, cfg.data_seed());
  auto data = load_parity_dataset(cfg.env.dataset);
  if (data.size() != cfg.env.n || data.front().instance.length() != cfg.env.L)
    throw ConfigError("config keys 'env.n'/'env.L' do not match dataset " + cfg.env.dataset);
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i].id != i) throw ConfigError("dataset " + cfg.env.dataset + " ids must be 0..n-1 in order");
  return data;
}

/// Initial policy: loaded from init_checkpoint, or initialised and warmed up
/// with sft_epochs of supervised training. Writes sft_metrics.csv and sft_params.bin.
inline PolicyParams initial_policy(const RunConfig& cfg, std::span<const ParitySample> data,
                                   std::span<const ParitySample> test, const fs::path& out, TrainOutcome& outcome,
                                   std::ostream* log) {
  if (!cfg.init_checkpoint.empty()) return load_params(cfg.init_checkpoint, cfg.dims());
  PolicyParams params = init_params(cfg.dims(), cfg.seed);
  const auto t = cfg.resolved_trainer();
  if (t.sft_epochs == 0) return params;
  std::ofstream csv(out / "sft_metrics.csv");
  csv << "epoch,loss,test_reward,test_accuracy,format_rate\n";
  const auto res = sft_train(params, data, t.sft_epochs, t.sft_lr, t.sft_batch_size, cfg.seed);
  outcome.sft_loss = res.epoch_loss;
  const auto ev = evaluate_greedy(params, test, t.answer_cap(cfg.env.L), t.workers, cfg.reward);
  outcome.sft_eval = ev;
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
    csv << e + 1 << ',' << format_double(res.epoch_loss[e]);
    if (e + 1 == res.epoch_loss.size())
      csv << ',' << format_double(ev.mean_reward) << ',' << format_double(ev.accuracy) << ','
          << format_double(ev.format_rate);
    else
      csv << ",,,";
    csv << '\n';
  }
  save_params(params, out / "sft_params.bin");
  if (log)
    *log << "sft: " << t.sft_epochs << " epochs, loss " << res.epoch_loss.back() << ", test reward " << ev.mean_reward
         << ", accuracy " << ev.accuracy << ", format " << ev.format_rate << '\n';
  return params;
}

/// Runs SFT (optional) and the RL phase, writing into `out`:
/// config.json, sft_metrics.csv, sft_params.bin, metrics.csv, checkpoint/,
/// scheduler_snapshots/ (adaback), final_report.json. With `resume`, continues
/// from out/checkpoint and reproduces the uninterrupted run exactly.
/// `stop_after` (testing aid) stops once that many iterations have completed.
inline TrainOutcome train_run(const RunConfig& cfg, const fs::path& out, bool resume = false,
                              std::ostream* log = nullptr, std::optional<std::size_t> stop_after = std::nullopt) {
  cfg.validate();
  const auto t = cfg.resolved_trainer();
  const auto data = run_dataset(cfg);
  const auto test = make_eval_set(t.eval_set_size, cfg.env.L, cfg.seed);
  fs::create_directories(out);
  const fs::path ckpt = out / "checkpoint";
  const fs::path metrics_path = out / "metrics.csv";
  TrainOutcome outcome;

  std::optional<RlState> state;
  if (resume && (fs::exists(ckpt / "trainer_state.json") || fs::exists(out / "checkpoint.old" / "trainer_state.json"))) {
    const auto echoed = read_json_file(out / "config.json");
    if (resume_comparable(echoed) != resume_comparable(to_json(cfg)))
      throw ConfigError("resume: configuration differs from the run in " + out.string());
    state = load_checkpoint(ckpt, cfg);
    outcome.resumed = true;
    outcome.resumed_from = state->iter;
    std::vector<MetricsRecord> kept;
    for (auto& m : load_metrics_csv(metrics_path))
      if (m.iter <= state->iter) kept.push_back(m);
    outcome.metrics = kept;
    std::ofstream csv(metrics_path, std::ios::trunc);
    csv << kMetricsHeader << '\n';
    for (const auto& m : kept) csv << metrics_csv_row(m) << '\n';
    if (log) *log << "resuming from iteration " << state->iter << '\n';
  } else {
    save_config(cfg, out / "config.json");
    auto params = initial_policy(cfg, data, test, out, outcome, log);
    auto opt = OptimizerState::make(t.optimizer, params.values().size());
    state = RlState{std::move(params), std::move(opt), Scheduler(data.size(), cfg.curriculum), 0};
    std::ofstream csv(metrics_path, std::ios::trunc);
    csv << kMetricsHeader << '\n';
  }

  std::ofstream csv(metrics_path, std::ios::app);
  const bool snapshots = t.mode == TrainMode::AdaBack;
  if (snapshots) fs::create_directories(out / "scheduler_snapshots");
  const auto start = std::chrono::steady_clock::now();
  const double wall_offset = outcome.metrics.empty() ? 0.0 : outcome.metrics.back().wallclock_s;
  const std::size_t cap = t.answer_cap(cfg.env.L);
  while (state->iter < t.iterations) {
    if (stop_after && state->iter >= *stop_after) break;
    MetricsRecord rec;
    try {
      rec = rl_iteration(*state, data, t, cfg.reward);
    } catch (const TrainingDivergedError& e) {
      detail::write_diagnostics(out / ("diagnostics_iter" + std::to_string(state->iter + 1) + ".jsonl"), e);
      throw;
    }
    if (rec.iter % t.eval_interval == 0 || rec.iter == t.iterations) {
      const auto ev = evaluate_greedy(state->params, test, cap, t.workers, cfg.reward);
      rec.test_reward = ev.mean_reward;
      rec.test_accuracy = ev.accuracy;
      if (log)
        *log << to_string(t.mode) << " iter " << rec.iter << ": train " << rec.train_mean_reward << ", test reward "
             << ev.mean_reward << ", accuracy " << ev.accuracy << ", mean rho " << rec.mean_rho << '\n';
    }
    if (cfg.record_wallclock)
      rec.wallclock_s =
          wall_offset + std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    csv << metrics_csv_row(rec) << '\n' << std::flush;
    outcome.metrics.push_back(rec);
    if (rec.iter % cfg.checkpoint_interval == 0 || rec.iter == t.iterations) {
      save_checkpoint(*state, cfg, ckpt);
      if (snapshots)
        save_scheduler(state->scheduler,
                       out / "scheduler_snapshots" / ("scheduler_" + std::to_string(rec.iter) + ".jsonl"));
    }
  }
  outcome.report = final_report(outcome.metrics, cfg.report_last_k);
  if (state->iter >= t.iterations) {
    std::ofstream os(out / "final_report.json");
    os << to_json(outcome.report).dump(2) << '\n';
    if (log)
      *log << "final (" << outcome.report.mode << "): test reward " << outcome.report.test_reward << ", accuracy "
           << outcome.report.test_accuracy << '\n';
  }
  return outcome;
}

}  // namespace adaback
