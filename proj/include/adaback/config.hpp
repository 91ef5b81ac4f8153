#pragma once

// Run configuration: one JSON document covering every module, with strict key
// checking, "a.b=value" overrides, and a fully resolved echo.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "adaback/curriculum.hpp"
#include "adaback/io.hpp"
#include "adaback/parity_env.hpp"
#include "adaback/policy.hpp"
#include "adaback/trainer.hpp"

namespace adaback {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EnvConfig {
  std::size_t L = 8;
  std::size_t n = 1024;
  std::string dataset;  // JSONL path; empty means generate from dataset_seed
  std::optional<std::uint64_t> dataset_seed;  // defaults to the run seed
};

struct EvalConfig {
  std::size_t n_rollouts = 16;
  double temperature = 1.0;
  std::vector<std::size_t> k_list{1, 2, 4, 8};
  std::string checkpoint;  // params.bin to evaluate
};

struct SimConfig {
  std::size_t n_steps = 16;
  double p = 0.5;
  std::uint32_t m_credit = 3;
  std::size_t group_size = 8;
  std::size_t iterations = 2000;
  std::string schedule = "adaback";  // adaback | plain
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::size_t workers = 0;  // 0: all hardware threads
  bool record_wallclock = false;
  std::size_t checkpoint_interval = 500;
  std::size_t report_last_k = 5;
  std::string init_checkpoint;  // params.bin to start RL from instead of init + SFT
  EnvConfig env;
  std::size_t hidden = 128;
  RewardSpec reward;
  CurriculumConfig curriculum;
  TrainerConfig trainer;
  EvalConfig eval;
  SimConfig sim;

  PolicyDims dims() const { return {env.L, hidden, kVocabSize}; }
  std::uint64_t data_seed() const { return env.dataset_seed.value_or(seed); }

  /// Trainer settings with the run-level seed and worker count applied.
  TrainerConfig resolved_trainer() const {
    TrainerConfig t = trainer;
    t.seed = seed;
    t.workers = workers == 0 ? default_workers() : workers;
    return t;
  }

  void validate() const {
    auto fail = [](const std::string& key, const std::string& msg) { throw ConfigError("config key '" + key + "' " + msg); };
    if (env.L < 1) fail("env.L", "must be >= 1");
    if (env.n < 1) fail("env.n", "must be >= 1");
    if (hidden < 1) fail("policy.hidden", "must be >= 1");
    if (checkpoint_interval < 1) fail("checkpoint_interval", "must be >= 1");
    if (report_last_k < 1) fail("report_last_k", "must be >= 1");
    if (!(reward.format_reward >= 0.0 && reward.format_reward < reward.full_reward))
      fail("reward.format_reward", "must satisfy 0 <= format_reward < full_reward");
    auto rethrow = [&](const std::string& prefix, auto&& check) {
      try {
        check();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(prefix + ": " + e.what());
      }
    };
    rethrow("curriculum", [&] { curriculum.validate(); });
    rethrow("trainer", [&] { trainer.validate(); });
    if (eval.n_rollouts < 1) fail("eval.n_rollouts", "must be >= 1");
    if (!(eval.temperature > 0.0)) fail("eval.temperature", "must be > 0");
    for (auto k : eval.k_list)
      if (k < 1 || k > eval.n_rollouts) fail("eval.k_list", "entries must lie in [1, eval.n_rollouts]");
    if (sim.n_steps < 1) fail("sim.n_steps", "must be >= 1");
    if (!(sim.p > 0.0 && sim.p <= 1.0)) fail("sim.p", "must lie in (0, 1]");
    if (sim.m_credit < 1) fail("sim.m_credit", "must be >= 1");
    if (sim.group_size < 1) fail("sim.group_size", "must be >= 1");
    if (sim.iterations < 1) fail("sim.iterations", "must be >= 1");
    if (sim.schedule != "adaback" && sim.schedule != "plain") fail("sim.schedule", "must be adaback or plain");
  }
};

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected adam|sgd)");
}

inline json to_json(const RunConfig& c) {
  const auto& t = c.trainer;
  return json{
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"workers", c.workers},
      {"record_wallclock", c.record_wallclock},
      {"checkpoint_interval", c.checkpoint_interval},
      {"report_last_k", c.report_last_k},
      {"init_checkpoint", c.init_checkpoint},
      {"env",
       {{"L", c.env.L},
        {"n", c.env.n},
        {"dataset", c.env.dataset},
        {"dataset_seed", c.env.dataset_seed ? json(*c.env.dataset_seed) : json(nullptr)}}},
      {"policy", {{"hidden", c.hidden}}},
      {"reward",
       {{"full_reward", c.reward.full_reward},
        {"format_reward", c.reward.format_reward},
        {"invalid_reward", c.reward.invalid_reward}}},
      {"curriculum", to_json(c.curriculum)},
      {"trainer",
       {{"group_size", t.group_size},
        {"batch_size", t.batch_size},
        {"max_gen_len", t.max_gen_len},
        {"mode", to_string(t.mode)},
        {"rl_lr", t.rl_lr},
        {"sft_lr", t.sft_lr},
        {"sft_epochs", t.sft_epochs},
        {"sft_batch_size", t.sft_batch_size},
        {"iterations", t.iterations},
        {"eval_interval", t.eval_interval},
        {"eval_set_size", t.eval_set_size},
        {"temperature", t.temperature},
        {"advantage_norm", to_string(t.advantage_norm)},
        {"r3_segments", t.r3_segments},
        {"optimizer", to_string(t.optimizer)}}},
      {"eval",
       {{"n_rollouts", c.eval.n_rollouts},
        {"temperature", c.eval.temperature},
        {"k_list", c.eval.k_list},
        {"checkpoint", c.eval.checkpoint}}},
      {"sim",
       {{"n_steps", c.sim.n_steps},
        {"p", c.sim.p},
        {"m_credit", c.sim.m_credit},
        {"group_size", c.sim.group_size},
        {"iterations", c.sim.iterations},
        {"schedule", c.sim.schedule}}},
  };
}

namespace detail {

/// Reads keys of `j` into fields, rejecting unknown keys and wrong types with
/// the dotted key path in the message.
class ConfigReader {
 public:
  ConfigReader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError("config key '" + display() + "' must be an object");
    for (const auto& [k, _] : j_.items()) keys_.push_back(k);
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    consumed_.push_back(key);
    const auto& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("must be a boolean");
        out = v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
          throw std::invalid_argument("must be a non-negative integer");
        out = v.get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("must be a number");
        out = v.get<T>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("must be a string");
        out = v.get<std::string>();
      } else {
        out = v.get<T>();
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("config key '" + path(key) + "' " + e.what());
    }
  }

  template <class Parse, class T>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (!j_.contains(key)) return;
    try {
      out = parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("config key '" + path(key) + "': " + e.what());
    }
  }

  template <class Fn>
  void section(const char* key, Fn&& fn) {
    if (!j_.contains(key)) return;
    consumed_.push_back(key);
    ConfigReader sub(j_.at(key), path(key));
    fn(sub);
    sub.finish();
  }

  const json& raw() const { return j_; }
  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
  void consume(const char* key) { consumed_.push_back(key); }

  void finish() const {
    for (const auto& k : keys_)
      if (std::find(consumed_.begin(), consumed_.end(), k) == consumed_.end())
        throw ConfigError("unknown config key '" + path(k) + "'");
  }

 private:
  std::string display() const { return prefix_.empty() ? "<root>" : prefix_; }
  const json& j_;
  std::string prefix_;
  std::vector<std::string> keys_;
  std::vector<std::string> consumed_;
};

}  // namespace detail

/// Overlays `j` on the defaults. Missing keys keep their default values.
inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  detail::ConfigReader r(j, "");
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.get("workers", c.workers);
  r.get("record_wallclock", c.record_wallclock);
  r.get("checkpoint_interval", c.checkpoint_interval);
  r.get("report_last_k", c.report_last_k);
  r.get("init_checkpoint", c.init_checkpoint);
  r.section("env", [&](detail::ConfigReader& s) {
    s.get("L", c.env.L);
    s.get("n", c.env.n);
    s.get("dataset", c.env.dataset);
    if (s.raw().contains("dataset_seed") && s.raw().at("dataset_seed").is_null()) {
      s.consume("dataset_seed");
      c.env.dataset_seed.reset();
    } else if (s.raw().contains("dataset_seed")) {
      std::uint64_t v = 0;
      s.get("dataset_seed", v);
      c.env.dataset_seed = v;
    }
  });
  r.section("policy", [&](detail::ConfigReader& s) { s.get("hidden", c.hidden); });
  r.section("reward", [&](detail::ConfigReader& s) {
    s.get("full_reward", c.reward.full_reward);
    s.get("format_reward", c.reward.format_reward);
    s.get("invalid_reward", c.reward.invalid_reward);
  });
  r.section("curriculum", [&](detail::ConfigReader& s) {
    s.get("tau", c.curriculum.tau);
    s.get("alpha", c.curriculum.alpha);
    s.get("zero_inject_prob", c.curriculum.zero_inject_prob);
    s.get("initial_min", c.curriculum.initial_min);
    s.get("initial_max", c.curriculum.initial_max);
  });
  r.section("trainer", [&](detail::ConfigReader& s) {
    auto& t = c.trainer;
    s.get("group_size", t.group_size);
    s.get("batch_size", t.batch_size);
    s.get("max_gen_len", t.max_gen_len);
    s.get_enum("mode", t.mode, parse_train_mode);
    s.get("rl_lr", t.rl_lr);
    s.get("sft_lr", t.sft_lr);
    s.get("sft_epochs", t.sft_epochs);
    s.get("sft_batch_size", t.sft_batch_size);
    s.get("iterations", t.iterations);
    s.get("eval_interval", t.eval_interval);
    s.get("eval_set_size", t.eval_set_size);
    s.get("temperature", t.temperature);
    s.get_enum("advantage_norm", t.advantage_norm, parse_advantage_norm);
    s.get("r3_segments", t.r3_segments);
    s.get_enum("optimizer", t.optimizer, parse_optimizer_kind);
  });
  r.section("eval", [&](detail::ConfigReader& s) {
    s.get("n_rollouts", c.eval.n_rollouts);
    s.get("temperature", c.eval.temperature);
    if (s.raw().contains("k_list")) {
      const auto& v = s.raw().at("k_list");
      s.consume("k_list");
      if (!v.is_array()) throw ConfigError("config key 'eval.k_list' must be an array of positive integers");
      c.eval.k_list.clear();
      for (const auto& e : v) {
        if (!e.is_number_unsigned() || e.get<std::size_t>() == 0)
          throw ConfigError("config key 'eval.k_list' must be an array of positive integers");
        c.eval.k_list.push_back(e.get<std::size_t>());
      }
    }
    s.get("checkpoint", c.eval.checkpoint);
  });
  r.section("sim", [&](detail::ConfigReader& s) {
    s.get("n_steps", c.sim.n_steps);
    s.get("p", c.sim.p);
    s.get("m_credit", c.sim.m_credit);
    s.get("group_size", c.sim.group_size);
    s.get("iterations", c.sim.iterations);
    s.get("schedule", c.sim.schedule);
  });
  r.finish();
  c.validate();
  return c;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
/// possible ("0.5", "true", "[1,2]") and taken as a string otherwise.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

inline void save_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << to_json(c).dump(2) << '\n';
}

}  // namespace adaback
