#pragma once

// pass@k estimation and held-out evaluation of a parity policy.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaback/io.hpp"
#include "adaback/parallel.hpp"
#include "adaback/parity_env.hpp"
#include "adaback/policy.hpp"
#include "adaback/rng.hpp"
#include "adaback/trainer.hpp"

namespace adaback {

/// Unbiased estimate of P(at least one of k draws is correct) from c correct
/// out of n: 1 - C(n-c, k) / C(n, k), evaluated as a product of ratios.
inline double pass_at_k(std::size_t n, std::size_t c, std::size_t k) {
  if (k < 1) throw std::invalid_argument("pass_at_k: k must be >= 1");
  if (k > n) throw std::invalid_argument("pass_at_k: k must not exceed n");
  if (c > n) throw std::invalid_argument("pass_at_k: c must not exceed n");
  if (n - c < k) return 1.0;
  // C(n-c,k)/C(n,k) = prod_{i=n-c+1}^{n} (1 - k/i)
  double ratio = 1.0;
  for (std::size_t i = n - c + 1; i <= n; ++i) ratio *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  return 1.0 - ratio;
}

inline std::vector<std::size_t> parse_k_list(const std::string& text) {
  std::vector<std::size_t> ks;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw std::invalid_argument("k list must be comma-separated positive integers, got '" + text + "'");
    const auto k = std::stoull(item);
    if (k == 0) throw std::invalid_argument("k list entries must be >= 1");
    ks.push_back(static_cast<std::size_t>(k));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return ks;
}

struct ProblemCount {
  std::size_t problem_id = 0;
  std::size_t n = 0;
  std::size_t c = 0;
};

struct PassAtK {
  std::size_t k = 0;
  double value = 0.0;
};

struct EvalReport {
  std::vector<ProblemCount> problems;
  std::vector<PassAtK> pass;
  double greedy_accuracy = 0.0;
  double greedy_mean_reward = 0.0;
  double greedy_format_rate = 0.0;
  double sampled_mean_reward = 0.0;
  std::size_t n_rollouts = 0;
  double temperature = 1.0;
};

struct EvalOptions {
  std::size_t n_rollouts = 16;
  double temperature = 1.0;
  std::vector<std::size_t> k_list{1, 2, 4, 8};
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t answer_cap = 0;  // 0 means 2L
};

/// Samples n_rollouts completions per problem at rho = 0, counts full-reward
/// ones, and averages per-problem pass@k; greedy metrics come from one
/// temperature-0 decode per problem.
inline EvalReport eval_policy(const PolicyParams& params, std::span<const ParitySample> test, const EvalOptions& opt,
                              const RewardSpec& spec = {}) {
  if (test.empty()) throw std::invalid_argument("eval_policy: empty test set");
  if (opt.n_rollouts < 1) throw std::invalid_argument("eval_policy: n_rollouts must be >= 1");
  if (!(opt.temperature > 0.0)) throw std::invalid_argument("eval_policy: temperature must be > 0");
  for (auto k : opt.k_list)
    if (k < 1 || k > opt.n_rollouts)
      throw std::invalid_argument("eval_policy: every k must lie in [1, n_rollouts]; got " + std::to_string(k));
  EvalReport rep;
  rep.n_rollouts = opt.n_rollouts;
  rep.temperature = opt.temperature;
  rep.problems.resize(test.size());
  std::vector<double> reward_sums(test.size(), 0.0);
  parallel_for(test.size(), opt.workers, [&](std::size_t i) {
    const auto& s = test[i];
    const std::size_t cap = opt.answer_cap == 0 ? 2 * s.instance.length() : opt.answer_cap;
    Rng rng = make_rng(mix_seed(opt.seed, 0xe4a1), i);
    std::size_t c = 0;
    for (std::size_t r = 0; r < opt.n_rollouts; ++r) {
      const auto out = sample_sequence(params, s.instance.x_bits, {}, cap, opt.temperature, rng);
      const double rew = reward(s.instance, std::span<const Token>(out), spec);
      reward_sums[i] += rew;
      c += rew == spec.full_reward ? 1 : 0;
    }
    rep.problems[i] = {s.id, opt.n_rollouts, c};
  });
  for (auto k : opt.k_list) {
    double sum = 0.0;
    for (const auto& p : rep.problems) sum += pass_at_k(p.n, p.c, k);
    rep.pass.push_back({k, sum / static_cast<double>(test.size())});
  }
  double total = 0.0;
  for (double r : reward_sums) total += r;
  rep.sampled_mean_reward = total / static_cast<double>(test.size() * opt.n_rollouts);
  const auto g = evaluate_greedy(params, test, opt.answer_cap, opt.workers, spec);
  rep.greedy_accuracy = g.accuracy;
  rep.greedy_mean_reward = g.mean_reward;
  rep.greedy_format_rate = g.format_rate;
  return rep;
}

inline void write_problem_counts_csv(std::ostream& os, const EvalReport& rep) {
  os << "problem_id,n,c\n";
  for (const auto& p : rep.problems) os << p.problem_id << ',' << p.n << ',' << p.c << '\n';
}

/// One row with a pass@k column per requested k.
inline void write_pass_at_k_csv(std::ostream& os, const EvalReport& rep) {
  for (std::size_t i = 0; i < rep.pass.size(); ++i) os << (i ? "," : "") << "pass@" << rep.pass[i].k;
  os << '\n';
  for (std::size_t i = 0; i < rep.pass.size(); ++i) os << (i ? "," : "") << format_double(rep.pass[i].value);
  os << '\n';
}

inline json eval_summary_json(const EvalReport& rep) {
  json j{{"n_problems", rep.problems.size()},
         {"n_rollouts", rep.n_rollouts},
         {"temperature", rep.temperature},
         {"greedy_accuracy", rep.greedy_accuracy},
         {"greedy_mean_reward", rep.greedy_mean_reward},
         {"greedy_format_rate", rep.greedy_format_rate},
         {"sampled_mean_reward", rep.sampled_mean_reward}};
  for (const auto& p : rep.pass) j["pass@" + std::to_string(p.k)] = p.value;
  return j;
}

}  // namespace adaback
