#pragma once

// Group-relative policy-gradient training on the parity task, with the
// adaptive supervision scheduler, plain RL, and R3 slicing as prefix sources,
// plus the supervised (cross-entropy) warm-up phase.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaback/curriculum.hpp"
#include "adaback/parallel.hpp"
#include "adaback/parity_env.hpp"
#include "adaback/policy.hpp"
#include "adaback/rng.hpp"

namespace adaback {

enum class TrainMode { AdaBack, Plain, R3 };
enum class AdvantageNorm { MeanOnly, MeanStd };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::AdaBack: return "adaback";
    case TrainMode::Plain: return "plain";
    case TrainMode::R3: return "r3";
  }
  return "?";
}

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "adaback") return TrainMode::AdaBack;
  if (s == "plain") return TrainMode::Plain;
  if (s == "r3") return TrainMode::R3;
  throw std::invalid_argument("unknown mode '" + s + "' (expected adaback|plain|r3)");
}

inline std::string to_string(AdvantageNorm a) { return a == AdvantageNorm::MeanOnly ? "mean_only" : "mean_std"; }

inline AdvantageNorm parse_advantage_norm(const std::string& s) {
  if (s == "mean_only") return AdvantageNorm::MeanOnly;
  if (s == "mean_std") return AdvantageNorm::MeanStd;
  throw std::invalid_argument("unknown advantage_norm '" + s + "' (expected mean_only|mean_std)");
}

struct TrainerConfig {
  std::size_t group_size = 8;
  std::size_t batch_size = 64;
  std::size_t max_gen_len = 0;  // answer-length cap; 0 means 2L
  TrainMode mode = TrainMode::AdaBack;
  double rl_lr = 1e-4;
  double sft_lr = 3e-3;
  std::size_t sft_epochs = 0;
  std::size_t sft_batch_size = 32;
  std::size_t iterations = 4000;
  std::size_t eval_interval = 50;
  std::size_t eval_set_size = 256;
  double temperature = 1.0;
  AdvantageNorm advantage_norm = AdvantageNorm::MeanOnly;
  std::size_t r3_segments = 0;  // 0: one boundary per answer token
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("trainer.group_size must be >= 2");
    if (batch_size < 1) throw std::invalid_argument("trainer.batch_size must be >= 1");
    if (!(rl_lr > 0.0) || !(sft_lr > 0.0)) throw std::invalid_argument("trainer learning rates must be > 0");
    if (!(temperature > 0.0)) throw std::invalid_argument("trainer.temperature must be > 0");
    if (eval_interval < 1) throw std::invalid_argument("trainer.eval_interval must be >= 1");
    if (eval_set_size < 1) throw std::invalid_argument("trainer.eval_set_size must be >= 1");
    if (sft_batch_size < 1) throw std::invalid_argument("trainer.sft_batch_size must be >= 1");
  }

  std::size_t answer_cap(std::size_t L) const { return max_gen_len == 0 ? 2 * L : max_gen_len; }
};

struct RolloutGroup {
  std::size_t sample_id = 0;
  double rho = 0.0;
  TokenSeq prefix;
  std::vector<TokenSeq> generated;
  std::vector<double> rewards;
  std::vector<double> advantages;
  double mean_reward = 0.0;
};

/// mean_only: r_i - mean. mean_std: (r_i - mean) / (std + 1e-6). Groups
/// without reward variance get exactly zero advantages in both modes.
inline std::vector<double> group_advantages(std::span<const double> rewards, AdvantageNorm mode) {
  if (rewards.size() < 2) throw std::invalid_argument("group_advantages: need at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  std::vector<double> adv(rewards.size(), 0.0);
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); })) return adv;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  for (std::size_t i = 0; i < rewards.size(); ++i)
    adv[i] = mode == AdvantageNorm::MeanOnly ? rewards[i] - mean : (rewards[i] - mean) / (sd + 1e-6);
  return adv;
}

/// Reveals floor(rho * 2L) reference tokens and draws G continuations.
inline RolloutGroup rollout_group(const PolicyParams& params, const ParitySample& sample, double rho,
                                  std::size_t group_size, Rng& rng, double temperature = 1.0,
                                  std::size_t answer_cap = 0, const RewardSpec& spec = {},
                                  AdvantageNorm norm = AdvantageNorm::MeanOnly) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("rollout_group: rho outside [0,1]");
  const std::size_t m = sample.reference.bits.size();
  if (answer_cap == 0) answer_cap = m;
  RolloutGroup g;
  g.sample_id = sample.id;
  g.rho = rho;
  auto [prefix, k] = reveal_prefix(std::span<const Token>(sample.reference.bits), rho);
  g.prefix = std::move(prefix);
  const std::size_t budget = answer_cap > k ? answer_cap - k : 0;
  TokenSeq full;
  for (std::size_t i = 0; i < group_size; ++i) {
    g.generated.push_back(sample_sequence(params, sample.instance.x_bits, g.prefix, budget, temperature, rng));
    full = g.prefix;
    full.insert(full.end(), g.generated.back().begin(), g.generated.back().end());
    g.rewards.push_back(reward(sample.instance, std::span<const Token>(full), spec));
  }
  g.mean_reward = std::accumulate(g.rewards.begin(), g.rewards.end(), 0.0) / static_cast<double>(group_size);
  g.advantages = group_advantages(g.rewards, norm);
  return g;
}

// ---------------------------------------------------------------------------
// Held-out evaluation at rho = 0 with greedy decoding.

struct GreedyEval {
  double mean_reward = 0.0;
  double accuracy = 0.0;
  double format_rate = 0.0;
};

inline GreedyEval evaluate_greedy(const PolicyParams& params, std::span<const ParitySample> test,
                                  std::size_t answer_cap = 0, std::size_t workers = 1,
                                  const RewardSpec& spec = {}) {
  if (test.empty()) throw std::invalid_argument("evaluate_greedy: empty test set");
  std::vector<double> rewards(test.size());
  std::vector<char> formats(test.size());
  parallel_for(test.size(), workers, [&](std::size_t i) {
    const auto& s = test[i];
    const std::size_t cap = answer_cap == 0 ? 2 * s.instance.length() : answer_cap;
    const auto out = greedy_decode(params, s.instance.x_bits, {}, cap);
    rewards[i] = reward(s.instance, std::span<const Token>(out), spec);
    formats[i] = parse_completion(s.instance, out).format_valid ? 1 : 0;
  });
  GreedyEval e;
  for (std::size_t i = 0; i < test.size(); ++i) {
    e.mean_reward += rewards[i];
    e.accuracy += rewards[i] == spec.full_reward ? 1.0 : 0.0;
    e.format_rate += formats[i];
  }
  const double n = static_cast<double>(test.size());
  e.mean_reward /= n;
  e.accuracy /= n;
  e.format_rate /= n;
  return e;
}

/// Held-out instances from a stream disjoint from the training data's.
inline std::vector<ParitySample> make_eval_set(std::size_t n, std::size_t L, std::uint64_t seed) {
  return make_dataset(n, L, mix_seed(seed, 0xe7a1));
}

// ---------------------------------------------------------------------------
// Supervised warm-up

struct SftResult {
  std::vector<double> epoch_loss;  // mean per-token cross-entropy during each epoch
};

/// Minibatch Adam on the mean per-token cross-entropy of reference completions.
inline SftResult sft_train(PolicyParams& params, std::span<const ParitySample> dataset, std::size_t epochs,
                           double lr, std::size_t batch_size = 32, std::uint64_t seed = 0,
                           OptimizerState* optimizer = nullptr) {
  if (dataset.empty()) throw std::invalid_argument("sft_train: empty dataset");
  SftResult out;
  if (epochs == 0) return out;
  OptimizerState local = OptimizerState::make(OptimizerKind::Adam, params.values().size());
  OptimizerState& opt = optimizer ? *optimizer : local;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    Rng rng = make_rng(seed, 0x5f700000ULL + epoch);
    shuffle(order, rng);
    double loss_sum = 0.0;
    std::size_t token_count = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      std::size_t tokens = 0;
      for (std::size_t i = start; i < end; ++i) tokens += dataset[order[i]].reference.bits.size();
      std::vector<WeightedEpisode> eps;
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = dataset[order[i]];
        eps.push_back({s.instance.x_bits, {}, s.reference.bits, 1.0 / static_cast<double>(tokens)});
        loss_sum -= sequence_logprob(params, s.instance.x_bits, {}, s.reference.bits).total;
      }
      token_count += tokens;
      const auto grad = grad_weighted_logprob(params, eps);
      optimizer_step(params, grad, opt, lr);
    }
    const double loss = loss_sum / static_cast<double>(token_count);
    if (!std::isfinite(loss)) throw NonFiniteError("sft_train: non-finite loss in epoch " + std::to_string(epoch));
    out.epoch_loss.push_back(loss);
  }
  return out;
}

// ---------------------------------------------------------------------------
// RL iterations

struct MetricsRecord {
  std::size_t iter = 0;
  TrainMode mode = TrainMode::AdaBack;
  double train_mean_reward = 0.0;
  std::optional<double> test_reward;
  std::optional<double> test_accuracy;
  double mean_rho = 0.0;
  std::optional<double> mean_rho_min;
  std::optional<double> mean_rho_max;
  std::optional<double> frac_graduated;
  double wallclock_s = 0.0;
};

/// Mutable state of an RL run; everything needed to resume exactly.
struct RlState {
  PolicyParams params;
  OptimizerState optimizer;
  Scheduler scheduler;
  std::size_t iter = 0;  // completed iterations
};

/// Batch for iteration `iter`: batch_size distinct ids, ascending. Derived
/// from (seed, iter) only, so a resumed run draws the same batches.
inline std::vector<std::size_t> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::size_t iter) {
  Rng rng = make_rng(mix_seed(seed, 0xba7c4), iter);
  const std::size_t b = std::min(batch_size, n);
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < b; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(b);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Raised when an iteration produces a non-finite quantity; carries the batch for diagnostics.
class TrainingDivergedError : public NonFiniteError {
 public:
  TrainingDivergedError(const std::string& what, std::vector<RolloutGroup> batch)
      : NonFiniteError(what), groups(std::move(batch)) {}
  std::vector<RolloutGroup> groups;
};

/// One policy-gradient iteration over a batch.
///
/// Prefix ratios come from the scheduler (adaback), are zero (plain), or are a
/// uniformly chosen slicing boundary (r3). The update ascends
/// sum_i A_i * logprob(generated_i) / (batch * G) with one optimizer step; a
/// batch without reward variance in any group leaves the parameters untouched.
/// Adaback then applies one interval update and one EMA update per sample in
/// ascending sample_id order.
inline MetricsRecord rl_iteration(RlState& state, std::span<const ParitySample> dataset, const TrainerConfig& cfg,
                                  const RewardSpec& spec = {}, std::vector<RolloutGroup>* groups_out = nullptr) {
  const std::size_t L = dataset.front().instance.length();
  const auto batch = batch_indices(dataset.size(), cfg.batch_size, cfg.seed, state.iter);
  const std::size_t B = batch.size();
  std::vector<RolloutGroup> groups(B);
  std::vector<std::optional<PolicyParams>> grads(B);
  const double scale = 1.0 / static_cast<double>(B * cfg.group_size);
  const std::size_t cap = cfg.answer_cap(L);

  parallel_for(B, cfg.workers, [&](std::size_t b) {
    const std::size_t id = batch[b];
    const auto& sample = dataset[id];
    Rng rng = make_rng(mix_seed(cfg.seed, 0x5a3b1e + state.iter), id);
    double rho = 0.0;
    switch (cfg.mode) {
      case TrainMode::AdaBack: rho = state.scheduler.sample(id, rng); break;
      case TrainMode::Plain: rho = 0.0; break;
      case TrainMode::R3: {
        const auto mode = cfg.r3_segments == 0 ? R3Mode::fixed_count(sample.reference.bits.size())
                                               : R3Mode::fixed_count(cfg.r3_segments);
        const auto prefix = r3_schedule(std::span<const Token>(sample.reference.bits), mode, rng);
        rho = static_cast<double>(prefix.size()) / static_cast<double>(sample.reference.bits.size());
        break;
      }
    }
    groups[b] = rollout_group(state.params, sample, rho, cfg.group_size, rng, cfg.temperature, cap, spec,
                              cfg.advantage_norm);
    const auto& g = groups[b];
    if (std::any_of(g.advantages.begin(), g.advantages.end(), [](double a) { return a != 0.0; })) {
      PolicyParams grad(state.params.dims());
      for (std::size_t i = 0; i < g.generated.size(); ++i)
        accumulate_weighted_logprob_grad(state.params,
                                         {sample.instance.x_bits, g.prefix, g.generated[i], g.advantages[i] * scale},
                                         grad);
      grads[b] = std::move(grad);
    }
  });

  MetricsRecord rec;
  rec.iter = state.iter + 1;
  rec.mode = cfg.mode;
  double reward_sum = 0.0, rho_sum = 0.0;
  for (const auto& g : groups) {
    for (double r : g.rewards) reward_sum += r;
    rho_sum += g.rho;
  }
  rec.train_mean_reward = reward_sum / static_cast<double>(B * cfg.group_size);
  rec.mean_rho = rho_sum / static_cast<double>(B);

  bool any_signal = false;
  PolicyParams total(state.params.dims());
  for (const auto& g : grads) {
    if (!g) continue;
    any_signal = true;
    total += *g;
  }
  if (!std::isfinite(rec.train_mean_reward) || !total.all_finite())
    throw TrainingDivergedError("rl_iteration " + std::to_string(rec.iter) + ": non-finite loss or gradient",
                                std::move(groups));
  if (any_signal) {
    try {
      optimizer_step(state.params, total, state.optimizer, cfg.rl_lr);
    } catch (const NonFiniteError& e) {
      throw TrainingDivergedError(std::string("rl_iteration ") + std::to_string(rec.iter) + ": " + e.what(),
                                  std::move(groups));
    }
  }

  if (cfg.mode == TrainMode::AdaBack) {
    for (std::size_t b = 0; b < B; ++b) state.scheduler.update(batch[b], groups[b].rho, groups[b].mean_reward);
    rec.mean_rho_min = state.scheduler.mean_rho_min();
    rec.mean_rho_max = state.scheduler.mean_rho_max();
    rec.frac_graduated = state.scheduler.fraction_graduated();
  }
  ++state.iter;
  if (groups_out) *groups_out = std::move(groups);
  return rec;
}

}  // namespace adaback
