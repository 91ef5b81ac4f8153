#pragma once

// Per-sample adaptive supervision scheduler. Each sample keeps an interval
// [rho_min, rho_max] of revealed-prefix ratios; a draw from it is narrowed
// upward on failure and reset to [0, rho_t] on success.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "adaback/rng.hpp"

namespace adaback {

struct CurriculumConfig {
  double tau = 0.5;
  double alpha = 0.05;
  double zero_inject_prob = 0.10;
  double initial_min = 0.0;
  double initial_max = 1.0;

  void validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(tau)) throw std::invalid_argument("curriculum.tau must lie in [0,1]");
    if (!in01(alpha)) throw std::invalid_argument("curriculum.alpha must lie in [0,1]");
    if (!(zero_inject_prob >= 0.0 && zero_inject_prob < 1.0))
      throw std::invalid_argument("curriculum.zero_inject_prob must lie in [0,1)");
    if (!in01(initial_min) || !in01(initial_max) || initial_min > initial_max)
      throw std::invalid_argument("curriculum.initial_min/initial_max must satisfy 0 <= min <= max <= 1");
  }
};

struct SupervisionState {
  std::size_t sample_id = 0;
  double rho_min = 0.0;
  double rho_max = 1.0;
  std::uint64_t visits = 0;
  std::optional<double> last_rho;
  std::optional<double> last_mean_reward;

  bool graduated() const noexcept { return rho_max == 0.0; }
};

inline bool operator==(const SupervisionState& a, const SupervisionState& b) {
  return a.sample_id == b.sample_id && a.rho_min == b.rho_min && a.rho_max == b.rho_max && a.visits == b.visits &&
         a.last_rho == b.last_rho && a.last_mean_reward == b.last_mean_reward;
}

struct GlobalPortionStats {
  double ema_rho_min = 0.0;
  double ema_rho_max = 1.0;
};

inline bool operator==(const GlobalPortionStats& a, const GlobalPortionStats& b) {
  return a.ema_rho_min == b.ema_rho_min && a.ema_rho_max == b.ema_rho_max;
}

inline SupervisionState initial_state(std::size_t sample_id, const CurriculumConfig& config) {
  return SupervisionState{sample_id, config.initial_min, config.initial_max, 0, std::nullopt, std::nullopt};
}

inline GlobalPortionStats initial_global(const CurriculumConfig& config) {
  return GlobalPortionStats{config.initial_min, config.initial_max};
}

/// Draws the supervision ratio for the next visit of `state` and records it in last_rho.
/// A first visit (not injected) adopts the global moving averages as its interval.
inline double sample_portion(SupervisionState& state, const GlobalPortionStats& global,
                             const CurriculumConfig& config, Rng& rng) {
  if (bernoulli(rng, config.zero_inject_prob)) {
    state.last_rho = 0.0;
    return 0.0;
  }
  if (state.visits == 0) {
    state.rho_min = global.ema_rho_min;
    state.rho_max = std::max(global.ema_rho_max, global.ema_rho_min);
  }
  const double rho = uniform_real(rng, state.rho_min, state.rho_max);
  state.last_rho = rho;
  return rho;
}

/// Applies the threshold rule for one completed rollout group.
///
/// mean_reward < tau (failure): rho_min <- rho_t. mean_reward >= tau (success):
/// rho_max <- rho_t, rho_min <- 0. A rho_t below the current interval (an
/// injected zero) leaves rho_min where it is on failure, and rho_t above
/// rho_max is clamped so the interval never widens upward.
inline SupervisionState update_interval(SupervisionState state, double rho_t, double mean_reward,
                                        const CurriculumConfig& config) {
  if (!(rho_t >= 0.0 && rho_t <= 1.0)) throw std::invalid_argument("update_interval: rho_t outside [0,1]");
  if (!(mean_reward >= 0.0 && mean_reward <= 1.0))
    throw std::invalid_argument("update_interval: mean_reward outside [0,1]");
  if (mean_reward < config.tau) {
    state.rho_min = std::min(std::max(state.rho_min, rho_t), state.rho_max);
  } else {
    state.rho_max = std::min(rho_t, state.rho_max);
    state.rho_min = 0.0;
  }
  ++state.visits;
  state.last_mean_reward = mean_reward;
  return state;
}

inline GlobalPortionStats update_global_ema(GlobalPortionStats global, const SupervisionState& state,
                                            const CurriculumConfig& config) {
  const double a = config.alpha;
  global.ema_rho_min = a * state.rho_min + (1.0 - a) * global.ema_rho_min;
  global.ema_rho_max = a * state.rho_max + (1.0 - a) * global.ema_rho_max;
  return global;
}

/// k = floor(rho * m) leading tokens of `target`.
template <class T>
std::pair<std::vector<T>, std::size_t> reveal_prefix(std::span<const T> target, double rho) {
  if (target.empty()) throw std::invalid_argument("reveal_prefix: empty target");
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("reveal_prefix: rho outside [0,1]");
  const auto m = static_cast<double>(target.size());
  const auto k = std::min(static_cast<std::size_t>(std::floor(rho * m)), target.size());
  return {std::vector<T>(target.begin(), target.begin() + static_cast<std::ptrdiff_t>(k)), k};
}

inline std::size_t reveal_count(std::size_t m, double rho) {
  return std::min(static_cast<std::size_t>(std::floor(rho * static_cast<double>(m))), m);
}

// ---------------------------------------------------------------------------
// R3 static slicing baseline.

struct R3Mode {
  enum class Kind { Whitespace, FixedCount } kind = Kind::Whitespace;
  std::size_t segments = 1;  // FixedCount only

  static R3Mode whitespace() { return {Kind::Whitespace, 0}; }
  static R3Mode fixed_count(std::size_t s) { return {Kind::FixedCount, s}; }
};

/// Candidate prefix lengths, ascending. Whitespace mode: the empty prefix and
/// every position just past a whitespace token. FixedCount(s): starts of the
/// first s segments of an s-way split with the remainder on the earliest
/// segments; s > m degrades to one boundary per token.
template <class T, class IsSpace>
std::vector<std::size_t> r3_boundaries(std::span<const T> target, const R3Mode& mode, IsSpace is_space) {
  if (target.empty()) throw std::invalid_argument("r3_schedule: empty target");
  std::vector<std::size_t> out{0};
  const std::size_t m = target.size();
  if (mode.kind == R3Mode::Kind::Whitespace) {
    for (std::size_t i = 0; i < m; ++i)
      if (is_space(target[i])) out.push_back(i + 1);
    return out;
  }
  if (mode.segments == 0) throw std::invalid_argument("r3_schedule: fixed_count needs s >= 1");
  const std::size_t s = std::min(mode.segments, m);
  const std::size_t base = m / s, rem = m % s;
  std::size_t pos = 0;
  for (std::size_t j = 0; j + 1 < s; ++j) {
    pos += base + (j < rem ? 1 : 0);
    out.push_back(pos);
  }
  return out;
}

template <class T>
std::vector<std::size_t> r3_boundaries(std::span<const T> target, const R3Mode& mode) {
  return r3_boundaries(target, mode, [](const T& t) {
    if constexpr (std::is_same_v<T, char>)
      return t == ' ' || t == '\t' || t == '\n' || t == '\r';
    else
      return false;
  });
}

/// Prefix ending at a uniformly chosen slicing boundary.
template <class T>
std::vector<T> r3_schedule(std::span<const T> target, const R3Mode& mode, Rng& rng) {
  const auto b = r3_boundaries(target, mode);
  const std::size_t k = b[static_cast<std::size_t>(uniform_index(rng, b.size()))];
  return std::vector<T>(target.begin(), target.begin() + static_cast<std::ptrdiff_t>(k));
}

// ---------------------------------------------------------------------------

/// Scheduler state for a whole dataset: per-sample intervals plus global EMAs.
class Scheduler {
 public:
  Scheduler() = default;
  Scheduler(std::size_t n_samples, CurriculumConfig config) : config_(config), global_(initial_global(config)) {
    config_.validate();
    states_.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) states_.push_back(initial_state(i, config_));
  }

  const CurriculumConfig& config() const noexcept { return config_; }
  const GlobalPortionStats& global() const noexcept { return global_; }
  const std::vector<SupervisionState>& states() const noexcept { return states_; }
  const SupervisionState& state(std::size_t id) const { return states_.at(id); }
  std::size_t size() const noexcept { return states_.size(); }

  double sample(std::size_t id, Rng& rng) { return sample_portion(states_.at(id), global_, config_, rng); }

  /// One completed cycle: interval update then EMA update.
  void update(std::size_t id, double rho_t, double mean_reward) {
    auto& s = states_.at(id);
    s = update_interval(s, rho_t, mean_reward, config_);
    global_ = update_global_ema(global_, s, config_);
  }

  double mean_rho_min() const { return mean_of(&SupervisionState::rho_min); }
  double mean_rho_max() const { return mean_of(&SupervisionState::rho_max); }
  double fraction_graduated() const {
    if (states_.empty()) return 0.0;
    std::size_t g = 0;
    for (const auto& s : states_) g += s.graduated() ? 1 : 0;
    return static_cast<double>(g) / static_cast<double>(states_.size());
  }

  /// Rebuilds a scheduler from deserialized parts; checks every invariant.
  static Scheduler restore(CurriculumConfig config, GlobalPortionStats global, std::vector<SupervisionState> states) {
    config.validate();
    for (std::size_t i = 0; i < states.size(); ++i) {
      const auto& s = states[i];
      if (s.sample_id != i) throw std::invalid_argument("scheduler snapshot: sample ids must be 0..n-1 in order");
      if (!(0.0 <= s.rho_min && s.rho_min <= s.rho_max && s.rho_max <= 1.0))
        throw std::invalid_argument("scheduler snapshot: interval invariant violated for sample " + std::to_string(i));
    }
    Scheduler out;
    out.config_ = config;
    out.global_ = global;
    out.states_ = std::move(states);
    return out;
  }

 private:
  double mean_of(double SupervisionState::*field) const {
    if (states_.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& s : states_) acc += s.*field;
    return acc / static_cast<double>(states_.size());
  }

  CurriculumConfig config_{};
  GlobalPortionStats global_{};
  std::vector<SupervisionState> states_;
};

}  // namespace adaback
