#pragma once

// Ideal-learner simulator: an agent that solves each of n steps with
// probability p until the step has been rewarded m_credit times, after which
// the step always succeeds. Rewards are Bernoulli with known rates, so the
// effect of revealing a solution suffix can be checked exactly.

#include <cmath>
#include <cstdio>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaback/curriculum.hpp"
#include "adaback/rng.hpp"

namespace adaback {

struct IdealLearner {
  std::size_t n_steps = 16;
  double p = 0.5;
  std::uint32_t m_credit = 3;
  std::vector<bool> learned;
  std::vector<std::uint32_t> credits;

  static IdealLearner make(std::size_t n_steps, double p, std::uint32_t m_credit = 3) {
    IdealLearner l{n_steps, p, m_credit, std::vector<bool>(n_steps, false), std::vector<std::uint32_t>(n_steps, 0)};
    l.validate();
    return l;
  }

  void validate() const {
    if (n_steps == 0) throw std::invalid_argument("IdealLearner: n_steps must be >= 1");
    if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("IdealLearner: p must lie in (0, 1]");
    if (m_credit == 0) throw std::invalid_argument("IdealLearner: m_credit must be >= 1");
    if (learned.size() != n_steps || credits.size() != n_steps)
      throw std::invalid_argument("IdealLearner: per-step vectors must have n_steps entries");
  }

  std::size_t learned_count() const {
    std::size_t c = 0;
    for (bool b : learned) c += b ? 1 : 0;
    return c;
  }
};

/// p^u, where u counts the unlearned steps among those left to generate
/// (steps k_revealed+1 ... n, i.e. indices k_revealed ... n-1).
inline double expected_success(const IdealLearner& learner, std::size_t k_revealed) {
  if (k_revealed > learner.n_steps) throw std::invalid_argument("expected_success: k_revealed exceeds n_steps");
  std::size_t unlearned = 0;
  for (std::size_t i = k_revealed; i < learner.n_steps; ++i) unlearned += learner.learned[i] ? 0 : 1;
  return std::pow(learner.p, static_cast<double>(unlearned));
}

enum class SimSchedule { AdaBack, Plain };

struct SimTraceRow {
  std::size_t iter = 0;
  double rho = 0.0;
  double mean_reward = 0.0;
  std::size_t learned_count = 0;
  double rho_min = 0.0;  // interval after the update
  double rho_max = 0.0;
};

struct SimResult {
  std::vector<SimTraceRow> trace;
  IdealLearner final_learner;
  std::vector<std::uint64_t> feedback_events;  // rewarded generations covering each step
  std::size_t iterations_with_feedback = 0;    // iterations with at least one success
};

/// Runs T iterations on a single problem. Each iteration reveals
/// k = floor(rho * n) steps, draws G Bernoulli trials with the learner's
/// success probability, and credits every unlearned generated step once per
/// successful trial. The scheduler (adaback only) sees the empirical mean.
inline SimResult simulate_run(IdealLearner learner, const CurriculumConfig& config, std::size_t group_size,
                              std::size_t iterations, Rng& rng, SimSchedule schedule = SimSchedule::AdaBack) {
  learner.validate();
  config.validate();
  if (iterations < 1) throw std::invalid_argument("simulate_run: T must be >= 1");
  if (group_size < 1) throw std::invalid_argument("simulate_run: G must be >= 1");
  Scheduler scheduler(1, config);
  SimResult out;
  out.feedback_events.assign(learner.n_steps, 0);
  out.trace.reserve(iterations);
  for (std::size_t t = 1; t <= iterations; ++t) {
    const double rho = schedule == SimSchedule::AdaBack ? scheduler.sample(0, rng) : 0.0;
    const std::size_t k = reveal_count(learner.n_steps, rho);
    const double ps = expected_success(learner, k);
    std::size_t successes = 0;
    for (std::size_t g = 0; g < group_size; ++g) {
      if (!bernoulli(rng, ps)) continue;
      ++successes;
      for (std::size_t i = k; i < learner.n_steps; ++i) {
        ++out.feedback_events[i];
        if (learner.learned[i]) continue;
        if (++learner.credits[i] >= learner.m_credit) learner.learned[i] = true;
      }
    }
    const double mean = static_cast<double>(successes) / static_cast<double>(group_size);
    if (successes > 0) ++out.iterations_with_feedback;
    if (schedule == SimSchedule::AdaBack) scheduler.update(0, rho, mean);
    const auto& st = scheduler.state(0);
    out.trace.push_back({t, rho, mean, learner.learned_count(), st.rho_min, st.rho_max});
  }
  out.final_learner = std::move(learner);
  return out;
}

inline void write_sim_trace_csv(std::ostream& os, const std::vector<SimTraceRow>& trace) {
  os << "iter,rho,mean_reward,learned_count,rho_min,rho_max\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%zu,%.17g,%.17g\n", r.iter, r.rho, r.mean_reward, r.learned_count,
                  r.rho_min, r.rho_max);
    os << buf;
  }
}

}  // namespace adaback
