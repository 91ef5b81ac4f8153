#pragma once

// Quick built-in invariant checks, run by `adaback self-check`.

#include <bit>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "adaback/analytic_sim.hpp"
#include "adaback/curriculum.hpp"
#include "adaback/datasets.hpp"
#include "adaback/eval.hpp"
#include "adaback/parity_env.hpp"
#include "adaback/policy.hpp"
#include "adaback/rng.hpp"

namespace adaback {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline CheckResult check_reward_oracle() {
  for (std::size_t L = 1; L <= 4; ++L) {
    Rng rng = make_rng(L, 1);
    const auto inst = gen_instance(L, rng);
    const auto valid = enumerate_valid(inst);
    if (valid.size() != (std::size_t{1} << L)) return {"reward_oracle", false, "valid set size wrong at L=" + std::to_string(L)};
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << (2 * L)); ++mask) {
      std::string s;
      for (std::size_t i = 0; i < 2 * L; ++i) s.push_back((mask >> i) & 1 ? '1' : '0');
      const bool full = reward(inst, s) == 1.0;
      if (full != (valid.count(s) == 1)) return {"reward_oracle", false, "disagreement on " + s};
    }
  }
  return {"reward_oracle", true, "L=1..4 exhaustive"};
}

inline CheckResult check_scheduler() {
  CurriculumConfig cfg;
  Rng rng = make_rng(7, 2);
  for (int seq = 0; seq < 500; ++seq) {
    Scheduler s(1, cfg);
    double prev_max = 1.0;
    for (int t = 0; t < 50; ++t) {
      const double rho = s.sample(0, rng);
      const bool was_graduated = s.state(0).graduated();
      s.update(0, rho, uniform01(rng));
      const auto& st = s.state(0);
      if (!(0.0 <= st.rho_min && st.rho_min <= st.rho_max && st.rho_max <= 1.0))
        return {"scheduler_invariants", false, "interval order violated"};
      if (st.rho_max > prev_max) return {"scheduler_invariants", false, "rho_max increased"};
      if (was_graduated && !st.graduated()) return {"scheduler_invariants", false, "graduation not absorbing"};
      prev_max = st.rho_max;
    }
  }
  return {"scheduler_invariants", true, "500 random sequences"};
}

inline CheckResult check_pass_at_k() {
  for (std::size_t n = 1; n <= 8; ++n)
    for (std::size_t c = 0; c <= n; ++c)
      for (std::size_t k = 1; k <= n; ++k) {
        std::size_t total = 0, hit = 0;
        for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
          if (static_cast<std::size_t>(std::popcount(mask)) != k) continue;
          ++total;
          hit += (mask & ((1u << c) - 1)) != 0 ? 1 : 0;
        }
        const double brute = static_cast<double>(hit) / static_cast<double>(total);
        if (std::abs(pass_at_k(n, c, k) - brute) > 1e-12) return {"pass_at_k", false, "mismatch"};
      }
  return {"pass_at_k", true, "n<=8 brute force"};
}

inline CheckResult check_gradient() {
  const PolicyDims dims{3, 8, kVocabSize};
  PolicyParams p = init_params(dims, 11);
  Rng rng = make_rng(11, 3);
  const auto inst = gen_instance(3, rng);
  std::vector<TokenSeq> gens;
  for (int e = 0; e < 3; ++e) gens.push_back(sample_sequence(p, inst.x_bits, {}, 6, 1.0, rng));
  std::vector<WeightedEpisode> eps;
  for (const auto& gen : gens) eps.push_back({inst.x_bits, {}, gen, uniform_real(rng, -1.0, 1.0)});
  auto objective = [&](const PolicyParams& q) {
    double f = 0.0;
    for (const auto& e : eps) f += e.weight * sequence_logprob(q, e.x_bits, e.prefix, e.generated).total;
    return f;
  };
  const auto g = grad_weighted_logprob(p, eps);
  for (int probe = 0; probe < 30; ++probe) {
    const auto i = static_cast<std::size_t>(uniform_index(rng, p.values().size()));
    const double h = 1e-5, orig = p.values()[i];
    p.values()[i] = orig + h;
    const double fp = objective(p);
    p.values()[i] = orig - h;
    const double fm = objective(p);
    p.values()[i] = orig;
    const double fd = (fp - fm) / (2 * h);
    const double err = std::abs(fd - g.values()[i]) / std::max(1e-8, std::abs(fd) + std::abs(g.values()[i]));
    if (err > 1e-4 && std::abs(fd - g.values()[i]) > 1e-9) return {"gradient_fd", false, "coordinate " + std::to_string(i)};
  }
  return {"gradient_fd", true, "30 probes"};
}

inline CheckResult check_base7() {
  const QARecord r{"a", "She has 15 apples and 7 pears.", "15 + 7 = 22\n#### 22"};
  const auto out = to_base7(r);
  const auto* rec = std::get_if<QARecord>(&out);
  if (!rec || rec->question != "She has 21 apples and 10 pears." || rec->answer != "21 + 10 = 31\n#### 31")
    return {"base7", false, "conversion mismatch"};
  if (base7_text_to_decimal(rec->question) != r.question) return {"base7", false, "round trip failed"};
  if (!std::holds_alternative<Dropped>(to_base7({"b", "3/4 of the cake", "x"}))) return {"base7", false, "division kept"};
  return {"base7", true, "fixtures"};
}

inline CheckResult check_simulator() {
  std::size_t guided = 0, plain = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng a = make_rng(seed, 0x51);
    Rng b = make_rng(seed, 0x52);
    guided += simulate_run(IdealLearner::make(16, 0.5, 3), {}, 8, 2000, a).final_learner.learned_count() == 16;
    plain += simulate_run(IdealLearner::make(16, 0.5, 3), {}, 8, 2000, b, SimSchedule::Plain)
                 .final_learner.learned_count() == 0;
  }
  const bool ok = guided >= 4 && plain >= 4;
  return {"analytic_sim", ok, std::to_string(guided) + "/5 guided learned, " + std::to_string(plain) + "/5 plain idle"};
}

}  // namespace detail

inline std::vector<CheckResult> run_self_checks() {
  return {detail::check_reward_oracle(), detail::check_scheduler(), detail::check_pass_at_k(),
          detail::check_gradient(),      detail::check_base7(),     detail::check_simulator()};
}

}  // namespace adaback
