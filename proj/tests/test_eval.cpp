#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "adaback/eval.hpp"

using namespace adaback;

namespace {

// Fraction of size-k subsets of n items (the first c correct) that contain a correct item.
double brute_pass(std::size_t n, std::size_t c, std::size_t k) {
  std::size_t total = 0, hit = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != k) continue;
    ++total;
    hit += (mask & ((1u << c) - 1)) != 0;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

TEST(PassAtK, Examples) {
  EXPECT_DOUBLE_EQ(pass_at_k(8, 4, 1), 0.5);
  for (std::size_t k = 1; k <= 8; ++k) EXPECT_EQ(pass_at_k(8, 0, k), 0.0);
  EXPECT_EQ(pass_at_k(8, 4, 8), 1.0);
  EXPECT_NEAR(pass_at_k(10, 3, 4), 5.0 / 6.0, 1e-12);
  EXPECT_NEAR(brute_pass(10, 3, 4), 5.0 / 6.0, 1e-12);
}

TEST(PassAtK, Errors) {
  EXPECT_THROW(pass_at_k(4, 1, 5), std::invalid_argument);
  EXPECT_THROW(pass_at_k(4, 1, 0), std::invalid_argument);
  EXPECT_THROW(pass_at_k(4, 5, 1), std::invalid_argument);
}

TEST(PassAtK, BruteForceUpTo12) {
  for (std::size_t n = 1; n <= 12; ++n)
    for (std::size_t c = 0; c <= n; ++c)
      for (std::size_t k = 1; k <= n; ++k) ASSERT_NEAR(pass_at_k(n, c, k), brute_pass(n, c, k), 1e-12) << n << c << k;
}

TEST(PassAtK, MonteCarloUpTo20) {
  Rng rng = make_rng(5, 5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto n = 1 + static_cast<std::size_t>(uniform_index(rng, 20));
    const auto c = static_cast<std::size_t>(uniform_index(rng, n + 1));
    const auto k = 1 + static_cast<std::size_t>(uniform_index(rng, n));
    std::vector<std::size_t> idx(n);
    int hits = 0;
    for (int t = 0; t < 100000; ++t) {
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      bool any = false;
      for (std::size_t i = 0; i < k; ++i) {  // partial Fisher-Yates
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
        std::swap(idx[i], idx[j]);
        any = any || idx[i] < c;
      }
      hits += any;
    }
    EXPECT_NEAR(pass_at_k(n, c, k), hits / 100000.0, 0.01) << n << ' ' << c << ' ' << k;
  }
}

TEST(PassAtK, Monotonicity) {
  for (std::size_t n = 1; n <= 20; ++n)
    for (std::size_t c = 0; c <= n; ++c)
      for (std::size_t k = 1; k <= n; ++k) {
        const double v = pass_at_k(n, c, k);
        if (k < n) {
          EXPECT_LE(v, pass_at_k(n, c, k + 1) + 1e-15);
        }
        if (c < n) {
          EXPECT_LE(v, pass_at_k(n, c + 1, k) + 1e-15);
        }
        if (n < 20) {
          EXPECT_GE(v + 1e-15, pass_at_k(n + 1, c, k));
        }
      }
}

TEST(ParseKList, ValidAndInvalid) {
  EXPECT_EQ(parse_k_list("1,2,4,8"), (std::vector<std::size_t>{1, 2, 4, 8}));
  EXPECT_EQ(parse_k_list("3"), (std::vector<std::size_t>{3}));
  for (const char* bad : {"", "1,,2", "0", "a", "1,-2", "1,2,"}) EXPECT_THROW(parse_k_list(bad), std::invalid_argument) << bad;
}

TEST(EvalPolicy, PerfectPolicyPassesEverywhere) {
  // With all-zero X the reference "00..." is valid; a policy that always emits '0' is perfect.
  std::vector<ParitySample> test;
  for (std::size_t i = 0; i < 6; ++i) {
    ParitySample s;
    s.id = i;
    s.instance = ParityInstance::from_string("0000");
    test.push_back(s);
  }
  PolicyParams p({4, 8, kVocabSize});
  p.b2()[static_cast<std::size_t>(Token::Zero)] = 60.0;
  EvalOptions opt;
  opt.n_rollouts = 8;
  const auto rep = eval_policy(p, test, opt);
  for (const auto& pk : rep.pass) EXPECT_EQ(pk.value, 1.0);
  EXPECT_EQ(rep.greedy_accuracy, 1.0);
  EXPECT_EQ(rep.sampled_mean_reward, 1.0);
}

TEST(EvalPolicy, PassOneIsMeanCOverNAndMonotoneInK) {
  const auto test = make_eval_set(40, 3, 2);
  auto p = init_params({3, 16, kVocabSize}, 2);
  sft_train(p, make_dataset(256, 3, 2), 10, 1e-2);
  EvalOptions opt;
  opt.n_rollouts = 16;
  opt.k_list = {1, 2, 4, 8, 16};
  const auto rep = eval_policy(p, test, opt);
  double mean = 0.0;
  for (const auto& pr : rep.problems) mean += static_cast<double>(pr.c) / static_cast<double>(pr.n);
  mean /= static_cast<double>(rep.problems.size());
  EXPECT_NEAR(rep.pass[0].value, mean, 1e-12);
  for (std::size_t i = 1; i < rep.pass.size(); ++i) EXPECT_LE(rep.pass[i - 1].value, rep.pass[i].value);
  EXPECT_GT(rep.pass.back().value, 0.0);
}

TEST(EvalPolicy, DeterministicAndWorkerIndependent) {
  const auto test = make_eval_set(20, 4, 3);
  const auto p = init_params({4, 16, kVocabSize}, 3);
  EvalOptions a;
  a.seed = 9;
  EvalOptions b = a;
  b.workers = 3;
  const auto ra = eval_policy(p, test, a), rb = eval_policy(p, test, b);
  std::ostringstream sa, sb;
  write_problem_counts_csv(sa, ra);
  write_problem_counts_csv(sb, rb);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(eval_summary_json(ra), eval_summary_json(rb));
}

TEST(EvalPolicy, ArgumentChecks) {
  const auto test = make_eval_set(2, 4, 3);
  const auto p = init_params({4, 8, kVocabSize}, 3);
  EvalOptions opt;
  opt.k_list = {32};
  EXPECT_THROW(eval_policy(p, test, opt), std::invalid_argument);
  opt = {};
  opt.temperature = 0.0;
  EXPECT_THROW(eval_policy(p, test, opt), std::invalid_argument);
  EXPECT_THROW(eval_policy(p, std::span<const ParitySample>(), EvalOptions{}), std::invalid_argument);
}

TEST(EvalOutput, ColumnsMatchKList) {
  EvalReport rep;
  rep.pass = {{1, 0.25}, {3, 0.5}};
  rep.problems = {{0, 4, 1}, {1, 4, 2}};
  std::ostringstream pk, pc;
  write_pass_at_k_csv(pk, rep);
  write_problem_counts_csv(pc, rep);
  EXPECT_EQ(pk.str(), "pass@1,pass@3\n0.25,0.5\n");
  EXPECT_EQ(pc.str(), "problem_id,n,c\n0,4,1\n1,4,2\n");
  const auto j = eval_summary_json(rep);
  EXPECT_EQ(j["pass@3"].get<double>(), 0.5);
}
