#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "adaback/curriculum.hpp"

using namespace adaback;

namespace {

CurriculumConfig no_injection() {
  CurriculumConfig c;
  c.zero_inject_prob = 0.0;
  return c;
}

SupervisionState visited(double lo, double hi) {
  SupervisionState s;
  s.rho_min = lo;
  s.rho_max = hi;
  s.visits = 1;
  return s;
}

}  // namespace

TEST(CurriculumConfig, Validation) {
  CurriculumConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tau = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.zero_inject_prob = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.initial_min = 0.7;
  c.initial_max = 0.3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.alpha = -0.1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(SamplePortion, UnitIntervalCentredOnMidpoint) {
  const auto cfg = no_injection();
  Rng rng = make_rng(1, 1);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    auto s = visited(0.0, 1.0);
    const double r = sample_portion(s, {}, cfg, rng);
    ASSERT_GE(r, 0.0);
    ASSERT_LE(r, 1.0);
    ASSERT_EQ(s.last_rho, r);
    sum += r;
  }
  // Standard error of the mean is 1/sqrt(12 n) ~ 0.0009.
  EXPECT_NEAR(sum / n, 0.5, 0.005);
}

TEST(SamplePortion, DegenerateIntervalReturnsPoint) {
  const auto cfg = no_injection();
  Rng rng = make_rng(1, 2);
  auto s = visited(0.3, 0.3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_portion(s, {}, cfg, rng), 0.3);
}

TEST(SamplePortion, InjectionReturnsExactZero) {
  CurriculumConfig cfg;
  cfg.zero_inject_prob = 0.999999;
  Rng rng = make_rng(1, 3);
  auto s = visited(0.6, 0.9);
  EXPECT_EQ(sample_portion(s, {}, cfg, rng), 0.0);
  EXPECT_EQ(s.last_rho, 0.0);
  EXPECT_EQ(s.rho_min, 0.6);
}

TEST(SamplePortion, FirstVisitBootstrapsFromGlobal) {
  const auto cfg = no_injection();
  Rng rng = make_rng(1, 4);
  SupervisionState s;
  const GlobalPortionStats g{0.25, 0.4};
  const double r = sample_portion(s, g, cfg, rng);
  EXPECT_EQ(s.rho_min, 0.25);
  EXPECT_EQ(s.rho_max, 0.4);
  EXPECT_GE(r, 0.25);
  EXPECT_LE(r, 0.4);
  // A visited sample keeps its own interval.
  auto v = visited(0.8, 0.9);
  sample_portion(v, g, cfg, rng);
  EXPECT_EQ(v.rho_min, 0.8);
  EXPECT_EQ(v.rho_max, 0.9);
}

TEST(SamplePortion, ZeroInjectionFrequencyWithinFourSigma) {
  CurriculumConfig cfg;
  Rng rng = make_rng(2, 1);
  const int n = 20000;
  int zeros = 0;
  for (int i = 0; i < n; ++i) {
    auto s = visited(0.2, 0.8);
    zeros += sample_portion(s, {}, cfg, rng) == 0.0;
  }
  const double p = 0.1, sigma = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(static_cast<double>(zeros) / n, p, 4 * sigma);
}

TEST(UpdateInterval, FailureBranch) {
  const auto s = update_interval(visited(0.0, 1.0), 0.6, 0.2, {});
  EXPECT_EQ(s.rho_min, 0.6);
  EXPECT_EQ(s.rho_max, 1.0);
  EXPECT_EQ(s.visits, 2u);
  EXPECT_EQ(s.last_mean_reward, 0.2);
}

TEST(UpdateInterval, SuccessBranch) {
  const auto s = update_interval(visited(0.6, 1.0), 0.8, 0.9, {});
  EXPECT_EQ(s.rho_min, 0.0);
  EXPECT_EQ(s.rho_max, 0.8);
}

TEST(UpdateInterval, EqualityTakesSuccessBranch) {
  const auto s = update_interval(visited(0.0, 1.0), 0.4, 0.5, {});
  EXPECT_EQ(s.rho_min, 0.0);
  EXPECT_EQ(s.rho_max, 0.4);
}

TEST(UpdateInterval, InjectedZeroSuccessGraduates) {
  const auto s = update_interval(visited(0.3, 0.7), 0.0, 1.0, {});
  EXPECT_EQ(s.rho_max, 0.0);
  EXPECT_TRUE(s.graduated());
}

TEST(UpdateInterval, InjectedZeroFailureIsNoOp) {
  const auto s = update_interval(visited(0.3, 0.7), 0.0, 0.1, {});
  EXPECT_EQ(s.rho_min, 0.3);
  EXPECT_EQ(s.rho_max, 0.7);
}

TEST(UpdateInterval, RejectsOutOfRange) {
  EXPECT_THROW(update_interval(visited(0, 1), 1.1, 0.5, {}), std::invalid_argument);
  EXPECT_THROW(update_interval(visited(0, 1), -0.1, 0.5, {}), std::invalid_argument);
  EXPECT_THROW(update_interval(visited(0, 1), 0.5, 1.5, {}), std::invalid_argument);
  EXPECT_THROW(update_interval(visited(0, 1), 0.5, std::nan(""), {}), std::invalid_argument);
}

TEST(UpdateGlobalEma, Arithmetic) {
  CurriculumConfig cfg;
  cfg.alpha = 0.1;
  const auto g = update_global_ema({0.5, 1.0}, visited(1.0, 1.0), cfg);
  EXPECT_NEAR(g.ema_rho_min, 0.55, 1e-15);
  cfg.alpha = 0.0;
  EXPECT_EQ(update_global_ema({0.2, 0.7}, visited(0.9, 1.0), cfg), (GlobalPortionStats{0.2, 0.7}));
  cfg.alpha = 1.0;
  EXPECT_EQ(update_global_ema({0.2, 0.7}, visited(0.4, 0.6), cfg), (GlobalPortionStats{0.4, 0.6}));
}

TEST(RevealPrefix, Examples) {
  std::vector<int> t(10);
  for (int i = 0; i < 10; ++i) t[static_cast<std::size_t>(i)] = i;
  const std::span<const int> sp(t);
  auto [p1, k1] = reveal_prefix(sp, 0.37);
  EXPECT_EQ(k1, 3u);
  EXPECT_EQ(p1, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(reveal_prefix(sp, 0.0).second, 0u);
  EXPECT_TRUE(reveal_prefix(sp, 0.0).first.empty());
  auto [p3, k3] = reveal_prefix(sp, 1.0);
  EXPECT_EQ(k3, 10u);
  EXPECT_EQ(p3, t);
  EXPECT_THROW(reveal_prefix(std::span<const int>(), 0.5), std::invalid_argument);
  EXPECT_THROW(reveal_prefix(sp, 1.5), std::invalid_argument);
}

TEST(RevealPrefix, MatchesFloorForAllGridPoints) {
  for (std::size_t m = 1; m <= 32; ++m)
    for (int j = 0; j <= 100; ++j) {
      const double rho = j / 100.0;
      EXPECT_EQ(reveal_count(m, rho), static_cast<std::size_t>(std::floor(rho * static_cast<double>(m))));
    }
}

TEST(R3, WhitespaceBoundaries) {
  const std::string s = "a b c";
  const std::span<const char> sp(s.data(), s.size());
  const auto b = r3_boundaries(sp, R3Mode::whitespace());
  ASSERT_EQ(b, (std::vector<std::size_t>{0, 2, 4}));
  EXPECT_EQ(std::string(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(b[1])), "a ");
}

TEST(R3, FixedCountEqualSplit) {
  std::vector<int> t(12, 7);
  const auto b = r3_boundaries(std::span<const int>(t), R3Mode::fixed_count(4));
  ASSERT_EQ(b, (std::vector<std::size_t>{0, 3, 6, 9}));
  EXPECT_EQ(b[2], 6u);
}

TEST(R3, FixedCountRemainderToEarliestSegments) {
  std::vector<int> t(10, 7);
  EXPECT_EQ(r3_boundaries(std::span<const int>(t), R3Mode::fixed_count(4)), (std::vector<std::size_t>{0, 3, 6, 8}));
}

TEST(R3, SingleSegmentIsEmptyPrefix) {
  std::vector<int> t(5, 1);
  Rng rng = make_rng(0, 0);
  for (int i = 0; i < 20; ++i) EXPECT_TRUE(r3_schedule(std::span<const int>(t), R3Mode::fixed_count(1), rng).empty());
}

TEST(R3, MoreSegmentsThanTokensDegradesToPerToken) {
  std::vector<int> t(3, 1);
  EXPECT_EQ(r3_boundaries(std::span<const int>(t), R3Mode::fixed_count(10)), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(R3, Errors) {
  std::vector<int> t(3, 1);
  EXPECT_THROW(r3_boundaries(std::span<const int>(), R3Mode::fixed_count(1)), std::invalid_argument);
  EXPECT_THROW(r3_boundaries(std::span<const int>(t), R3Mode::fixed_count(0)), std::invalid_argument);
}

TEST(R3, ScheduleIsUniformOverBoundaries) {
  std::vector<int> t(12, 1);
  Rng rng = make_rng(3, 1);
  std::vector<int> counts(13, 0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[r3_schedule(std::span<const int>(t), R3Mode::fixed_count(4), rng).size()];
  for (std::size_t k : {0u, 3u, 6u, 9u}) EXPECT_NEAR(counts[k] / static_cast<double>(n), 0.25, 0.01);
  EXPECT_EQ(counts[0] + counts[3] + counts[6] + counts[9], n);
}

TEST(SchedulerProperties, RandomSequencesKeepInvariants) {
  CurriculumConfig cfg;
  Rng rng = make_rng(4, 1);
  for (int seq = 0; seq < 10000; ++seq) {
    Scheduler s(1, cfg);
    double prev_max = 1.0;
    std::uint64_t visits = 0;
    bool graduated = false;
    for (int t = 0; t < 30; ++t) {
      const double rho = s.sample(0, rng);
      const auto drawn = s.state(0);
      const double r = uniform01(rng) < 0.5 ? uniform01(rng) : (uniform01(rng) < 0.5 ? 0.0 : 1.0);
      s.update(0, rho, r);
      const auto& st = s.state(0);
      ASSERT_LE(0.0, st.rho_min);
      ASSERT_LE(st.rho_min, st.rho_max);
      ASSERT_LE(st.rho_max, 1.0);
      ASSERT_LE(st.rho_max, prev_max);
      ASSERT_EQ(st.visits, ++visits);
      if (graduated) {
        ASSERT_EQ(rho, 0.0);
        ASSERT_EQ(st.rho_max, 0.0);
      }
      if (r < cfg.tau && rho > 0.0) {
        ASSERT_GE(st.rho_min, drawn.rho_min);
        ASSERT_LE(st.rho_max, drawn.rho_max);
      }
      graduated = st.graduated();
      prev_max = st.rho_max;
    }
    const auto& g = s.global();
    ASSERT_LE(g.ema_rho_min, g.ema_rho_max);
  }
}

TEST(SchedulerProperties, ThresholdLearnerConverges) {
  const double rho_star = 0.35;
  int close = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CurriculumConfig cfg;
    Scheduler s(1, cfg);
    Rng rng = make_rng(seed, 0x7e);
    for (int t = 0; t < 200; ++t) {
      const double rho = s.sample(0, rng);
      s.update(0, rho, rho >= rho_star ? 1.0 : 0.0);
      ASSERT_GE(s.state(0).rho_max, rho_star);
    }
    close += s.state(0).rho_max - rho_star <= 0.05;
  }
  EXPECT_GE(close, 9);
}

TEST(SchedulerProperties, GraduationAbsorbing) {
  CurriculumConfig cfg;
  Scheduler s(1, cfg);
  Rng rng = make_rng(5, 1);
  s.sample(0, rng);
  s.update(0, 0.0, 1.0);
  ASSERT_TRUE(s.state(0).graduated());
  for (int t = 0; t < 1000; ++t) {
    const double rho = s.sample(0, rng);
    EXPECT_EQ(rho, 0.0);
    s.update(0, rho, uniform01(rng));
    EXPECT_EQ(s.state(0).rho_max, 0.0);
  }
}

TEST(Scheduler, AggregatesAndEmaCadence) {
  CurriculumConfig cfg;
  cfg.alpha = 0.5;
  cfg.zero_inject_prob = 0.0;
  Scheduler s(4, cfg);
  EXPECT_EQ(s.size(), 4u);
  EXPECT_EQ(s.mean_rho_min(), 0.0);
  EXPECT_EQ(s.mean_rho_max(), 1.0);
  s.update(0, 0.5, 0.0);  // failure -> [0.5,1]; ema_min = 0.25
  s.update(1, 0.0, 1.0);  // success -> [0,0];   ema_min = 0.125, ema_max = 0.5
  EXPECT_DOUBLE_EQ(s.global().ema_rho_min, 0.125);
  EXPECT_DOUBLE_EQ(s.global().ema_rho_max, 0.5);
  EXPECT_DOUBLE_EQ(s.mean_rho_min(), 0.125);
  EXPECT_DOUBLE_EQ(s.mean_rho_max(), 0.75);
  EXPECT_DOUBLE_EQ(s.fraction_graduated(), 0.25);
}

TEST(Scheduler, RestoreValidates) {
  CurriculumConfig cfg;
  std::vector<SupervisionState> states{visited(0.1, 0.2)};
  states[0].sample_id = 0;
  EXPECT_NO_THROW(Scheduler::restore(cfg, {}, states));
  states[0].rho_min = 0.5;
  EXPECT_THROW(Scheduler::restore(cfg, {}, states), std::invalid_argument);
  states[0] = visited(0.1, 0.2);
  states[0].sample_id = 3;
  EXPECT_THROW(Scheduler::restore(cfg, {}, states), std::invalid_argument);
}
