#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "adaback/run.hpp"
#include "adaback/trainer.hpp"

using namespace adaback;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "adaback_test_trainer" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

RlState fresh_state(const PolicyDims& d, std::size_t n, std::uint64_t seed) {
  auto p = init_params(d, seed);
  auto opt = OptimizerState::make(OptimizerKind::Adam, p.values().size());
  return RlState{std::move(p), std::move(opt), Scheduler(n, CurriculumConfig{}), 0};
}

TrainerConfig small_trainer(TrainMode mode) {
  TrainerConfig t;
  t.mode = mode;
  t.batch_size = 8;
  t.rl_lr = 1e-2;
  return t;
}

// A policy whose SFT warm-up makes reward variance likely within groups.
PolicyParams warmed_policy(const PolicyDims& d, std::span<const ParitySample> data) {
  auto p = init_params(d, 1);
  sft_train(p, data, 2, 3e-3, 32, 1);
  return p;
}

RunConfig tiny_run(TrainMode mode) {
  RunConfig c;
  c.seed = 3;
  c.workers = 1;
  c.env.L = 4;
  c.env.n = 32;
  c.hidden = 16;
  c.checkpoint_interval = 10;
  c.trainer.mode = mode;
  c.trainer.batch_size = 8;
  c.trainer.iterations = 30;
  c.trainer.eval_interval = 10;
  c.trainer.eval_set_size = 32;
  c.trainer.sft_epochs = 1;
  c.trainer.rl_lr = 1e-2;
  return c;
}

}  // namespace

TEST(GroupAdvantages, Examples) {
  EXPECT_EQ(group_advantages(std::vector<double>{1, 0, 0, 1}, AdvantageNorm::MeanOnly),
            (std::vector<double>{0.5, -0.5, -0.5, 0.5}));
  EXPECT_EQ(group_advantages(std::vector<double>{0.1, 0.1, 0.1}, AdvantageNorm::MeanOnly),
            (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(group_advantages(std::vector<double>{0.1, 0.1, 0.1}, AdvantageNorm::MeanStd),
            (std::vector<double>{0, 0, 0}));
  const auto a = group_advantages(std::vector<double>{1, 0.1, 0.1, 0.1}, AdvantageNorm::MeanOnly);
  const std::vector<double> want{0.675, -0.225, -0.225, -0.225};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a[i], want[i], 1e-12);
  EXPECT_THROW(group_advantages(std::vector<double>{1}, AdvantageNorm::MeanOnly), std::invalid_argument);
}

TEST(GroupAdvantages, MeanStdAndZeroSum) {
  const std::vector<double> r{1, 0, 0, 1};
  const auto s = group_advantages(r, AdvantageNorm::MeanStd);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(s[i], (r[i] - 0.5) / (0.5 + 1e-6), 1e-12);
  Rng rng = make_rng(0, 0);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> rw(8);
    for (auto& x : rw) x = std::vector<double>{0.0, 0.1, 1.0}[uniform_index(rng, 3)];
    const auto adv = group_advantages(rw, AdvantageNorm::MeanOnly);
    EXPECT_NEAR(std::accumulate(adv.begin(), adv.end(), 0.0), 0.0, 1e-9);
  }
}

TEST(RolloutGroup, FullRevealScoresOne) {
  const auto data = make_dataset(4, 6, 1);
  const auto p = init_params({6, 16, kVocabSize}, 1);
  Rng rng = make_rng(1, 1);
  for (const auto& s : data) {
    const auto g = rollout_group(p, s, 1.0, 8, rng);
    EXPECT_EQ(g.prefix.size(), 12u);
    EXPECT_EQ(g.mean_reward, 1.0);
    for (double r : g.rewards) EXPECT_EQ(r, 1.0);
    for (double a : g.advantages) EXPECT_EQ(a, 0.0);
  }
}

TEST(RolloutGroup, PrefixIsReferenceFloorRhoM) {
  const auto data = make_dataset(1, 8, 2);
  const auto p = init_params({8, 16, kVocabSize}, 1);
  Rng rng = make_rng(1, 2);
  const auto g = rollout_group(p, data[0], 0.37, 4, rng);
  ASSERT_EQ(g.prefix.size(), 5u);
  EXPECT_TRUE(std::equal(g.prefix.begin(), g.prefix.end(), data[0].reference.bits.begin()));
  for (const auto& gen : g.generated) EXPECT_LE(gen.size(), 16u - 5u);
  EXPECT_EQ(g.mean_reward, std::accumulate(g.rewards.begin(), g.rewards.end(), 0.0) / 4.0);
}

TEST(RolloutGroup, UntrainedPolicyAtL16RarelyFullyCorrect) {
  const auto data = make_dataset(100, 16, 3);
  const auto p = init_params({16, 128, kVocabSize}, 3);
  Rng rng = make_rng(3, 3);
  std::size_t full = 0, total = 0;
  double sum = 0.0;
  for (const auto& s : data) {
    const auto g = rollout_group(p, s, 0.0, 8, rng);
    for (double r : g.rewards) {
      full += r == 1.0;
      sum += r;
      ++total;
    }
  }
  // Expected full-reward count is at most 800 * 2^-16 ~ 0.012.
  EXPECT_EQ(full, 0u);
  EXPECT_LE(sum / static_cast<double>(total), 0.1);
}

TEST(RolloutGroup, DeterministicUnderSeed) {
  const auto data = make_dataset(1, 6, 4);
  const auto p = init_params({6, 16, kVocabSize}, 4);
  Rng a = make_rng(9, 9), b = make_rng(9, 9);
  const auto ga = rollout_group(p, data[0], 0.25, 8, a), gb = rollout_group(p, data[0], 0.25, 8, b);
  EXPECT_EQ(ga.generated, gb.generated);
  EXPECT_EQ(ga.rewards, gb.rewards);
}

TEST(RlIteration, ZeroVarianceBatchLeavesParametersBitIdentical) {
  const PolicyDims d{6, 16, kVocabSize};
  const auto data = make_dataset(16, 6, 5);
  for (auto mode : {TrainMode::AdaBack, TrainMode::Plain, TrainMode::R3}) {
    auto st = fresh_state(d, data.size(), 5);
    // Only EOS is ever sampled, except on fully revealed prefixes: every
    // group is uniformly 0 or uniformly 1.
    st.params.b2()[static_cast<std::size_t>(Token::Eos)] = 200.0;
    const auto before = st.params;
    const auto opt_before = st.optimizer;
    std::vector<RolloutGroup> groups;
    const auto cfg = small_trainer(mode);
    for (int it = 0; it < 3; ++it) {
      rl_iteration(st, data, cfg, {}, &groups);
      for (const auto& g : groups)
        for (double a : g.advantages) ASSERT_EQ(a, 0.0);
    }
    EXPECT_EQ(st.params, before);
    EXPECT_EQ(st.optimizer, opt_before);
  }
}

TEST(RlIteration, PlainModeNeverTouchesScheduler) {
  const PolicyDims d{6, 16, kVocabSize};
  const auto data = make_dataset(16, 6, 6);
  auto st = fresh_state(d, data.size(), 6);
  st.params = warmed_policy(d, data);
  const auto sched_before = st.scheduler;
  std::vector<RolloutGroup> groups;
  for (int it = 0; it < 5; ++it) {
    const auto rec = rl_iteration(st, data, small_trainer(TrainMode::Plain), {}, &groups);
    EXPECT_EQ(rec.mean_rho, 0.0);
    EXPECT_FALSE(rec.mean_rho_min.has_value());
    for (const auto& g : groups) EXPECT_TRUE(g.prefix.empty());
  }
  EXPECT_EQ(st.scheduler.states(), sched_before.states());
  EXPECT_EQ(st.scheduler.global(), sched_before.global());
}

TEST(RlIteration, SchedulerCouplingAndRewardAccounting) {
  const PolicyDims d{6, 16, kVocabSize};
  const auto data = make_dataset(24, 6, 7);
  auto st = fresh_state(d, data.size(), 7);
  st.params = warmed_policy(d, data);
  const auto cfg = small_trainer(TrainMode::AdaBack);
  std::vector<RolloutGroup> groups;
  for (int it = 0; it < 20; ++it) {
    const auto before = st.scheduler;
    const auto rec = rl_iteration(st, data, cfg, {}, &groups);
    ASSERT_EQ(groups.size(), cfg.batch_size);
    double sum = 0.0, rho_sum = 0.0;
    std::vector<bool> visited(data.size(), false);
    for (const auto& g : groups) {
      visited[g.sample_id] = true;
      sum += std::accumulate(g.rewards.begin(), g.rewards.end(), 0.0);
      rho_sum += g.rho;
      const auto& now = st.scheduler.state(g.sample_id);
      const auto& was = before.state(g.sample_id);
      EXPECT_EQ(now.visits, was.visits + 1);
      EXPECT_EQ(now.last_rho, g.rho);
      EXPECT_EQ(now.last_mean_reward, g.mean_reward);
      EXPECT_EQ(g.prefix.size(), reveal_count(12, g.rho));
      if (g.mean_reward >= CurriculumConfig{}.tau) {
        EXPECT_EQ(now.rho_min, 0.0);
        EXPECT_LE(now.rho_max, g.rho);
      } else {
        EXPECT_GE(now.rho_min, std::min(g.rho, now.rho_max));
      }
    }
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!visited[i]) {
        EXPECT_EQ(st.scheduler.state(i), before.state(i));
      }
    EXPECT_NEAR(rec.train_mean_reward, sum / static_cast<double>(cfg.batch_size * cfg.group_size), 1e-9);
    EXPECT_NEAR(rec.mean_rho, rho_sum / static_cast<double>(cfg.batch_size), 1e-12);
    EXPECT_EQ(rec.iter, static_cast<std::size_t>(it + 1));
    EXPECT_DOUBLE_EQ(*rec.mean_rho_max, st.scheduler.mean_rho_max());
  }
}

TEST(RlIteration, R3DrawsTokenBoundaries) {
  const PolicyDims d{6, 16, kVocabSize};
  const auto data = make_dataset(16, 6, 8);
  auto st = fresh_state(d, data.size(), 8);
  const auto sched_before = st.scheduler;
  auto cfg = small_trainer(TrainMode::R3);
  cfg.r3_segments = 3;
  std::vector<RolloutGroup> groups;
  for (int it = 0; it < 10; ++it) {
    rl_iteration(st, data, cfg, {}, &groups);
    for (const auto& g : groups) {
      const auto k = g.prefix.size();
      EXPECT_TRUE(k == 0 || k == 4 || k == 8) << k;
    }
  }
  EXPECT_EQ(st.scheduler.states(), sched_before.states());
}

TEST(RlIteration, DeterministicAndWorkerIndependent) {
  const PolicyDims d{6, 16, kVocabSize};
  const auto data = make_dataset(24, 6, 9);
  const auto warm = warmed_policy(d, data);
  auto run = [&](std::size_t workers) {
    auto st = fresh_state(d, data.size(), 9);
    st.params = warm;
    auto cfg = small_trainer(TrainMode::AdaBack);
    cfg.workers = workers;
    std::vector<double> rewards;
    for (int it = 0; it < 8; ++it) rewards.push_back(rl_iteration(st, data, cfg).train_mean_reward);
    return std::make_pair(st, rewards);
  };
  const auto [a, ra] = run(1);
  const auto [b, rb] = run(1);
  const auto [c, rc] = run(3);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(a.params, c.params);
  EXPECT_EQ(ra, rc);
  EXPECT_EQ(a.scheduler.states(), c.scheduler.states());
  EXPECT_FALSE(a.params == warm);
}

TEST(RlIteration, PrefixPositionsCarryNoGradient) {
  const PolicyDims d{5, 16, kVocabSize};
  const auto p = init_params(d, 10);
  const auto data = make_dataset(1, 5, 10);
  const auto& ref = data[0].reference.bits;
  for (std::size_t k = 0; k <= ref.size(); ++k) {
    const std::span<const Token> prefix(ref.data(), k);
    const std::vector<WeightedEpisode> eps{{data[0].instance.x_bits, prefix, {}, 3.0}};
    const auto g = grad_weighted_logprob(p, eps);
    for (double v : g.values()) ASSERT_EQ(v, 0.0);
  }
}

TEST(BatchIndices, DistinctAscendingDeterministic) {
  const auto a = batch_indices(100, 10, 4, 7), b = batch_indices(100, 10, 4, 7);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 10u);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_LT(a[i - 1], a[i]);
  EXPECT_NE(a, batch_indices(100, 10, 4, 8));
  EXPECT_EQ(batch_indices(5, 10, 4, 7), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Sft, ZeroEpochsUnchanged) {
  const auto data = make_dataset(8, 4, 1);
  auto p = init_params({4, 16, kVocabSize}, 1);
  const auto before = p;
  EXPECT_TRUE(sft_train(p, data, 0, 3e-3).epoch_loss.empty());
  EXPECT_EQ(p, before);
  std::vector<ParitySample> empty;
  EXPECT_THROW(sft_train(p, empty, 1, 3e-3), std::invalid_argument);
}

TEST(Sft, LearnsFormatAtL8) {
  const std::size_t L = 8;
  const auto data = make_dataset(1024, L, 0);
  const auto test = make_eval_set(256, L, 0);
  auto p = init_params({L, 128, kVocabSize}, 0);
  const auto res = sft_train(p, data, 3, 3e-3);
  ASSERT_EQ(res.epoch_loss.size(), 3u);
  EXPECT_GE(evaluate_greedy(p, test).format_rate, 0.95);
}

TEST(Sft, LossNonIncreasingOverFirstThreeEpochsInMostSeeds) {
  const std::size_t L = 8;
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto data = make_dataset(1024, L, seed);
    auto p = init_params({L, 128, kVocabSize}, seed);
    const auto loss = sft_train(p, data, 3, 3e-3, 32, seed).epoch_loss;
    ok += loss[1] <= loss[0] && loss[2] <= loss[1];
  }
  EXPECT_GE(ok, 2);
}

TEST(EvaluateGreedy, ReferencePolicyScoresFormatOnly) {
  const auto test = make_eval_set(16, 4, 1);
  PolicyParams p({4, 8, kVocabSize});
  p.b2()[static_cast<std::size_t>(Token::Zero)] = 5.0;  // always "00000000"
  const auto ev = evaluate_greedy(p, test);
  EXPECT_EQ(ev.format_rate, 1.0);
  double want = 0.0;
  for (const auto& s : test) want += reward(s.instance, std::string(8, '0'));
  EXPECT_NEAR(ev.mean_reward, want / 16.0, 1e-12);
  EXPECT_THROW(evaluate_greedy(p, std::span<const ParitySample>()), std::invalid_argument);
}

TEST(EvalSet, DisjointStreamFromTrainingData) {
  const auto train = make_dataset(64, 16, 0);
  const auto test = make_eval_set(64, 16, 0);
  int same = 0;
  for (std::size_t i = 0; i < 64; ++i) same += train[i].instance == test[i].instance;
  EXPECT_EQ(same, 0);
}

TEST(FinalReport, LastKAndFallback) {
  auto rec = [](std::size_t it, double r) {
    MetricsRecord m;
    m.iter = it;
    m.test_reward = r;
    m.test_accuracy = r / 2;
    return m;
  };
  const std::vector<MetricsRecord> rising{rec(10, 0.1), rec(20, 0.2), rec(30, 0.3), rec(40, 0.4)};
  const auto a = final_report(rising, 2);
  EXPECT_EQ(a.mode, "last_k");
  EXPECT_NEAR(a.test_reward, 0.35, 1e-12);
  EXPECT_NEAR(a.test_accuracy, 0.175, 1e-12);
  EXPECT_EQ(a.iters, (std::vector<std::size_t>{30, 40}));

  const std::vector<MetricsRecord> falling{rec(10, 0.1), rec(20, 0.5), rec(30, 0.4), rec(40, 0.6),
                                           rec(50, 0.3), rec(60, 0.2)};
  const auto b = final_report(falling, 3);
  EXPECT_EQ(b.mode, "increasing_fallback");
  EXPECT_EQ(b.iters, (std::vector<std::size_t>{20, 40}));
  EXPECT_NEAR(b.test_reward, 0.55, 1e-12);

  EXPECT_EQ(final_report({}, 5).mode, "none");
  EXPECT_EQ(first_iter_reaching(falling, 0.5), 20u);
  EXPECT_EQ(first_iter_reaching(falling, 0.9), std::nullopt);
}

TEST(TrainRun, IdenticalConfigGivesIdenticalArtifacts) {
  const auto cfg = tiny_run(TrainMode::AdaBack);
  const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
  train_run(cfg, a);
  train_run(cfg, b);
  for (const char* f : {"metrics.csv", "final_report.json", "sft_metrics.csv", "checkpoint/params.bin",
                        "checkpoint/scheduler.jsonl", "scheduler_snapshots/scheduler_30.jsonl"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  const auto m = load_metrics_csv(a / "metrics.csv");
  ASSERT_EQ(m.size(), 30u);
  EXPECT_TRUE(m[9].test_reward.has_value());
  EXPECT_FALSE(m[10].test_reward.has_value());
  EXPECT_TRUE(m[29].test_reward.has_value());
}

TEST(TrainRun, ResumeReproducesUninterruptedRun) {
  for (auto mode : {TrainMode::AdaBack, TrainMode::R3}) {
    const auto cfg = tiny_run(mode);
    const auto full = fresh_dir("full"), split = fresh_dir("split");
    train_run(cfg, full);
    train_run(cfg, split, false, nullptr, 15);  // checkpoint exists at 10
    const auto res = train_run(cfg, split, true);
    EXPECT_TRUE(res.resumed);
    EXPECT_EQ(res.resumed_from, 10u);
    EXPECT_EQ(slurp(full / "metrics.csv"), slurp(split / "metrics.csv"));
    EXPECT_EQ(slurp(full / "checkpoint/params.bin"), slurp(split / "checkpoint/params.bin"));
    EXPECT_EQ(slurp(full / "checkpoint/optimizer.bin"), slurp(split / "checkpoint/optimizer.bin"));
  }
}

TEST(TrainRun, ResumeRejectsChangedConfig) {
  auto cfg = tiny_run(TrainMode::AdaBack);
  const auto dir = fresh_dir("changed");
  train_run(cfg, dir, false, nullptr, 12);
  cfg.trainer.rl_lr = 5e-3;
  EXPECT_THROW(train_run(cfg, dir, true), ConfigError);
}

TEST(TrainRun, PlainModeWritesNoSchedulerSnapshots) {
  const auto dir = fresh_dir("plain");
  const auto out = train_run(tiny_run(TrainMode::Plain), dir);
  EXPECT_FALSE(fs::exists(dir / "scheduler_snapshots"));
  for (const auto& m : out.metrics) EXPECT_EQ(m.mean_rho, 0.0);
}
