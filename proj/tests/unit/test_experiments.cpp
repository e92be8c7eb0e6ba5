#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "bcisim/experiments.hpp"
#include "bcisim/synthdata.hpp"

using namespace bcisim;

namespace {

std::vector<SessionData> small_dataset(std::uint64_t seed = 5, int sessions = 2) {
  SynthConfig cfg;
  cfg.feature_count = 16;
  cfg.sessions = sessions;
  cfg.blocks_per_session = 6;
  cfg.ticks_per_block = 300;
  cfg.noise_std = 0.3;
  cfg.seed = seed;
  auto raw = generate_dataset(cfg);
  std::vector<SessionData> out;
  for (auto& s : raw) out.push_back(prepare_session(std::move(s)));
  return out;
}

PipelineOptions quick_options() {
  PipelineOptions o;
  o.sweep.gain_values = log_spaced(0.5, 30.0, 8);
  o.sweep.alpha_values = {0.8, 0.94};
  o.sweep.repeats = 3;
  return o;
}

// Independent odd/even median.
double oracle_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

SessionEvaluation fake_eval(DecoderKind kind, std::initializer_list<std::vector<double>> per_task) {
  SessionEvaluation ev;
  ev.kind = kind;
  for (const auto& runs : per_task) {
    RepeatResult r;
    for (double b : runs) {
      SimulationResult s;
      s.bitrate_bps = b;
      r.runs.push_back(s);
    }
    r.median_bitrate = stats::median(runs);
    ev.test_results.push_back(r);
  }
  return ev;
}

}  // namespace

TEST(LogSpaced, EndpointsAndRatio) {
  const auto g = log_spaced(0.05, 20.0, 150);
  ASSERT_EQ(g.size(), 150u);
  EXPECT_EQ(g.front(), 0.05);
  EXPECT_EQ(g.back(), 20.0);
  EXPECT_NEAR(g[1] / g[0], g[100] / g[99], 1e-9);
  EXPECT_EQ(SweepSpec{}.gain_values.size(), 150u);
  EXPECT_EQ(SweepSpec{}.alpha_values.size(), 5u);
}

TEST(SelectBest, DominatingCandidateWins) {
  std::vector<CandidateScore> c{{1.0, 0.9, {1, 1}, 1.0}, {2.0, 0.9, {3, 2}, 2.5}, {3.0, 0.9, {1, 2}, 1.5}};
  const auto r = select_best(c);
  EXPECT_EQ(r.gain, 2.0);
  EXPECT_FALSE(r.zero_score);
}

TEST(SelectBest, TiesPreferSmallerGainThenAlpha) {
  std::vector<CandidateScore> c{{2.0, 0.8, {}, 1.0}, {1.0, 0.97, {}, 1.0}, {1.0, 0.9, {}, 1.0}};
  const auto r = select_best(c);
  EXPECT_EQ(r.gain, 1.0);
  EXPECT_EQ(r.alpha, 0.9);
}

TEST(SelectBest, AllZeroFlagged) {
  std::vector<CandidateScore> c{{5.0, 0.9, {}, 0.0}, {0.5, 0.9, {}, 0.0}};
  const auto r = select_best(c);
  EXPECT_TRUE(r.zero_score);
  EXPECT_EQ(r.gain, 0.5);
  EXPECT_THROW(select_best({}), ValidationError);
}

TEST(OptimalD, FlatCurveGivesZero) {
  std::vector<CurvePoint> p{{0, {}, 1.0}, {1, {}, 1.0}, {2, {}, 1.0}};
  EXPECT_EQ(optimal_d(p), 0);
}

TEST(OptimalD, SmallestArgmax) {
  std::vector<CurvePoint> p{{0, {}, 1.0}, {1, {}, 1.2}, {7, {}, 1.2}};
  EXPECT_EQ(optimal_d(p), 1);
}

TEST(Optimize, OracleGainInsideFeasibleBand) {
  const auto data = small_dataset();
  const auto index = build_block_index(data, {{0, 3}, {0, 4}}, {});
  SweepSpec spec;
  spec.gain_values = log_spaced(0.05, 20.0, 40);
  spec.repeats = 3;
  const auto task = GridTaskConfig::high_speed();
  const auto r = optimize_parameters(DecoderModel::oracle(), index, spec, std::span(&task, 1), 9, {1});
  // Every target reachable: longest travel (corner to far corner cell) plus dwell fits in the timeout.
  const double longest = std::hypot(2.0 - 2.0 / task.n / 2, 2.0 - 2.0 / task.n / 2);
  EXPECT_GE(r.gain, longest / (task.timeout_s - task.dwell_s));
  // The oracle oscillates about the target center by one step, so a step wider
  // than a cell could never dwell.
  EXPECT_LT(r.gain * task.tick_s, 2.0 / task.n);
  EXPECT_GT(r.score, 0.0);
  EXPECT_EQ(r.candidates.size(), 40u);
}

TEST(Optimize, DeterministicAcrossWorkerCounts) {
  const auto data = small_dataset();
  const auto opts = quick_options();
  const auto split = make_split(data, 1, 1);
  const auto model = train_decoder(DecoderKind::kalman, data, split, opts, 1);
  const auto index = build_block_index(data, split.validation_blocks, opts);
  const auto tasks = default_tasks();
  const auto a = optimize_parameters(model, index, opts.sweep, tasks, 4, {1});
  const auto b = optimize_parameters(model, index, opts.sweep, tasks, 4, {3});
  ASSERT_EQ(a.candidates.size(), 16u);
  for (std::size_t i = 0; i < a.candidates.size(); ++i) EXPECT_EQ(a.candidates[i].score, b.candidates[i].score);
  EXPECT_EQ(a.gain, b.gain);
  EXPECT_EQ(a.alpha, b.alpha);
}

TEST(Pipeline, NoTestBlockLeakage) {
  const auto data = small_dataset();
  const auto opts = quick_options();
  const auto split = make_split(data, 1, 1);
  const auto model = train_decoder(DecoderKind::kalman, data, split, opts, 1);
  const auto tasks = default_tasks();
  const auto ev = optimize_and_evaluate(model, data, split, tasks, opts, 3, {1});
  EXPECT_EQ(ev.optimization_sources, split.validation_blocks);
  EXPECT_EQ(ev.evaluation_sources, split.test_blocks);
  for (const auto& ref : ev.optimization_sources) {
    EXPECT_EQ(ref.session_index, 1);
    EXPECT_TRUE(ref.block_id == 3 || ref.block_id == 4);
  }

  // Replacing the test blocks' contents must not change what the optimizer saw.
  auto poisoned = data;
  Rng rng(77);
  for (auto& b : poisoned[1].blocks)
    if (b.block_id >= 5)
      for (Eigen::Index i = 0; i < b.features.size(); ++i) b.features.data()[i] = static_cast<float>(5 * rng.normal());
  const auto ev2 = optimize_and_evaluate(model, poisoned, split, tasks, opts, 3, {1});
  ASSERT_EQ(ev.optimization.candidates.size(), ev2.optimization.candidates.size());
  for (std::size_t i = 0; i < ev.optimization.candidates.size(); ++i)
    EXPECT_EQ(ev.optimization.candidates[i].score, ev2.optimization.candidates[i].score);
}

TEST(Pipeline, FitFailureRecordedNotThrown) {
  auto data = small_dataset();
  for (auto& b : data[0].blocks)
    for (auto& l : b.labels) l.setZero();
  const auto tasks = default_tasks();
  const auto ev = evaluate_session(DecoderKind::kalman, data, 0, 0, tasks, quick_options(), 1, {1});
  EXPECT_TRUE(ev.failed);
  EXPECT_FALSE(ev.failure.empty());
  EXPECT_EQ(ev.combined(), 0.0);
}

TEST(Eligibility, SessionsWithFewerThanFiveBlocksSkipped) {
  auto data = small_dataset(5, 3);
  data[1].blocks.resize(4);
  EXPECT_EQ(eligible_sessions(data), (std::vector<int>{0, 2}));
}

TEST(Exclusion, CauseNames) {
  const std::vector<DecoderKind> k{DecoderKind::rnn, DecoderKind::kalman};
  EXPECT_EQ(exclusion_cause(k, {true, false}), "rnn-failed");
  EXPECT_EQ(exclusion_cause(k, {false, true}), "kalman-failed");
  EXPECT_EQ(exclusion_cause(k, {true, true}), "both-failed");
  EXPECT_EQ(exclusion_cause(k, {false, false}), "");
}

TEST(Exclusion, AggregateMatchesIndependentMedian) {
  ComparisonReport report;
  report.decoders = {DecoderKind::kalman, DecoderKind::rnn};
  report.task_names = {"high-speed", "high-accuracy"};
  Rng rng(3);
  for (int s = 0; s < 7; ++s) {
    SessionComparison sc;
    sc.session_index = s;
    for (int d = 0; d < 2; ++d)
      sc.decoders.push_back(fake_eval(report.decoders[static_cast<std::size_t>(d)],
                                      {{rng.uniform(), rng.uniform(), rng.uniform()}, {rng.uniform(), rng.uniform(), rng.uniform()}}));
    sc.excluded = s == 2 || s == 5;
    sc.cause = sc.excluded ? "rnn-failed" : "";
    report.sessions.push_back(sc);
  }
  finalize_report(report);
  EXPECT_EQ(report.included, 5);
  EXPECT_EQ(report.excluded, 2);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t d = 0; d < 2; ++d) {
      std::vector<double> m;
      for (const auto& s : report.sessions)
        if (!s.excluded) m.push_back(oracle_median(s.decoders[d].test_results[t].bitrates()));
      EXPECT_DOUBLE_EQ(report.aggregate[t][d], oracle_median(m));
    }
}

TEST(HeadToHead, AlwaysFailingDecoderExcludesEverySession) {
  const auto data = small_dataset(5, 2);
  const std::vector<int> tests{0, 1};
  const std::vector<DecoderPlan> plans{{DecoderKind::oracle, 0}, {DecoderKind::null, 0}};
  const auto report = head_to_head(data, tests, plans, quick_options(), 2, {1});
  ASSERT_EQ(report.sessions.size(), 2u);
  EXPECT_EQ(report.included + report.excluded, 2);
  for (const auto& s : report.sessions) {
    EXPECT_TRUE(s.excluded);
    EXPECT_EQ(s.cause, "null-failed");
  }
  EXPECT_TRUE(std::isnan(report.aggregate[0][0]));
}

TEST(HeadToHead, CompletingDecodersIncluded) {
  const auto data = small_dataset(5, 2);
  const std::vector<int> tests{1};
  const std::vector<DecoderPlan> plans{{DecoderKind::oracle, 0}, {DecoderKind::kalman, 1}};
  const auto report = head_to_head(data, tests, plans, quick_options(), 2, {1});
  EXPECT_EQ(report.included, 1);
  EXPECT_FALSE(report.sessions[0].excluded);
  EXPECT_GT(report.aggregate[0][0], 0.0);
}

TEST(GridSweep, OracleNeverFailsAtTwoAndSlowsWithSmallerCells) {
  const auto data = small_dataset(5, 1);
  auto opts = quick_options();
  opts.sweep.gain_values = log_spaced(0.05, 20.0, 30);
  opts.sweep.repeats = 5;
  const std::vector<int> tests{0};
  const std::vector<int> grid{2, 4, 8, 12, 16, 20, 25};
  const std::vector<DecoderPlan> plans{{DecoderKind::oracle, 0}};
  const auto cells = grid_size_sweep(data, tests, grid, plans, opts, 6, {1});
  ASSERT_EQ(cells.size(), grid.size());
  EXPECT_EQ(cells[0].n, 2);
  EXPECT_EQ(cells[0].failures, 0);
  for (std::size_t i = 1; i < cells.size(); ++i)
    EXPECT_GE(cells[i].median_acq_time, cells[i - 1].median_acq_time) << "n " << cells[i].n;
}

TEST(TrainingSize, CurveHasOnePointPerD) {
  const auto data = small_dataset(5, 2);
  const std::vector<int> tests{1};
  const std::vector<int> ds{0, 1, 4};
  const auto curve = training_size_study(DecoderKind::kalman, data, tests, ds, quick_options(), 3, {1});
  ASSERT_EQ(curve.points.size(), 3u);
  // D = 4 clips to the single prior session, so it matches D = 1 exactly.
  EXPECT_EQ(curve.points[2].mean, curve.points[1].mean);
  EXPECT_EQ(curve.optimal_D, optimal_d(curve.points));
}

TEST(Reports, CsvHeadersAndMissingValues) {
  GridSweepCell c;
  c.n = 3;
  c.failures = 1;
  std::ostringstream out;
  write_grid_sweep_csv(std::vector<GridSweepCell>{c}, out);
  EXPECT_EQ(out.str(), "n,decoder,median_bitrate,median_acq_time,failures\n3,kalman,NA,NA,1\n");
}
