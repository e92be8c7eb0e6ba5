#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "bcisim/core.hpp"
#include "bcisim/datamodel.hpp"
#include "bcisim/decoder.hpp"
#include "bcisim/kalman.hpp"
#include "bcisim/parallel.hpp"
#include "bcisim/rnn_trainer.hpp"
#include "bcisim/sampler.hpp"
#include "bcisim/simulator.hpp"
#include "bcisim/stats.hpp"

namespace bcisim {

inline std::vector<double> log_spaced(double lo, double hi, int count) {
  if (count < 1 || !(lo > 0.0) || !(hi >= lo)) throw ValidationError("invalid log-spaced range");
  std::vector<double> out(static_cast<std::size_t>(count));
  if (count == 1) {
    out[0] = lo;
    return out;
  }
  const double step = std::log(hi / lo) / (count - 1);
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = lo * std::exp(step * i);
  out.back() = hi;
  return out;
}

inline std::vector<int> int_range(int lo, int hi) {
  std::vector<int> out;
  for (int v = lo; v <= hi; ++v) out.push_back(v);
  return out;
}

/// Candidate grids and sweep ranges. The defaults are 150 log-spaced gains on
/// [0.05, 20], five Kalman smoothing factors, D in 0..30 and n in 2..25.
struct SweepSpec {
  static constexpr int kDefaultGainCount = 150;

  std::vector<double> gain_values = log_spaced(0.05, 20.0, kDefaultGainCount);
  std::vector<double> alpha_values{0.80, 0.90, 0.94, 0.97, 0.99};
  std::vector<int> d_range = int_range(0, 30);
  std::vector<int> grid_range = int_range(2, 25);
  int repeats = kDefaultRepeats;

  void validate() const {
    if (gain_values.empty() || alpha_values.empty() || d_range.empty() || grid_range.empty())
      throw ValidationError("sweep ranges must be nonempty");
    for (double g : gain_values)
      if (!(g > 0.0)) throw ValidationError("gains must be positive");
    for (double a : alpha_values)
      if (!(a >= 0.0 && a < 1.0)) throw ValidationError("alpha values must lie in [0, 1)");
    for (int d : d_range)
      if (d < 0) throw ValidationError("D values must be nonnegative");
    for (int n : grid_range)
      if (n < 2) throw ValidationError("grid sizes must be >= 2");
    if (repeats < 1) throw ValidationError("repeats must be >= 1");
  }
};

inline std::vector<GridTaskConfig> default_tasks() {
  return {GridTaskConfig::high_speed(), GridTaskConfig::high_accuracy()};
}

// ---------------------------------------------------------------------------
// Gain / smoothing optimization

struct CandidateScore {
  double gain = 0.0;
  double alpha = 0.0;
  std::vector<double> task_medians;
  double score = 0.0;
};

struct OptimizationResult {
  double gain = 0.0;
  double alpha = 0.0;
  double score = 0.0;
  bool zero_score = false;
  std::vector<CandidateScore> candidates;
};

/// Picks the candidate with the largest mean of per-task median bitrates;
/// ties go to the smaller gain, then the smaller alpha.
inline OptimizationResult select_best(std::vector<CandidateScore> candidates) {
  if (candidates.empty()) throw ValidationError("no candidates to select from");
  OptimizationResult r;
  const CandidateScore* best = nullptr;
  for (const auto& c : candidates) {
    if (best == nullptr || c.score > best->score ||
        (c.score == best->score && (c.gain < best->gain || (c.gain == best->gain && c.alpha < best->alpha))))
      best = &c;
  }
  r.gain = best->gain;
  r.alpha = best->alpha;
  r.score = best->score;
  r.zero_score = best->score == 0.0;
  r.candidates = std::move(candidates);
  return r;
}

/// Sweeps the gain (and, for the Kalman, alpha over the joint product) with
/// repeated simulations on every task, all drawing from `validation`.
/// Candidates share per-task seeds so they are compared on common random
/// numbers. Alpha is reported as the model's own alpha for non-Kalman decoders.
inline OptimizationResult optimize_parameters(const DecoderModel& model, const SampleIndex& validation,
                                              const SweepSpec& spec, std::span<const GridTaskConfig> tasks,
                                              std::uint64_t seed, Parallelism par = {}) {
  spec.validate();
  if (tasks.empty()) throw ValidationError("need at least one task");
  std::vector<double> alphas{model.kind == DecoderKind::kalman ? model.kalman->alpha : 0.0};
  if (model.kind == DecoderKind::kalman) alphas = spec.alpha_values;

  std::vector<std::shared_ptr<const DecoderBinding>> bindings;
  for (double a : alphas) {
    if (model.kind == DecoderKind::kalman)
      bindings.push_back(bind_decoder(DecoderModel::from_kalman(with_alpha(*model.kalman, a)), validation));
    else
      bindings.push_back(bind_decoder(model, validation));
  }

  const std::size_t n_gain = spec.gain_values.size();
  const std::size_t n_task = tasks.size();
  const std::size_t cells = alphas.size() * n_gain * n_task * static_cast<std::size_t>(spec.repeats);
  std::vector<double> bitrates(cells);
  parallel_for(cells, par, [&](std::size_t cell) {
    std::size_t rest = cell;
    const auto r = static_cast<int>(rest % static_cast<std::size_t>(spec.repeats));
    rest /= static_cast<std::size_t>(spec.repeats);
    const std::size_t t = rest % n_task;
    rest /= n_task;
    const std::size_t g = rest % n_gain;
    const std::size_t a = rest / n_gain;
    const std::uint64_t task_seed = derive_seed(seed, {0x0971ULL, t});
    bitrates[cell] =
        simulate(*bindings[a], spec.gain_values[g], validation, tasks[t], repeat_seed(task_seed, r)).bitrate_bps;
  });

  std::vector<CandidateScore> candidates;
  const auto reps = static_cast<std::size_t>(spec.repeats);
  for (std::size_t a = 0; a < alphas.size(); ++a)
    for (std::size_t g = 0; g < n_gain; ++g) {
      CandidateScore c;
      c.gain = spec.gain_values[g];
      c.alpha = alphas[a];
      for (std::size_t t = 0; t < n_task; ++t) {
        const std::size_t base = ((a * n_gain + g) * n_task + t) * reps;
        c.task_medians.push_back(stats::median(std::span<const double>(bitrates.data() + base, reps)));
      }
      c.score = stats::mean(c.task_medians);
      candidates.push_back(std::move(c));
    }
  return select_best(std::move(candidates));
}

// ---------------------------------------------------------------------------
// Per-session pipeline: split, train, optimize on validation, evaluate on test.

struct PipelineOptions {
  KalmanFitOptions kalman_fit{};
  TrainConfig rnn{};
  SweepSpec sweep{};
  int angle_bins = SampleIndex::kDefaultAngleBins;
  int dist_bins = SampleIndex::kDefaultDistBins;
  double oracle_gain = 1.0;  // used only when an oracle is evaluated without a sweep
};

/// Fits the requested decoder on the split's training blocks. The Kalman is
/// returned at the first candidate alpha; the RNN selects its epoch on the
/// validation blocks.
inline DecoderModel train_decoder(DecoderKind kind, std::span<const SessionData> sessions, const DataSplit& split,
                                  const PipelineOptions& options, std::uint64_t seed) {
  const auto train = resolve_blocks(sessions, split.train_blocks);
  switch (kind) {
    case DecoderKind::kalman: {
      const auto obs = fit_observation_model(train, options.kalman_fit);
      return DecoderModel::from_kalman(make_kalman_model(obs, options.sweep.alpha_values.front(), 1.0));
    }
    case DecoderKind::rnn: {
      const auto valid = resolve_blocks(sessions, split.validation_blocks);
      TrainConfig cfg = options.rnn;
      cfg.seed = seed;
      return DecoderModel::from_rnn(train_rnn<float>(train, valid, cfg).weights);
    }
    case DecoderKind::oracle: return DecoderModel::oracle(options.oracle_gain);
    case DecoderKind::null: return DecoderModel::null();
  }
  throw ValidationError("unknown decoder kind");
}

struct SessionEvaluation {
  int session_index = 0;
  DecoderKind kind = DecoderKind::null;
  int prior_sessions_used = 0;
  bool failed = false;  // pipeline error (fit/train/convergence)
  std::string failure;
  OptimizationResult optimization;
  std::vector<std::string> task_names;
  std::vector<RepeatResult> test_results;  // one per evaluation task
  std::vector<BlockRef> optimization_sources;
  std::vector<BlockRef> evaluation_sources;

  double task_median(std::size_t t) const { return failed ? 0.0 : test_results[t].median_bitrate; }
  bool task_failed(std::size_t t) const { return failed || test_results[t].all_zero(); }
  double combined() const {
    if (failed) return 0.0;
    double s = 0.0;
    for (const auto& r : test_results) s += r.median_bitrate;
    return s / static_cast<double>(test_results.size());
  }
};

inline SampleIndex build_block_index(std::span<const SessionData> sessions, const std::vector<BlockRef>& refs,
                                     const PipelineOptions& options) {
  const auto blocks = resolve_blocks(sessions, refs);
  return SampleIndex::build(blocks, refs, options.angle_bins, options.dist_bins);
}

/// Optimizes an already-trained decoder on the validation blocks of `split`
/// and evaluates it on the test blocks. The optimization only ever sees an
/// index built from split.validation_blocks.
inline SessionEvaluation optimize_and_evaluate(const DecoderModel& trained, std::span<const SessionData> sessions,
                                               const DataSplit& split, std::span<const GridTaskConfig> tasks,
                                               const PipelineOptions& options, std::uint64_t seed, Parallelism par) {
  SessionEvaluation ev;
  ev.session_index = split.test_session_index;
  ev.kind = trained.kind;
  ev.prior_sessions_used = split.prior_sessions;
  const SampleIndex validation = build_block_index(sessions, split.validation_blocks, options);
  ev.optimization_sources = validation.sources();
  ev.optimization = optimize_parameters(trained, validation, options.sweep, tasks,
                                        derive_seed(seed, {0x0b7ULL, static_cast<std::uint64_t>(split.test_session_index)}),
                                        par);
  DecoderModel tuned = trained;
  if (tuned.kind == DecoderKind::kalman) tuned = DecoderModel::from_kalman(with_alpha(*trained.kalman, ev.optimization.alpha));
  tuned.gain = ev.optimization.gain;

  const SampleIndex test = build_block_index(sessions, split.test_blocks, options);
  ev.evaluation_sources = test.sources();
  const auto binding = bind_decoder(tuned, test);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    ev.task_names.push_back(tasks[t].name);
    ev.test_results.push_back(repeat_simulations(
        *binding, tuned.gain, test, tasks[t],
        derive_seed(seed, {0xe7a1ULL, static_cast<std::uint64_t>(split.test_session_index), t}),
        options.sweep.repeats, par));
  }
  return ev;
}

/// Full pipeline for one (session, decoder, D) cell. Fit, training and
/// convergence errors are recorded in the result instead of propagating.
inline SessionEvaluation evaluate_session(DecoderKind kind, std::span<const SessionData> sessions, int test_session,
                                          int prior_sessions, std::span<const GridTaskConfig> tasks,
                                          const PipelineOptions& options, std::uint64_t seed, Parallelism par = {}) {
  const DataSplit split = make_split(sessions, test_session, prior_sessions);
  const auto failed = [&](const Error& e) {
    SessionEvaluation ev;
    ev.session_index = test_session;
    ev.kind = kind;
    ev.prior_sessions_used = split.prior_sessions;
    ev.failed = true;
    ev.failure = e.what();
    return ev;
  };
  try {
    const DecoderModel trained = train_decoder(
        kind, sessions, split, options,
        derive_seed(seed, {0x7a1ULL, static_cast<std::uint64_t>(test_session), static_cast<std::uint64_t>(kind),
                           static_cast<std::uint64_t>(split.prior_sessions)}));
    return optimize_and_evaluate(trained, sessions, split, tasks, options, seed, par);
  } catch (const FitError& e) {
    return failed(e);
  } catch (const TrainError& e) {
    return failed(e);
  } catch (const ConvergenceError& e) {
    return failed(e);
  }
}

/// Test sessions with at least five blocks, in session order.
inline std::vector<int> eligible_sessions(std::span<const SessionData> sessions) {
  std::vector<int> out;
  for (const auto& s : sessions)
    if (static_cast<int>(s.blocks.size()) >= kMinTestBlocks) out.push_back(s.session_index);
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Training-set-size study

struct CurvePoint {
  int D = 0;
  std::vector<double> session_values;  // combined bitrate per test session
  double mean = 0.0;
  double sem = 0.0;
  int failed_cells = 0;
};

struct TrainingSizeCurve {
  DecoderKind kind = DecoderKind::kalman;
  std::vector<CurvePoint> points;
  int optimal_D = 0;
};

/// Smallest D attaining the maximum of the curve.
inline int optimal_d(std::span<const CurvePoint> points) {
  if (points.empty()) throw ValidationError("empty curve");
  const CurvePoint* best = &points.front();
  for (const auto& p : points)
    if (p.mean > best->mean || (p.mean == best->mean && p.D < best->D)) best = &p;
  return best->D;
}

inline TrainingSizeCurve training_size_study(DecoderKind kind, std::span<const SessionData> sessions,
                                             std::span<const int> test_sessions, std::span<const int> d_range,
                                             const PipelineOptions& options, std::uint64_t seed, Parallelism par = {}) {
  const auto tasks = default_tasks();
  TrainingSizeCurve curve;
  curve.kind = kind;
  for (int d : d_range) {
    CurvePoint p;
    p.D = d;
    for (int s : test_sessions) {
      const auto ev = evaluate_session(kind, sessions, s, d, tasks, options, seed, par);
      if (ev.failed) ++p.failed_cells;
      p.session_values.push_back(ev.combined());
    }
    p.mean = p.session_values.empty() ? 0.0 : stats::mean(p.session_values);
    p.sem = stats::sem(p.session_values);
    curve.points.push_back(std::move(p));
  }
  curve.optimal_D = optimal_d(curve.points);
  return curve;
}

// ---------------------------------------------------------------------------
// Grid-size sweep

struct GridSweepCell {
  int n = 0;
  DecoderKind kind = DecoderKind::kalman;
  int failures = 0;        // sessions whose runs all scored 0 (or whose pipeline failed)
  int sessions = 0;
  double median_bitrate = std::numeric_limits<double>::quiet_NaN();
  double median_acq_time = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> pooled_bitrates;  // runs of non-failed sessions
};

struct DecoderPlan {
  DecoderKind kind = DecoderKind::kalman;
  int prior_sessions = 0;
};

/// For each decoder (trained once per session at its D) and each grid size,
/// optimizes the gain (and alpha) at that grid size on validation blocks and
/// evaluates on test blocks. Medians pool the runs of non-failed sessions.
inline std::vector<GridSweepCell> grid_size_sweep(std::span<const SessionData> sessions,
                                                  std::span<const int> test_sessions, std::span<const int> grid_range,
                                                  std::span<const DecoderPlan> decoders,
                                                  const PipelineOptions& options, std::uint64_t seed,
                                                  Parallelism par = {}) {
  std::map<std::pair<int, int>, GridSweepCell> cells;
  std::map<std::pair<int, int>, std::vector<double>> acq;
  for (const auto& plan : decoders)
    for (int n : grid_range) {
      auto& c = cells[{static_cast<int>(plan.kind), n}];
      c.n = n;
      c.kind = plan.kind;
    }

  for (int s : test_sessions) {
    for (const auto& plan : decoders) {
      const DataSplit split = make_split(sessions, s, plan.prior_sessions);
      std::optional<DecoderModel> trained;
      try {
        trained = train_decoder(plan.kind, sessions, split, options,
                                derive_seed(seed, {0x7a1ULL, static_cast<std::uint64_t>(s),
                                                   static_cast<std::uint64_t>(plan.kind),
                                                   static_cast<std::uint64_t>(split.prior_sessions)}));
      } catch (const Error&) {
        trained.reset();
      }
      for (int n : grid_range) {
        auto& c = cells[{static_cast<int>(plan.kind), n}];
        ++c.sessions;
        if (!trained) {
          ++c.failures;
          continue;
        }
        const GridTaskConfig task = GridTaskConfig::sweep(n);
        const auto ev = optimize_and_evaluate(*trained, sessions, split, std::span<const GridTaskConfig>(&task, 1),
                                              options, derive_seed(seed, {0x9e1dULL, static_cast<std::uint64_t>(n)}),
                                              par);
        if (ev.task_failed(0)) {
          ++c.failures;
          continue;
        }
        for (const auto& run : ev.test_results[0].runs) {
          c.pooled_bitrates.push_back(run.bitrate_bps);
          if (run.mean_acq_time_s) acq[{static_cast<int>(plan.kind), n}].push_back(*run.mean_acq_time_s);
        }
      }
    }
  }

  std::vector<GridSweepCell> out;
  for (auto& [key, c] : cells) {
    if (!c.pooled_bitrates.empty()) c.median_bitrate = stats::median(c.pooled_bitrates);
    const auto& a = acq[key];
    if (!a.empty()) c.median_acq_time = stats::median(a);
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [&](const auto& x, const auto& y) {
    if (x.n != y.n) return x.n < y.n;
    return to_string(x.kind) < to_string(y.kind);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Head-to-head comparison with the exclusion rule

struct SessionComparison {
  int session_index = 0;
  std::vector<std::string> task_names;
  std::vector<SessionEvaluation> decoders;  // parallel to the decoder plans
  bool excluded = false;
  std::string cause;
};

struct ComparisonReport {
  std::vector<DecoderKind> decoders;
  std::vector<std::string> task_names;
  std::vector<SessionComparison> sessions;
  // aggregate[task][decoder]: median over included sessions of per-session medians
  std::vector<std::vector<double>> aggregate;
  int included = 0;
  int excluded = 0;
};

/// Exclusion cause for a session given which decoders failed any task:
/// "<name>-failed" for one, "both-failed" for two, empty when none.
inline std::string exclusion_cause(std::span<const DecoderKind> kinds, const std::vector<bool>& failed) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < kinds.size(); ++i)
    if (failed[i]) names.push_back(to_string(kinds[i]));
  if (names.empty()) return "";
  if (names.size() == 1) return names.front() + "-failed";
  return "both-failed";
}

inline void finalize_report(ComparisonReport& report) {
  report.included = 0;
  report.excluded = 0;
  for (const auto& s : report.sessions) (s.excluded ? report.excluded : report.included)++;
  report.aggregate.assign(report.task_names.size(),
                          std::vector<double>(report.decoders.size(), std::numeric_limits<double>::quiet_NaN()));
  for (std::size_t t = 0; t < report.task_names.size(); ++t)
    for (std::size_t d = 0; d < report.decoders.size(); ++d) {
      std::vector<double> medians;
      for (const auto& s : report.sessions)
        if (!s.excluded) medians.push_back(s.decoders[d].task_median(t));
      if (!medians.empty()) report.aggregate[t][d] = stats::median(medians);
    }
}

/// Per session: train each decoder at its D, optimize on validation blocks
/// with the combined two-task objective, evaluate both tasks on test blocks.
/// A session is excluded when any decoder scores 0 on all runs of any task.
inline ComparisonReport head_to_head(std::span<const SessionData> sessions, std::span<const int> test_sessions,
                                     std::span<const DecoderPlan> decoders, const PipelineOptions& options,
                                     std::uint64_t seed, Parallelism par = {}) {
  const auto tasks = default_tasks();
  ComparisonReport report;
  for (const auto& p : decoders) report.decoders.push_back(p.kind);
  for (const auto& t : tasks) report.task_names.push_back(t.name);
  for (int s : test_sessions) {
    SessionComparison sc;
    sc.session_index = s;
    sc.task_names = report.task_names;
    std::vector<bool> failed_flags;
    for (const auto& p : decoders) {
      sc.decoders.push_back(evaluate_session(p.kind, sessions, s, p.prior_sessions, tasks, options, seed, par));
      const auto& ev = sc.decoders.back();
      bool failed = false;
      for (std::size_t t = 0; t < tasks.size(); ++t) failed = failed || ev.task_failed(t);
      failed_flags.push_back(failed);
    }
    sc.cause = exclusion_cause(report.decoders, failed_flags);
    sc.excluded = !sc.cause.empty();
    report.sessions.push_back(std::move(sc));
  }
  finalize_report(report);
  return report;
}

// ---------------------------------------------------------------------------
// Report CSVs

namespace detail {
inline std::string fmt9(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}
}  // namespace detail

inline void write_training_size_csv(std::span<const TrainingSizeCurve> curves, std::ostream& out) {
  out << "decoder,D,mean_bitrate,sem\n";
  for (const auto& c : curves)
    for (const auto& p : c.points)
      out << to_string(c.kind) << ',' << p.D << ',' << detail::fmt9(p.mean) << ',' << detail::fmt9(p.sem) << '\n';
}

inline void write_grid_sweep_csv(std::span<const GridSweepCell> cells, std::ostream& out) {
  out << "n,decoder,median_bitrate,median_acq_time,failures\n";
  for (const auto& c : cells)
    out << c.n << ',' << to_string(c.kind) << ',' << detail::fmt9(c.median_bitrate) << ','
        << detail::fmt9(c.median_acq_time) << ',' << c.failures << '\n';
}

inline void write_head_to_head_csv(const ComparisonReport& report, std::ostream& out) {
  out << "session,task,decoder,median_bitrate,excluded,cause\n";
  for (const auto& s : report.sessions)
    for (std::size_t t = 0; t < report.task_names.size(); ++t)
      for (std::size_t d = 0; d < report.decoders.size(); ++d)
        out << s.session_index << ',' << report.task_names[t] << ',' << to_string(report.decoders[d]) << ','
            << detail::fmt9(s.decoders[d].task_median(t)) << ',' << (s.excluded ? 1 : 0) << ',' << s.cause << '\n';
}

/// Every simulated run behind head_to_head.csv, for pooled statistics.
inline void write_head_to_head_runs_csv(const ComparisonReport& report, std::ostream& out) {
  out << "session,task,decoder,repeat,bitrate\n";
  for (const auto& s : report.sessions)
    for (std::size_t t = 0; t < report.task_names.size(); ++t)
      for (std::size_t d = 0; d < report.decoders.size(); ++d) {
        const auto& ev = s.decoders[d];
        if (ev.failed) continue;
        const auto& runs = ev.test_results[t].runs;
        for (std::size_t r = 0; r < runs.size(); ++r)
          out << s.session_index << ',' << report.task_names[t] << ',' << to_string(report.decoders[d]) << ',' << r
              << ',' << detail::fmt9(runs[r].bitrate_bps) << '\n';
      }
}

}  // namespace bcisim
