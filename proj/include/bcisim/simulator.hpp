#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "bcisim/core.hpp"
#include "bcisim/decoder.hpp"
#include "bcisim/parallel.hpp"
#include "bcisim/rng.hpp"
#include "bcisim/sampler.hpp"
#include "bcisim/stats.hpp"

namespace bcisim {

struct GridTaskConfig {
  std::string name = "custom";
  int n = 10;
  double dwell_s = 0.5;
  double timeout_s = 5.0;
  double run_duration_s = 120.0;
  double tick_s = kTickSeconds;

  static GridTaskConfig high_accuracy() { return {"high-accuracy", 15, 2.0, 10.0}; }
  static GridTaskConfig high_speed() { return {"high-speed", 10, 0.5, 5.0}; }
  static GridTaskConfig sweep(int n) { return {"sweep", n, 1.0, 5.0}; }

  static GridTaskConfig preset(const std::string& name) {
    if (name == "high-accuracy") return high_accuracy();
    if (name == "high-speed") return high_speed();
    if (name == "sweep") return sweep(10);
    throw ValidationError("unknown task preset '" + name + "'");
  }

  void validate() const {
    if (n < 2) throw ValidationError("grid size must be >= 2");
    if (!(dwell_s > 0.0)) throw ValidationError("dwell must be positive");
    if (!(timeout_s > dwell_s)) throw ValidationError("timeout must exceed dwell");
    if (!(tick_s > 0.0) || !(run_duration_s > 0.0)) throw ValidationError("tick and run duration must be positive");
  }

  // Durations in whole ticks, so the state machine never compares floats.
  long dwell_ticks() const { return std::lround(dwell_s / tick_s); }
  long timeout_ticks() const { return std::lround(timeout_s / tick_s); }
  long run_ticks() const { return std::lround(run_duration_s / tick_s); }
};

/// n x n square cells tiling the [-1, 1]^2 workspace. Cell = row * n + col,
/// row counted from y = -1; cells are half-open except on the far edges.
struct GridGeometry {
  int n;

  int index_1d(double v) const {
    const int i = static_cast<int>(std::floor((v + 1.0) * n / 2.0));
    return std::clamp(i, 0, n - 1);
  }
  int cell_of(const Vec2& p) const { return index_1d(p.y()) * n + index_1d(p.x()); }
  Vec2 center(int cell) const {
    const double w = 2.0 / n;
    return {-1.0 + w * ((cell % n) + 0.5), -1.0 + w * ((cell / n) + 0.5)};
  }
  int cells() const { return n * n; }
};

enum class TrialOutcome { correct, wrong_select, timeout };

inline std::string to_string(TrialOutcome o) {
  switch (o) {
    case TrialOutcome::correct: return "correct";
    case TrialOutcome::wrong_select: return "wrong-select";
    case TrialOutcome::timeout: return "timeout";
  }
  return "timeout";
}

struct TrialRecord {
  int target_cell = 0;
  TrialOutcome outcome = TrialOutcome::timeout;
  double duration_s = 0.0;
  int selected_cell = -1;
  Vec2 start_position = Vec2::Zero();
};

struct SimulationResult {
  int n = 0;
  std::vector<TrialRecord> trials;
  int S_c = 0;
  int S_i = 0;
  double elapsed_s = 0.0;
  double bitrate_bps = 0.0;
  std::optional<double> mean_acq_time_s;
};

/// Information throughput: log2(N - 1) * max(S_c - S_i, 0) / t.
inline double bitrate(long symbols, long correct, long incorrect, double seconds) {
  if (!(seconds > 0.0)) throw DomainError("bitrate needs t > 0");
  if (symbols < 2) throw DomainError("bitrate needs N >= 2");
  if (correct < 0 || incorrect < 0) throw DomainError("selection counts must be nonnegative");
  return std::log2(static_cast<double>(symbols - 1)) * static_cast<double>(std::max(correct - incorrect, 0L)) / seconds;
}

/// Mean duration over correct trials; nullopt when there are none.
inline std::optional<double> acquisition_time(const SimulationResult& result) {
  double sum = 0.0;
  int count = 0;
  for (const auto& t : result.trials)
    if (t.outcome == TrialOutcome::correct) {
      sum += t.duration_s;
      ++count;
    }
  if (count == 0) return std::nullopt;
  return sum / count;
}

/// Optional per-tick trace for plotting trajectories.
struct TrajectoryLog {
  struct Row {
    int trial;
    long tick;
    Vec2 cursor;
    int target_cell;
    std::string event;
  };
  std::vector<Row> rows;

  void write_csv(std::ostream& out) const {
    out << "trial,tick,cursor_x,cursor_y,target_cell,event\n";
    char buf[64];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%.9g,%.9g", r.cursor.x(), r.cursor.y());
      out << r.trial << ',' << r.tick << ',' << buf << ',' << r.target_cell << ',' << r.event << '\n';
    }
  }
};

/// One 2-minute Grid-task run. The cursor starts at the workspace center and
/// persists across trials; each trial's target is a uniformly random cell other
/// than the one under the cursor. Every tick the cursor-to-target vector picks
/// a pooled sample, the decoder turns it into a velocity and the cursor moves
/// by gain * v * tick, clamped to the workspace. Leaving a cell resets the
/// dwell clock; dwelling selects the cell, and the timeout ends the trial.
/// A trial still running at the end of the run is discarded but its time is
/// counted in t.
inline SimulationResult simulate(const DecoderBinding& decoder, double gain, const SampleIndex& index,
                                 const GridTaskConfig& config, std::uint64_t seed, TrajectoryLog* log = nullptr) {
  config.validate();
  const GridGeometry grid{config.n};
  const long dwell_ticks = config.dwell_ticks();
  const long timeout_ticks = config.timeout_ticks();
  const long run_ticks = config.run_ticks();

  Rng rng(seed);
  auto run = decoder.start();
  SimulationResult result;
  result.n = config.n;

  Vec2 cursor = Vec2::Zero();
  long total = 0;
  int trial_no = 0;
  while (total < run_ticks) {
    const int here = grid.cell_of(cursor);
    int target = static_cast<int>(rng.index(static_cast<std::uint64_t>(grid.cells() - 1)));
    if (target >= here) ++target;
    TrialRecord trial;
    trial.target_cell = target;
    trial.start_position = cursor;
    const Vec2 target_center = grid.center(target);
    int dwell_cell = here;
    long dwell = 0;
    long elapsed = 0;
    bool finished = false;
    if (log) log->rows.push_back({trial_no, total, cursor, target, "start"});
    while (total < run_ticks) {
      const Vec2 c2t = target_center - cursor;
      const std::size_t sample = index.draw_index(c2t, rng);
      const Vec2 v = run->step(sample, c2t);
      if (!v.allFinite()) throw DecodeError("decoder produced a non-finite velocity");
      cursor = (cursor + gain * v * config.tick_s).cwiseMax(-1.0).cwiseMin(1.0);
      ++total;
      ++elapsed;
      const int cell = grid.cell_of(cursor);
      if (cell == dwell_cell) {
        ++dwell;
      } else {
        dwell_cell = cell;
        dwell = 0;
      }
      const char* event = "move";
      if (dwell >= dwell_ticks) {
        trial.selected_cell = cell;
        trial.outcome = cell == target ? TrialOutcome::correct : TrialOutcome::wrong_select;
        event = cell == target ? "select-correct" : "select-wrong";
        finished = true;
      } else if (elapsed >= timeout_ticks) {
        trial.outcome = TrialOutcome::timeout;
        event = "timeout";
        finished = true;
      }
      if (log) log->rows.push_back({trial_no, total, cursor, target, event});
      if (finished) break;
    }
    if (!finished) break;  // cut off by the end of the run
    trial.duration_s = static_cast<double>(elapsed) * config.tick_s;
    if (trial.outcome == TrialOutcome::correct) ++result.S_c;
    if (trial.outcome == TrialOutcome::wrong_select) ++result.S_i;
    result.trials.push_back(trial);
    ++trial_no;
  }
  result.elapsed_s = static_cast<double>(total) * config.tick_s;
  result.bitrate_bps = bitrate(static_cast<long>(grid.cells()), result.S_c, result.S_i, result.elapsed_s);
  result.mean_acq_time_s = acquisition_time(result);
  return result;
}

inline SimulationResult run_grid_simulation(const DecoderModel& decoder, const SampleIndex& index,
                                            const GridTaskConfig& config, std::uint64_t seed,
                                            TrajectoryLog* log = nullptr) {
  const auto binding = bind_decoder(decoder, index);
  return simulate(*binding, decoder.gain, index, config, seed, log);
}

struct RepeatResult {
  std::vector<SimulationResult> runs;
  double median_bitrate = 0.0;

  std::vector<double> bitrates() const {
    std::vector<double> out;
    for (const auto& r : runs) out.push_back(r.bitrate_bps);
    return out;
  }
  bool all_zero() const {
    return std::all_of(runs.begin(), runs.end(), [](const auto& r) { return r.bitrate_bps == 0.0; });
  }
};

inline constexpr int kDefaultRepeats = 30;

inline std::uint64_t repeat_seed(std::uint64_t master_seed, int repeat) {
  return derive_seed(master_seed, {0x7e9eULL, static_cast<std::uint64_t>(repeat)});
}

/// Runs `repeats` simulations with seeds derived from (master_seed, repeat).
inline RepeatResult repeat_simulations(const DecoderBinding& decoder, double gain, const SampleIndex& index,
                                       const GridTaskConfig& config, std::uint64_t master_seed,
                                       int repeats = kDefaultRepeats, Parallelism par = {}) {
  if (repeats < 1) throw ValidationError("repeats must be >= 1");
  RepeatResult out;
  out.runs.resize(static_cast<std::size_t>(repeats));
  parallel_for(out.runs.size(), par, [&](std::size_t r) {
    out.runs[r] = simulate(decoder, gain, index, config, repeat_seed(master_seed, static_cast<int>(r)));
  });
  const auto b = out.bitrates();
  out.median_bitrate = stats::median(b);
  return out;
}

inline RepeatResult repeat_simulations(const DecoderModel& decoder, const SampleIndex& index,
                                       const GridTaskConfig& config, std::uint64_t master_seed,
                                       int repeats = kDefaultRepeats, Parallelism par = {}) {
  const auto binding = bind_decoder(decoder, index);
  return repeat_simulations(*binding, decoder.gain, index, config, master_seed, repeats, par);
}

}  // namespace bcisim
