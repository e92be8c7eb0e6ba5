#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "bcisim/core.hpp"
#include "bcisim/datamodel.hpp"
#include "bcisim/decoder.hpp"
#include "bcisim/experiments.hpp"
#include "bcisim/simulator.hpp"
#include "bcisim/synthdata.hpp"

// Plain-text experiment configuration:
//
//   # comment
//   key = value
//
// Every key has a default; unknown keys are rejected. The resolved
// configuration is written back in the same format, so a run-metadata file is
// itself a valid config file.

namespace bcisim {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct ExperimentConfig {
  std::string dataset;  // manifest path
  std::string out = ".";
  std::uint64_t seed = 1;
  bool seed_given = false;
  int workers = 0;  // 0: available parallelism

  std::string decoder = "kalman";
  std::string decoders = "kalman,rnn";
  std::string model;  // model file for simulate
  double gain = 1.0;
  double alpha = 0.94;

  std::string task = "high-speed";  // preset name or "custom"
  GridTaskConfig custom_task = GridTaskConfig::sweep(10);
  int repeats = kDefaultRepeats;
  bool trajectory = false;

  std::string test_sessions = "all";
  int test_session = -1;  // -1: the last eligible session
  int prior_sessions = 0;
  int kalman_prior_sessions = 1;
  int rnn_prior_sessions = 7;

  SynthConfig synth{};
  PipelineOptions pipeline{};
  double gain_min = 0.05;
  double gain_max = 20.0;
  int gain_count = SweepSpec::kDefaultGainCount;
  int d_min = 0;
  int d_max = 30;
  int grid_min = 2;
  int grid_max = 25;

  std::string report_dir;

  GridTaskConfig task_config() const {
    if (task == "custom") {
      GridTaskConfig t = custom_task;
      t.name = "custom";
      return t;
    }
    return GridTaskConfig::preset(task);
  }

  Parallelism parallelism() const { return workers > 0 ? Parallelism{static_cast<unsigned>(workers)} : Parallelism::hardware(); }

  SweepSpec sweep() const {
    SweepSpec s = pipeline.sweep;
    s.gain_values = log_spaced(gain_min, gain_max, gain_count);
    s.d_range = int_range(d_min, d_max);
    s.grid_range = int_range(grid_min, grid_max);
    s.repeats = repeats;
    return s;
  }

  PipelineOptions pipeline_options() const {
    PipelineOptions p = pipeline;
    p.sweep = sweep();
    return p;
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class T>
T config_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* first = value.data();
  const auto* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) throw ConfigError("invalid value for " + key + ": '" + value + "'");
  return out;
}

inline bool config_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + value + "'");
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (auto cell : split_csv(value)) out.push_back(config_number<double>(key, trim(std::string(cell))));
  return out;
}

struct ConfigField {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
ConfigField number_field(std::string key, T ExperimentConfig::*member) {
  return {key,
          [key, member](ExperimentConfig& c, const std::string& v) { c.*member = config_number<T>(key, v); },
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
            else return std::to_string(c.*member);
          }};
}

template <class T, class Fn>
ConfigField nested_number(std::string key, Fn access) {
  return {key,
          [key, access](ExperimentConfig& c, const std::string& v) { access(c) = config_number<T>(key, v); },
          [access](const ExperimentConfig& c) {
            const T value = access(const_cast<ExperimentConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) return format_double(value);
            else return std::to_string(value);
          }};
}

inline ConfigField string_field(std::string key, std::string ExperimentConfig::*member) {
  return {key, [member](ExperimentConfig& c, const std::string& v) { c.*member = v; },
          [member](const ExperimentConfig& c) { return c.*member; }};
}

inline const std::vector<ConfigField>& config_fields() {
  using C = ExperimentConfig;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    f.push_back(string_field("dataset", &C::dataset));
    f.push_back(string_field("out", &C::out));
    f.push_back({"seed",
                 [](C& c, const std::string& v) {
                   c.seed = config_number<std::uint64_t>("seed", v);
                   c.seed_given = true;
                 },
                 [](const C& c) { return std::to_string(c.seed); }});
    f.push_back(number_field("workers", &C::workers));
    f.push_back(string_field("decoder", &C::decoder));
    f.push_back(string_field("decoders", &C::decoders));
    f.push_back(string_field("model", &C::model));
    f.push_back(number_field("gain", &C::gain));
    f.push_back(number_field("alpha", &C::alpha));
    f.push_back(string_field("task", &C::task));
    f.push_back(nested_number<int>("task.n", [](C& c) -> int& { return c.custom_task.n; }));
    f.push_back(nested_number<double>("task.dwell_s", [](C& c) -> double& { return c.custom_task.dwell_s; }));
    f.push_back(nested_number<double>("task.timeout_s", [](C& c) -> double& { return c.custom_task.timeout_s; }));
    f.push_back(nested_number<double>("task.run_duration_s", [](C& c) -> double& { return c.custom_task.run_duration_s; }));
    f.push_back(number_field("repeats", &C::repeats));
    f.push_back({"trajectory", [](C& c, const std::string& v) { c.trajectory = config_bool("trajectory", v); },
                 [](const C& c) { return std::string(c.trajectory ? "true" : "false"); }});
    f.push_back(string_field("test_sessions", &C::test_sessions));
    f.push_back(number_field("test_session", &C::test_session));
    f.push_back(number_field("prior_sessions", &C::prior_sessions));
    f.push_back(number_field("kalman.prior_sessions", &C::kalman_prior_sessions));
    f.push_back(number_field("rnn.prior_sessions", &C::rnn_prior_sessions));

    f.push_back(nested_number<int>("synth.feature_count", [](C& c) -> int& { return c.synth.feature_count; }));
    f.push_back(nested_number<int>("synth.sessions", [](C& c) -> int& { return c.synth.sessions; }));
    f.push_back(nested_number<int>("synth.blocks_per_session", [](C& c) -> int& { return c.synth.blocks_per_session; }));
    f.push_back(nested_number<int>("synth.ticks_per_block", [](C& c) -> int& { return c.synth.ticks_per_block; }));
    f.push_back(nested_number<int>("synth.session_spacing_days", [](C& c) -> int& { return c.synth.session_spacing_days; }));
    f.push_back(nested_number<double>("synth.baseline_min", [](C& c) -> double& { return c.synth.baseline_min; }));
    f.push_back(nested_number<double>("synth.baseline_max", [](C& c) -> double& { return c.synth.baseline_max; }));
    f.push_back(nested_number<double>("synth.depth_min", [](C& c) -> double& { return c.synth.depth_min; }));
    f.push_back(nested_number<double>("synth.depth_max", [](C& c) -> double& { return c.synth.depth_max; }));
    f.push_back(nested_number<double>("synth.noise_std", [](C& c) -> double& { return c.synth.noise_std; }));
    f.push_back({"synth.nonlinearity",
                 [](C& c, const std::string& v) {
                   try {
                     c.synth.nonlinearity = parse_nonlinearity(v);
                   } catch (const ValidationError& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [](const C& c) { return to_string(c.synth.nonlinearity); }});
    f.push_back(nested_number<double>("synth.nonlinearity_gain", [](C& c) -> double& { return c.synth.nonlinearity_gain; }));
    f.push_back(nested_number<double>("synth.drift_rate", [](C& c) -> double& { return c.synth.drift_rate; }));
    f.push_back(nested_number<double>("synth.tuning_drift_rate", [](C& c) -> double& { return c.synth.tuning_drift_rate; }));
    f.push_back(nested_number<double>("synth.approach_rate", [](C& c) -> double& { return c.synth.approach_rate; }));
    f.push_back(nested_number<double>("synth.jitter_std", [](C& c) -> double& { return c.synth.jitter_std; }));
    f.push_back(nested_number<double>("synth.hold_radius", [](C& c) -> double& { return c.synth.hold_radius; }));
    f.push_back(nested_number<int>("synth.hold_ticks", [](C& c) -> int& { return c.synth.hold_ticks; }));

    f.push_back(number_field("sweep.gain_min", &C::gain_min));
    f.push_back(number_field("sweep.gain_max", &C::gain_max));
    f.push_back(number_field("sweep.gain_count", &C::gain_count));
    f.push_back({"sweep.alpha_values",
                 [](C& c, const std::string& v) { c.pipeline.sweep.alpha_values = parse_doubles("sweep.alpha_values", v); },
                 [](const C& c) { return join_doubles(c.pipeline.sweep.alpha_values); }});
    f.push_back(number_field("sweep.d_min", &C::d_min));
    f.push_back(number_field("sweep.d_max", &C::d_max));
    f.push_back(number_field("sweep.grid_min", &C::grid_min));
    f.push_back(number_field("sweep.grid_max", &C::grid_max));

    f.push_back(nested_number<int>("rnn.hidden_units", [](C& c) -> int& { return c.pipeline.rnn.hidden_units; }));
    f.push_back(nested_number<int>("rnn.batch_size", [](C& c) -> int& { return c.pipeline.rnn.batch_size; }));
    f.push_back(nested_number<double>("rnn.learning_rate", [](C& c) -> double& { return c.pipeline.rnn.learning_rate; }));
    f.push_back(nested_number<int>("rnn.unroll_steps", [](C& c) -> int& { return c.pipeline.rnn.unroll_steps; }));
    f.push_back(nested_number<double>("rnn.dropout", [](C& c) -> double& { return c.pipeline.rnn.dropout; }));
    f.push_back(nested_number<int>("rnn.epochs", [](C& c) -> int& { return c.pipeline.rnn.epochs; }));
    f.push_back(nested_number<int>("kalman.folds", [](C& c) -> int& { return c.pipeline.kalman_fit.folds; }));
    f.push_back(nested_number<int>("index.angle_bins", [](C& c) -> int& { return c.pipeline.angle_bins; }));
    f.push_back(nested_number<int>("index.dist_bins", [](C& c) -> int& { return c.pipeline.dist_bins; }));
    f.push_back(string_field("report.dir", &C::report_dir));
    return f;
  }();
  return fields;
}

}  // namespace detail

inline void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields())
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : detail::config_fields()) out.push_back(f.key);
  return out;
}

/// Applies `key = value` lines from a stream on top of `config`.
inline void read_config(std::istream& in, ExperimentConfig& config) {
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(row) + ": expected key = value");
    set_config_value(config, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline void load_config(const std::filesystem::path& path, ExperimentConfig& config) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  read_config(in, config);
}

inline void write_config(const ExperimentConfig& config, std::ostream& out) {
  for (const auto& f : detail::config_fields()) out << f.key << " = " << f.get(config) << '\n';
}

}  // namespace bcisim
