// bcisim command-line driver.
//
//   bcisim <command> [--config FILE] [--set key=value ...] [flags]
//
// Values are resolved as defaults < config file < flags. Every command writes
// run_metadata.txt next to its outputs; it is a config file that reproduces
// the run with `bcisim <command> --config run_metadata.txt`.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bcisim/config.hpp"
#include "bcisim/datamodel.hpp"
#include "bcisim/decoder.hpp"
#include "bcisim/experiments.hpp"
#include "bcisim/model_io.hpp"
#include "bcisim/rnn_trainer.hpp"
#include "bcisim/simulator.hpp"
#include "bcisim/stats.hpp"
#include "bcisim/synthdata.hpp"

namespace fs = std::filesystem;
using namespace bcisim;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Invocation {
  std::string command;
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
};

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_metadata(const Invocation& inv, const ExperimentConfig& config) {
  auto out = open_output(fs::path(config.out) / "run_metadata.txt");
  out << "# bcisim " << kVersion << '\n';
  out << "# command: " << inv.command << '\n';
  write_config(config, out);
}

std::vector<SessionData> load_prepared(const ExperimentConfig& config) {
  std::vector<SessionData> out;
  for (auto& s : load_dataset(config.dataset)) out.push_back(prepare_session(std::move(s)));
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (auto cell : detail::split_csv(text)) out.push_back(detail::config_number<int>(key, detail::trim(std::string(cell))));
  return out;
}

std::vector<DecoderKind> parse_kinds(const std::string& text) {
  std::vector<DecoderKind> out;
  for (auto cell : detail::split_csv(text)) {
    try {
      out.push_back(parse_decoder_kind(detail::trim(std::string(cell))));
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  if (out.empty()) throw ConfigError("decoders list is empty");
  return out;
}

std::vector<int> resolve_test_sessions(const ExperimentConfig& config, std::span<const SessionData> sessions) {
  if (config.test_sessions == "all") return eligible_sessions(sessions);
  return parse_int_list("test_sessions", config.test_sessions);
}

int resolve_test_session(const ExperimentConfig& config, std::span<const SessionData> sessions) {
  if (config.test_session >= 0) return config.test_session;
  const auto eligible = eligible_sessions(sessions);
  if (eligible.empty()) throw IneligibleSessionError("dataset has no session with at least 5 blocks");
  return eligible.back();
}

int prior_sessions_for(const ExperimentConfig& config, DecoderKind kind) {
  if (kind == DecoderKind::kalman) return config.kalman_prior_sessions;
  if (kind == DecoderKind::rnn) return config.rnn_prior_sessions;
  return 0;
}

std::vector<DecoderPlan> plans(const ExperimentConfig& config) {
  std::vector<DecoderPlan> out;
  for (auto k : parse_kinds(config.decoders)) out.push_back({k, prior_sessions_for(config, k)});
  return out;
}

// Oracle and null decoders ignore features, so without a dataset they run on
// a one-feature pool that covers every angle x distance bin.
SampleIndex placeholder_index(const ExperimentConfig& config) {
  std::vector<LabeledSample> pool;
  const int a = config.pipeline.angle_bins;
  const int d = config.pipeline.dist_bins;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < a; ++j) {
      const double r = (i + 0.5) * SampleIndex::kDefaultMaxDist / d;
      const double th = (j + 0.5) * 2.0 * std::numbers::pi / a;
      pool.push_back({{0.0f}, Vec2(r * std::cos(th), r * std::sin(th)), 0, 0});
    }
  return SampleIndex::build(pool, a, d);
}

void validate_config(const Invocation& inv, const ExperimentConfig& config) {
  try {
    if (inv.command != "report" && !config.seed_given)
      throw ConfigError("a seed is required (--seed or seed = ...)");
    if (config.workers < 0) throw ConfigError("workers must be >= 0");
    if (inv.command == "synth") config.synth.validate();
    if (inv.command == "simulate") config.task_config().validate();
    if (inv.command != "synth" && inv.command != "report") {
      config.sweep().validate();
      config.pipeline.rnn.validate();
    }
    if (config.kalman_prior_sessions < 0 || config.rnn_prior_sessions < 0 || config.prior_sessions < 0)
      throw ConfigError("prior session counts must be >= 0");
    parse_kinds(config.decoders);
    parse_decoder_kind(config.decoder);
  } catch (const ConfigError&) {
    throw;
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  const bool needs_dataset = inv.command == "train" || inv.command == "optimize" || inv.command == "study-d" ||
                             inv.command == "sweep-grid" || inv.command == "compare";
  if (needs_dataset && config.dataset.empty()) throw ConfigError(inv.command + " needs a dataset manifest");
  if (!config.dataset.empty() && !fs::exists(config.dataset))
    throw ConfigError("dataset manifest not found: " + config.dataset);
  if (!config.model.empty() && !fs::exists(config.model)) throw ConfigError("model file not found: " + config.model);
  if (inv.command == "report") {
    const fs::path dir = config.report_dir.empty() ? fs::path(config.out) : fs::path(config.report_dir);
    if (!fs::exists(dir / "head_to_head_runs.csv")) throw ConfigError("no head_to_head_runs.csv in " + dir.string());
  }
}

// ---------------------------------------------------------------------------

void cmd_synth(const ExperimentConfig& config) {
  SynthConfig sc = config.synth;
  sc.seed = config.seed;
  const auto sessions = generate_dataset(sc);
  std::vector<ManifestEntry> manifest;
  for (const auto& s : sessions) {
    char name[32];
    std::snprintf(name, sizeof name, "session_%03d.csv", s.session_index);
    write_session(s, fs::path(config.out) / name);
    manifest.push_back({s.session_index, s.calendar_day, name});
  }
  write_manifest(manifest, fs::path(config.out) / "manifest.csv");
  std::cout << "wrote " << sessions.size() << " sessions to " << config.out << '\n';
}

void cmd_train(const ExperimentConfig& config) {
  const auto sessions = load_prepared(config);
  const DecoderKind kind = parse_decoder_kind(config.decoder);
  if (kind != DecoderKind::kalman && kind != DecoderKind::rnn) throw ConfigError("train supports kalman and rnn");
  const int test = resolve_test_session(config, sessions);
  const DataSplit split = make_split(sessions, test, config.prior_sessions);
  const auto train = resolve_blocks(sessions, split.train_blocks);
  const fs::path model_path = fs::path(config.out) / ("model_" + to_string(kind) + ".txt");
  if (kind == DecoderKind::kalman) {
    auto options = config.pipeline.kalman_fit;
    const auto obs = fit_observation_model(train, options);
    save_decoder(DecoderModel::from_kalman(make_kalman_model(obs, config.alpha, config.gain)), model_path);
    std::cout << "ridge lambda " << obs.ridge_lambda << '\n';
  } else {
    TrainConfig tc = config.pipeline.rnn;
    tc.seed = config.seed;
    const auto valid = resolve_blocks(sessions, split.validation_blocks);
    const auto result = train_rnn<float>(train, valid, tc);
    save_decoder(DecoderModel::from_rnn(result.weights, config.gain), model_path);
    auto out = open_output(fs::path(config.out) / "training_loss.csv");
    out << "epoch,train_loss,valid_loss\n";
    for (std::size_t e = 0; e < result.train_loss.size(); ++e)
      out << e << ',' << detail::fmt9(result.train_loss[e]) << ',' << detail::fmt9(result.valid_loss[e]) << '\n';
    std::cout << "best epoch " << result.best_epoch << '\n';
  }
  std::cout << "wrote " << model_path.string() << '\n';
}

void cmd_simulate(const ExperimentConfig& config) {
  const GridTaskConfig task = config.task_config();
  std::vector<SessionData> sessions;
  DecoderModel model = DecoderModel::null();
  std::optional<SampleIndex> index;
  const PipelineOptions options = config.pipeline_options();

  if (!config.dataset.empty()) {
    sessions = load_prepared(config);
    const int test = resolve_test_session(config, sessions);
    const DataSplit split = make_split(sessions, test, config.prior_sessions);
    index = build_block_index(sessions, split.test_blocks, options);
    if (!config.model.empty()) {
      model = load_decoder(config.model, config.gain);
    } else {
      model = train_decoder(parse_decoder_kind(config.decoder), sessions, split, options, config.seed);
    }
  } else {
    if (!config.model.empty()) throw ConfigError("simulating a model file needs a dataset for its sample pool");
    const DecoderKind kind = parse_decoder_kind(config.decoder);
    if (kind == DecoderKind::oracle) model = DecoderModel::oracle();
    else if (kind == DecoderKind::null) model = DecoderModel::null();
    else throw ConfigError(config.decoder + " needs a dataset");
    index = placeholder_index(config);
  }
  if (model.kind == DecoderKind::kalman) model = DecoderModel::from_kalman(with_alpha(*model.kalman, config.alpha));
  model.gain = config.gain;

  const auto binding = bind_decoder(model, *index);
  const auto result = repeat_simulations(*binding, model.gain, *index, task, config.seed, config.repeats,
                                         config.parallelism());
  auto out = open_output(fs::path(config.out) / "simulate.csv");
  out << "repeat,decoder,task,n,bitrate,correct,incorrect,timeouts,elapsed_s,mean_acq_time_s\n";
  for (std::size_t r = 0; r < result.runs.size(); ++r) {
    const auto& run = result.runs[r];
    const auto timeouts = static_cast<long>(run.trials.size()) - run.S_c - run.S_i;
    out << r << ',' << to_string(model.kind) << ',' << task.name << ',' << task.n << ','
        << detail::fmt9(run.bitrate_bps) << ',' << run.S_c << ',' << run.S_i << ',' << timeouts << ','
        << detail::fmt9(run.elapsed_s) << ','
        << detail::fmt9(run.mean_acq_time_s.value_or(std::numeric_limits<double>::quiet_NaN())) << '\n';
  }
  if (config.trajectory) {
    TrajectoryLog log;
    simulate(*binding, model.gain, *index, task, repeat_seed(config.seed, 0), &log);
    auto tout = open_output(fs::path(config.out) / "trajectory.csv");
    log.write_csv(tout);
  }
  std::cout << "median bitrate " << result.median_bitrate << " bps over " << result.runs.size() << " runs\n";
}

void cmd_optimize(const ExperimentConfig& config) {
  const auto sessions = load_prepared(config);
  const DecoderKind kind = parse_decoder_kind(config.decoder);
  const int test = resolve_test_session(config, sessions);
  const PipelineOptions options = config.pipeline_options();
  const DataSplit split = make_split(sessions, test, config.prior_sessions);
  const DecoderModel model = train_decoder(kind, sessions, split, options, config.seed);
  const auto tasks = default_tasks();
  const auto ev = optimize_and_evaluate(model, sessions, split, tasks, options, config.seed, config.parallelism());

  auto out = open_output(fs::path(config.out) / "optimization.csv");
  out << "gain,alpha";
  for (const auto& t : tasks) out << ',' << t.name;
  out << ",score\n";
  for (const auto& c : ev.optimization.candidates) {
    out << detail::fmt9(c.gain) << ',' << detail::fmt9(c.alpha);
    for (double m : c.task_medians) out << ',' << detail::fmt9(m);
    out << ',' << detail::fmt9(c.score) << '\n';
  }
  auto best = open_output(fs::path(config.out) / "optimum.csv");
  best << "session,decoder,gain,alpha,validation_score,zero_score";
  for (const auto& t : tasks) best << ",test_" << t.name;
  best << '\n' << test << ',' << to_string(kind) << ',' << detail::fmt9(ev.optimization.gain) << ','
       << detail::fmt9(ev.optimization.alpha) << ',' << detail::fmt9(ev.optimization.score) << ','
       << (ev.optimization.zero_score ? 1 : 0);
  for (std::size_t t = 0; t < tasks.size(); ++t) best << ',' << detail::fmt9(ev.task_median(t));
  best << '\n';
  std::cout << "gain " << ev.optimization.gain << " alpha " << ev.optimization.alpha << " score "
            << ev.optimization.score << '\n';
}

void cmd_study_d(const ExperimentConfig& config) {
  const auto sessions = load_prepared(config);
  const auto tests = resolve_test_sessions(config, sessions);
  const PipelineOptions options = config.pipeline_options();
  std::vector<TrainingSizeCurve> curves;
  for (auto kind : parse_kinds(config.decoders)) {
    curves.push_back(training_size_study(kind, sessions, tests, options.sweep.d_range, options, config.seed,
                                         config.parallelism()));
    std::cout << to_string(kind) << " optimal D " << curves.back().optimal_D << '\n';
  }
  auto out = open_output(fs::path(config.out) / "training_size_curve.csv");
  write_training_size_csv(curves, out);
}

void cmd_sweep_grid(const ExperimentConfig& config) {
  const auto sessions = load_prepared(config);
  const auto tests = resolve_test_sessions(config, sessions);
  const PipelineOptions options = config.pipeline_options();
  const auto p = plans(config);
  const auto cells = grid_size_sweep(sessions, tests, options.sweep.grid_range, p, options, config.seed,
                                     config.parallelism());
  auto out = open_output(fs::path(config.out) / "grid_sweep.csv");
  write_grid_sweep_csv(cells, out);
}

void cmd_compare(const ExperimentConfig& config) {
  const auto sessions = load_prepared(config);
  const auto tests = resolve_test_sessions(config, sessions);
  const PipelineOptions options = config.pipeline_options();
  const auto p = plans(config);
  const auto report = head_to_head(sessions, tests, p, options, config.seed, config.parallelism());
  auto out = open_output(fs::path(config.out) / "head_to_head.csv");
  write_head_to_head_csv(report, out);
  auto runs = open_output(fs::path(config.out) / "head_to_head_runs.csv");
  write_head_to_head_runs_csv(report, runs);
  std::cout << report.included << " sessions included, " << report.excluded << " excluded\n";
}

// Pools the per-run bitrates of included sessions and compares decoders
// pairwise with a rank-sum test.
void cmd_report(const ExperimentConfig& config) {
  const fs::path dir = config.report_dir.empty() ? fs::path(config.out) : fs::path(config.report_dir);
  std::map<int, bool> excluded;
  if (fs::exists(dir / "head_to_head.csv")) {
    std::ifstream in(dir / "head_to_head.csv");
    std::string line;
    std::getline(in, line);
    std::size_t row = 1;
    while (std::getline(in, line)) {
      ++row;
      detail::strip_cr(line);
      if (line.empty()) continue;
      const auto cells = detail::split_csv(line);
      if (cells.size() != 6) throw ParseError(row, "head_to_head.csv rows have 6 columns");
      excluded[detail::parse_number<int>(cells[0], row, "session")] = cells[4] == "1";
    }
  }
  std::map<std::string, std::map<std::string, std::vector<double>>> pooled;  // task -> decoder -> runs
  std::vector<std::string> task_order, decoder_order;
  {
    std::ifstream in(dir / "head_to_head_runs.csv");
    std::string line;
    std::getline(in, line);
    detail::strip_cr(line);
    if (line != "session,task,decoder,repeat,bitrate") throw ParseError(1, "unexpected head_to_head_runs.csv header");
    std::size_t row = 1;
    while (std::getline(in, line)) {
      ++row;
      detail::strip_cr(line);
      if (line.empty()) continue;
      const auto cells = detail::split_csv(line);
      if (cells.size() != 5) throw ParseError(row, "head_to_head_runs.csv rows have 5 columns");
      const int session = detail::parse_number<int>(cells[0], row, "session");
      if (excluded[session]) continue;
      const std::string task(cells[1]), decoder(cells[2]);
      if (std::find(task_order.begin(), task_order.end(), task) == task_order.end()) task_order.push_back(task);
      if (std::find(decoder_order.begin(), decoder_order.end(), decoder) == decoder_order.end())
        decoder_order.push_back(decoder);
      pooled[task][decoder].push_back(detail::parse_number<double>(cells[4], row, "bitrate"));
    }
  }
  auto out = open_output(fs::path(config.out) / "summary.csv");
  out << "task,decoder,runs,median_bitrate\n";
  for (const auto& t : task_order)
    for (const auto& d : decoder_order) {
      const auto& v = pooled[t][d];
      out << t << ',' << d << ',' << v.size() << ','
          << detail::fmt9(v.empty() ? std::numeric_limits<double>::quiet_NaN() : stats::median(v)) << '\n';
    }
  auto rs = open_output(fs::path(config.out) / "rank_sum.csv");
  rs << "task,decoder_a,decoder_b,u_statistic,z,p_a_greater,p_two_sided\n";
  for (const auto& t : task_order)
    for (std::size_t i = 0; i < decoder_order.size(); ++i)
      for (std::size_t j = i + 1; j < decoder_order.size(); ++j) {
        const auto& a = pooled[t][decoder_order[i]];
        const auto& b = pooled[t][decoder_order[j]];
        if (a.empty() || b.empty()) continue;
        const auto r = stats::rank_sum(a, b);
        rs << t << ',' << decoder_order[i] << ',' << decoder_order[j] << ',' << detail::fmt9(r.u_statistic) << ','
           << detail::fmt9(r.z) << ',' << detail::fmt9(r.p_greater) << ',' << detail::fmt9(r.p_two_sided) << '\n';
      }
}

void run(const Invocation& inv, const ExperimentConfig& config) {
  fs::create_directories(config.out);
  write_metadata(inv, config);
  if (inv.command == "synth") cmd_synth(config);
  else if (inv.command == "train") cmd_train(config);
  else if (inv.command == "simulate") cmd_simulate(config);
  else if (inv.command == "optimize") cmd_optimize(config);
  else if (inv.command == "study-d") cmd_study_d(config);
  else if (inv.command == "sweep-grid") cmd_sweep_grid(config);
  else if (inv.command == "compare") cmd_compare(config);
  else if (inv.command == "report") cmd_report(config);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline decoder training and closed-loop Grid-task simulation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Invocation inv;
  struct Flag {
    const char* name;
    const char* key;
    const char* help;
  };
  const std::vector<Flag> common{
      {"--out", "out", "Output directory"},
      {"--seed", "seed", "Master seed"},
      {"--workers", "workers", "Worker threads (default: available parallelism)"},
      {"--dataset", "dataset", "Dataset manifest CSV"},
  };
  const std::map<std::string, std::vector<Flag>> extra{
      {"synth", {}},
      {"train",
       {{"--decoder", "decoder", "kalman or rnn"},
        {"--test-session", "test_session", "Test session index"},
        {"--prior-sessions", "prior_sessions", "Prior sessions D"}}},
      {"simulate",
       {{"--decoder", "decoder", "kalman, rnn, oracle or null"},
        {"--model", "model", "Model file from `train`"},
        {"--preset", "task", "high-speed, high-accuracy, sweep or custom"},
        {"--gain", "gain", "Output gain"},
        {"--alpha", "alpha", "Kalman smoothing"},
        {"--repeats", "repeats", "Simulated runs"},
        {"--test-session", "test_session", "Session whose test blocks form the pool"},
        {"--prior-sessions", "prior_sessions", "Prior sessions D when training in place"}}},
      {"optimize",
       {{"--decoder", "decoder", "kalman, rnn or oracle"},
        {"--test-session", "test_session", "Test session index"},
        {"--prior-sessions", "prior_sessions", "Prior sessions D"},
        {"--repeats", "repeats", "Simulated runs per candidate"}}},
      {"study-d", {{"--decoders", "decoders", "Comma-separated decoders"}}},
      {"sweep-grid", {{"--decoders", "decoders", "Comma-separated decoders"}}},
      {"compare", {{"--decoders", "decoders", "Comma-separated decoders"}}},
      {"report", {{"--dir", "report.dir", "Directory holding head_to_head_runs.csv"}}},
  };
  const std::vector<std::pair<std::string, std::string>> descriptions{
      {"synth", "Generate a synthetic multi-session dataset"},
      {"train", "Fit a Kalman or train an RNN decoder"},
      {"simulate", "Run repeated Grid-task simulations"},
      {"optimize", "Optimize gain (and smoothing) on validation blocks"},
      {"study-d", "Training-set-size study over prior sessions D"},
      {"sweep-grid", "Grid-size sweep"},
      {"compare", "Head-to-head comparison with the exclusion rule"},
      {"report", "Pooled medians and rank-sum tests from compare output"},
  };

  std::vector<std::string> sets;
  std::map<std::string, std::string> flag_values;
  std::vector<std::pair<std::string, CLI::Option*>> flag_options;
  for (const auto& [name, desc] : descriptions) {
    auto* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", inv.config_path, "Config file (key = value lines)");
    sub->add_option("--set", sets, "Override a config key: key=value")->allow_extra_args(false);
    auto add = [&](const Flag& f) {
      auto* opt = sub->add_option(f.name, flag_values[std::string(name) + f.key], f.help);
      flag_options.emplace_back(f.key, opt);
    };
    for (const auto& f : common) add(f);
    for (const auto& f : extra.at(name)) add(f);
    sub->callback([&inv, name = name] { inv.command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  ExperimentConfig config;
  try {
    if (!inv.config_path.empty()) load_config(inv.config_path, config);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      set_config_value(config, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
    }
    for (const auto& [key, opt] : flag_options)
      if (opt->count() > 0) set_config_value(config, key, opt->as<std::string>());
    validate_config(inv, config);
  } catch (const ConfigError& e) {
    std::cerr << "bcisim: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    run(inv, config);
  } catch (const ConfigError& e) {
    std::cerr << "bcisim: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "bcisim: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
