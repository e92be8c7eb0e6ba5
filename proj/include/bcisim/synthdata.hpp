#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "bcisim/core.hpp"
#include "bcisim/datamodel.hpp"
#include "bcisim/rng.hpp"

namespace bcisim {

enum class Nonlinearity { none, saturation, multiplicative_gain };

inline std::string to_string(Nonlinearity n) {
  switch (n) {
    case Nonlinearity::none: return "none";
    case Nonlinearity::saturation: return "saturation";
    case Nonlinearity::multiplicative_gain: return "multiplicative-gain";
  }
  return "none";
}

inline Nonlinearity parse_nonlinearity(const std::string& s) {
  if (s == "none") return Nonlinearity::none;
  if (s == "saturation") return Nonlinearity::saturation;
  if (s == "multiplicative-gain" || s == "multiplicative_gain") return Nonlinearity::multiplicative_gain;
  throw ValidationError("unknown nonlinearity '" + s + "'");
}

/// Parameters of the cosine-tuned synthetic recording generator.
///
/// Per-channel baseline, depth and preferred direction are drawn from the
/// given ranges unless explicit vectors of length feature_count are supplied.
struct SynthConfig {
  int feature_count = 384;
  int sessions = 6;
  int blocks_per_session = 6;
  int ticks_per_block = 1500;
  int session_spacing_days = 5;

  double baseline_min = 0.0;
  double baseline_max = 2.0;
  double depth_min = 0.5;
  double depth_max = 1.5;
  std::vector<double> baseline;
  std::vector<double> depth;
  std::vector<double> preferred_direction;

  double noise_std = 1.0;
  Nonlinearity nonlinearity = Nonlinearity::none;
  // Slope inside the tanh (saturation) or distance gain (multiplicative-gain).
  double nonlinearity_gain = 3.0;

  // Additive per-channel mean shift per calendar day, in raw feature units.
  double drift_rate = 0.0;
  // Per-channel preferred-direction rotation per calendar day (radians, the
  // rate of each channel is this times a fixed standard-normal draw).
  double tuning_drift_rate = 0.0;

  // Intent trajectory: the virtual cursor moves toward the target with
  // velocity approach_rate * (target - cursor) plus Gaussian jitter and holds
  // for hold_ticks once within hold_radius.
  double approach_rate = 2.5;
  double jitter_std = 0.3;
  double hold_radius = 0.05;
  int hold_ticks = 25;

  std::uint64_t seed = 1;

  void validate() const {
    if (feature_count < 1) throw ValidationError("feature_count must be >= 1");
    if (sessions < 1) throw ValidationError("sessions must be >= 1");
    if (blocks_per_session < 5) throw ValidationError("blocks_per_session must be >= 5");
    if (ticks_per_block < 2) throw ValidationError("ticks_per_block must be >= 2");
    if (!(noise_std >= 0.0)) throw ValidationError("noise_std must be >= 0");
    if (depth_max < depth_min || baseline_max < baseline_min) throw ValidationError("empty parameter range");
    if (session_spacing_days < 0) throw ValidationError("session_spacing_days must be >= 0");
    if (hold_ticks < 0 || hold_radius < 0.0 || approach_rate < 0.0 || jitter_std < 0.0)
      throw ValidationError("trajectory parameters must be nonnegative");
    const auto f = static_cast<std::size_t>(feature_count);
    for (const auto* v : {&baseline, &depth, &preferred_direction})
      if (!v->empty() && v->size() != f) throw ValidationError("per-channel vectors must have feature_count entries");
  }
};

/// The planted per-channel tuning of a generated dataset.
struct SynthTuning {
  std::vector<double> baseline;
  std::vector<double> depth;
  std::vector<double> preferred_direction;
  std::vector<double> drift_sign;   // +-1, direction of the mean drift
  std::vector<double> rotation_rate;  // standard-normal multiplier of tuning_drift_rate
};

inline SynthTuning make_tuning(const SynthConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, {0x7475ULL}));
  const auto f = static_cast<std::size_t>(config.feature_count);
  SynthTuning t;
  t.baseline.resize(f);
  t.depth.resize(f);
  t.preferred_direction.resize(f);
  t.drift_sign.resize(f);
  t.rotation_rate.resize(f);
  for (std::size_t c = 0; c < f; ++c) {
    t.baseline[c] = rng.uniform(config.baseline_min, config.baseline_max);
    t.depth[c] = rng.uniform(config.depth_min, config.depth_max);
    t.preferred_direction[c] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    t.drift_sign[c] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    t.rotation_rate[c] = rng.normal();
  }
  if (!config.baseline.empty()) t.baseline = config.baseline;
  if (!config.depth.empty()) t.depth = config.depth;
  if (!config.preferred_direction.empty()) t.preferred_direction = config.preferred_direction;
  return t;
}

inline int session_calendar_day(const SynthConfig& config, int session_index) {
  return session_index * config.session_spacing_days;
}

/// Noiseless raw response of one channel to a cursor-to-target label on a
/// given calendar day.
inline double channel_response(const SynthConfig& config, const SynthTuning& tuning, std::size_t c,
                               const Vec2& label, int calendar_day) {
  const double day = static_cast<double>(calendar_day);
  const double pd = tuning.preferred_direction[c] + config.tuning_drift_rate * tuning.rotation_rate[c] * day;
  const double projection = label.x() * std::cos(pd) + label.y() * std::sin(pd);  // d * cos(theta - pd)
  double modulation = 0.0;
  switch (config.nonlinearity) {
    case Nonlinearity::none: modulation = tuning.depth[c] * projection; break;
    case Nonlinearity::saturation:
      modulation = tuning.depth[c] * std::tanh(config.nonlinearity_gain * projection);
      break;
    case Nonlinearity::multiplicative_gain:
      modulation = tuning.depth[c] * projection * (1.0 + config.nonlinearity_gain * label.norm());
      break;
  }
  return tuning.baseline[c] + config.drift_rate * tuning.drift_sign[c] * day + modulation;
}

namespace detail {

inline std::vector<Vec2> synth_trajectory(const SynthConfig& config, Rng& rng) {
  const auto n = static_cast<std::size_t>(config.ticks_per_block);
  std::vector<Vec2> labels(n);
  Vec2 cursor(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
  Vec2 target(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
  int held = 0;
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = target - cursor;
    if (labels[i].norm() < config.hold_radius && ++held >= config.hold_ticks) {
      target = Vec2(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      held = 0;
    }
    const Vec2 jitter(rng.normal(), rng.normal());
    const Vec2 velocity = config.approach_rate * (target - cursor) + config.jitter_std * jitter;
    cursor = (cursor + velocity * kTickSeconds).cwiseMax(-1.0).cwiseMin(1.0);
  }
  return labels;
}

}  // namespace detail

/// Generates raw (un-normalized) sessions. Session s gets calendar day
/// s * session_spacing_days and its own stream derived from (seed, s).
inline std::vector<SessionData> generate_dataset(const SynthConfig& config) {
  config.validate();
  const SynthTuning tuning = make_tuning(config);
  const auto f = static_cast<std::size_t>(config.feature_count);
  std::vector<SessionData> out;
  out.reserve(static_cast<std::size_t>(config.sessions));
  for (int s = 0; s < config.sessions; ++s) {
    Rng rng(derive_seed(config.seed, {0x5e55ULL, static_cast<std::uint64_t>(s)}));
    SessionData session;
    session.session_index = s;
    session.calendar_day = session_calendar_day(config, s);
    session.feature_count = config.feature_count;
    for (int bi = 0; bi < config.blocks_per_session; ++bi) {
      Block block;
      block.block_id = bi + 1;
      block.labels = detail::synth_trajectory(config, rng);
      const auto ticks = block.labels.size();
      block.tick_ms.resize(ticks);
      block.features.resize(static_cast<Eigen::Index>(ticks), config.feature_count);
      for (std::size_t i = 0; i < ticks; ++i) {
        block.tick_ms[i] = static_cast<int>(i) * kTickMs;
        for (std::size_t c = 0; c < f; ++c) {
          const double clean = channel_response(config, tuning, c, block.labels[i], session.calendar_day);
          const double noisy = config.noise_std > 0.0 ? clean + config.noise_std * rng.normal() : clean;
          block.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = static_cast<float>(noisy);
        }
      }
      session.blocks.push_back(std::move(block));
    }
    out.push_back(std::move(session));
  }
  return out;
}

}  // namespace bcisim
