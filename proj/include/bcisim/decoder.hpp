#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bcisim/core.hpp"
#include "bcisim/kalman.hpp"
#include "bcisim/lstm.hpp"
#include "bcisim/sampler.hpp"

namespace bcisim {

enum class DecoderKind { kalman, rnn, oracle, null };

inline std::string to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::kalman: return "kalman";
    case DecoderKind::rnn: return "rnn";
    case DecoderKind::oracle: return "oracle";
    case DecoderKind::null: return "null";
  }
  return "null";
}

inline DecoderKind parse_decoder_kind(const std::string& s) {
  if (s == "kalman") return DecoderKind::kalman;
  if (s == "rnn") return DecoderKind::rnn;
  if (s == "oracle") return DecoderKind::oracle;
  if (s == "null") return DecoderKind::null;
  throw ValidationError("unknown decoder '" + s + "'");
}

/// A trained decoder plus its post-process gain. `oracle` outputs the unit
/// vector toward the target (a plumbing reference, not a neural decoder) and
/// `null` always outputs zero.
struct DecoderModel {
  DecoderKind kind = DecoderKind::null;
  std::shared_ptr<const KalmanModel> kalman;
  std::shared_ptr<const LstmWeights<float>> rnn;
  double gain = 1.0;

  static DecoderModel from_kalman(KalmanModel m) {
    const double g = m.gain;
    return {DecoderKind::kalman, std::make_shared<const KalmanModel>(std::move(m)), nullptr, g};
  }
  static DecoderModel from_rnn(LstmWeights<float> w, double gain = 1.0) {
    return {DecoderKind::rnn, nullptr, std::make_shared<const LstmWeights<float>>(std::move(w)), gain};
  }
  static DecoderModel oracle(double gain = 1.0) { return {DecoderKind::oracle, nullptr, nullptr, gain}; }
  static DecoderModel null() { return {DecoderKind::null, nullptr, nullptr, 1.0}; }

  // -1 when the decoder does not read features.
  int feature_count() const {
    if (kind == DecoderKind::kalman) return kalman->feature_count();
    if (kind == DecoderKind::rnn) return rnn->features();
    return -1;
  }
};

/// Per-run decoder state. step() returns the un-gained velocity for the pooled
/// sample the simulator drew; the simulator multiplies by the gain.
class DecoderRun {
 public:
  virtual ~DecoderRun() = default;
  virtual Vec2 step(std::size_t sample, const Vec2& cursor_to_target) = 0;
};

/// A decoder prepared against one SampleIndex. Preparation caches whatever
/// depends only on the pooled features (K x for the Kalman, W x + b for the
/// LSTM), so it is shared read-only across gains, repeats and threads.
class DecoderBinding {
 public:
  virtual ~DecoderBinding() = default;
  virtual std::unique_ptr<DecoderRun> start() const = 0;
};

namespace detail {

class KalmanBinding final : public DecoderBinding {
 public:
  KalmanBinding(const KalmanModel& m, const SampleIndex& index) : alpha_(m.alpha) {
    kh_ = m.K * m.H;
    const Eigen::MatrixXd kd = m.K;
    projected_.resize(2, static_cast<Eigen::Index>(index.size()));
    for (std::size_t i = 0; i < index.size(); ++i) {
      const auto f = index.sample(i).features;
      const Eigen::Map<const Eigen::VectorXf> x(f.data(), static_cast<Eigen::Index>(f.size()));
      if (!x.allFinite()) throw DecodeError("non-finite feature vector in pool");
      projected_.col(static_cast<Eigen::Index>(i)) = kd * x.cast<double>();
    }
  }

  class Run final : public DecoderRun {
   public:
    explicit Run(const KalmanBinding& b) : b_(b) {}
    Vec2 step(std::size_t sample, const Vec2&) override {
      const Vec2 predicted = b_.alpha_ * v_;
      v_ = predicted + b_.projected_.col(static_cast<Eigen::Index>(sample)) - b_.kh_ * predicted;
      return v_;
    }

   private:
    const KalmanBinding& b_;
    Vec2 v_ = Vec2::Zero();
  };

  std::unique_ptr<DecoderRun> start() const override { return std::make_unique<Run>(*this); }

 private:
  double alpha_;
  Mat2 kh_;
  Eigen::Matrix<double, 2, Eigen::Dynamic> projected_;
};

class LstmBinding final : public DecoderBinding {
 public:
  LstmBinding(std::shared_ptr<const LstmWeights<float>> w, const SampleIndex& index) : w_(std::move(w)) {
    const Eigen::Map<const Eigen::MatrixXf> pool_t(index.features().data(), index.features().cols(),
                                                   index.features().rows());  // F x N view of the row-major pool
    if (!pool_t.allFinite()) throw DecodeError("non-finite feature vector in pool");
    drive_.noalias() = w_->W * pool_t;
    drive_.colwise() += w_->b;
  }

  class Run final : public DecoderRun {
   public:
    explicit Run(const LstmBinding& b) : b_(b), state_(LstmState<float>::zeros(b.w_->hidden())) {}
    Vec2 step(std::size_t sample, const Vec2&) override {
      state_ = lstm_step_from_drive(*b_.w_, state_, b_.drive_.col(static_cast<Eigen::Index>(sample)));
      return decode_heads(*b_.w_, state_.h, 1.0);
    }

   private:
    const LstmBinding& b_;
    LstmState<float> state_;
  };

  std::unique_ptr<DecoderRun> start() const override { return std::make_unique<Run>(*this); }

 private:
  std::shared_ptr<const LstmWeights<float>> w_;
  Eigen::MatrixXf drive_;  // 4H x N
};

class OracleBinding final : public DecoderBinding {
 public:
  class Run final : public DecoderRun {
   public:
    Vec2 step(std::size_t, const Vec2& c2t) override {
      const double d = c2t.norm();
      return d > 0.0 ? Vec2(c2t / d) : Vec2::Zero();
    }
  };
  std::unique_ptr<DecoderRun> start() const override { return std::make_unique<Run>(); }
};

class NullBinding final : public DecoderBinding {
 public:
  class Run final : public DecoderRun {
   public:
    Vec2 step(std::size_t, const Vec2&) override { return Vec2::Zero(); }
  };
  std::unique_ptr<DecoderRun> start() const override { return std::make_unique<Run>(); }
};

}  // namespace detail

inline std::shared_ptr<const DecoderBinding> bind_decoder(const DecoderModel& model, const SampleIndex& index) {
  const int f = model.feature_count();
  if (f >= 0 && f != index.feature_count())
    throw ValidationError("decoder expects " + std::to_string(f) + " features but the pool has " +
                          std::to_string(index.feature_count()));
  switch (model.kind) {
    case DecoderKind::kalman: return std::make_shared<detail::KalmanBinding>(*model.kalman, index);
    case DecoderKind::rnn: return std::make_shared<detail::LstmBinding>(model.rnn, index);
    case DecoderKind::oracle: return std::make_shared<detail::OracleBinding>();
    case DecoderKind::null: return std::make_shared<detail::NullBinding>();
  }
  throw ValidationError("unknown decoder kind");
}

}  // namespace bcisim
