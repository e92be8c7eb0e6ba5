#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <set>

#include "bcisim/kalman.hpp"
#include "bcisim/rng.hpp"

using namespace bcisim;

namespace {

Block tuned_block(const Eigen::MatrixXd& h, int ticks, double noise, Rng& rng, int id = 1) {
  Block b;
  b.block_id = id;
  b.features.resize(ticks, h.rows());
  for (int i = 0; i < ticks; ++i) {
    b.tick_ms.push_back(i * kTickMs);
    const Vec2 y(rng.uniform(-1, 1), rng.uniform(-1, 1));
    b.labels.push_back(y);
    const Eigen::VectorXd x = h * y;
    for (Eigen::Index c = 0; c < h.rows(); ++c) b.features(i, c) = static_cast<float>(x(c) + noise * rng.normal());
  }
  return b;
}

Eigen::MatrixXd random_h(int f, Rng& rng) {
  Eigen::MatrixXd h(f, 2);
  for (int c = 0; c < f; ++c) {
    const double pd = rng.uniform(0, 6.283185307179586), depth = rng.uniform(0.5, 1.5);
    h(c, 0) = depth * std::cos(pd);
    h(c, 1) = depth * std::sin(pd);
  }
  return h;
}

// Textbook time-varying Kalman filter in covariance form, with the full
// F x F innovation covariance inverted directly.
struct TimeVaryingKalman {
  Eigen::MatrixXd H;
  Eigen::MatrixXd Q;
  Mat2 W;
  double alpha;
  Mat2 P = Mat2::Zero();
  Vec2 v = Vec2::Zero();

  Eigen::MatrixXd gain_update() {
    const Mat2 pp = alpha * alpha * P + W;
    const Eigen::MatrixXd s = H * pp * H.transpose() + Q;
    const Eigen::MatrixXd k = pp * H.transpose() * s.inverse();
    P = (Mat2::Identity() - k * H) * pp;
    return k;
  }

  Vec2 step(const Eigen::VectorXd& x) {
    const Eigen::MatrixXd k = gain_update();
    const Vec2 pred = alpha * v;
    v = pred + k * (x - H * pred);
    return v;
  }
};

}  // namespace

TEST(FitObservationModel, RecoversPlantedTuning) {
  Rng rng(11);
  const Eigen::MatrixXd h = random_h(12, rng);
  const Block b = tuned_block(h, 600, 0.0, rng);
  const std::vector<const Block*> blocks{&b};
  KalmanFitOptions opt;
  opt.lambda_grid = {1e-4};
  const auto m = fit_observation_model(blocks, opt);
  EXPECT_DOUBLE_EQ(m.ridge_lambda, 1e-4);
  for (int c = 0; c < 12; ++c)
    EXPECT_LT((m.H.row(c) - h.row(c)).norm() / h.row(c).norm(), 1e-3) << "channel " << c;
}

TEST(FitObservationModel, CrossValidationPrefersSmallLambdaOnCleanData) {
  Rng rng(12);
  const Eigen::MatrixXd h = random_h(8, rng);
  const Block b = tuned_block(h, 500, 0.01, rng);
  const std::vector<const Block*> blocks{&b};
  const auto m = fit_observation_model(blocks);
  EXPECT_EQ(m.lambda_grid.size(), 8u);
  EXPECT_LE(m.ridge_lambda, 1e-1);
  EXPECT_EQ(m.cv_mse.size(), 8u);
}

TEST(FitObservationModel, ZeroLabelsAreDegenerate) {
  Rng rng(13);
  Block b = tuned_block(random_h(4, rng), 100, 1.0, rng);
  for (auto& l : b.labels) l.setZero();
  const std::vector<const Block*> blocks{&b};
  EXPECT_THROW(fit_observation_model(blocks), FitError);
}

TEST(FitObservationModel, InsufficientData) {
  Rng rng(14);
  const Block b = tuned_block(random_h(20, rng), 100, 1.0, rng);
  const std::vector<const Block*> blocks{&b};
  EXPECT_THROW(fit_observation_model(blocks), FitError);
}

TEST(FitObservationModel, NoiseCovarianceAndStateNoise) {
  Rng rng(15);
  const Eigen::MatrixXd h = random_h(5, rng);
  const Block b = tuned_block(h, 5000, 0.5, rng);
  const std::vector<const Block*> blocks{&b};
  const auto m = fit_observation_model(blocks);
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(m.Q(c), 0.25, 0.03);
  // i.i.d. uniform labels: first differences have covariance 2 * var = 2/3.
  EXPECT_NEAR(m.W(0, 0), 2.0 / 3.0, 0.05);
  EXPECT_NEAR(m.W(0, 1), 0.0, 0.05);
}

TEST(CvFolds, PartitionExactly) {
  for (std::size_t n : {5u, 7u, 100u, 1234u}) {
    const auto folds = cv_fold_assignment(n, 5);
    std::vector<int> counts(5, 0);
    for (int f : folds) {
      ASSERT_GE(f, 0);
      ASSERT_LT(f, 5);
      ++counts[static_cast<std::size_t>(f)];
    }
    int total = 0;
    for (int c : counts) {
      total += c;
      EXPECT_GE(c, static_cast<int>(n / 5));
      EXPECT_LE(c, static_cast<int>(n / 5) + 1);
    }
    EXPECT_EQ(total, static_cast<int>(n));
  }
}

TEST(SteadyStateGain, ScalarFixedPointIsHalf) {
  Eigen::MatrixXd h(1, 2);
  h << 1, 0;
  const Eigen::VectorXd q = Eigen::VectorXd::Ones(1);
  const auto k = steady_state_gain(h, q, Mat2::Identity(), 0.0);
  EXPECT_NEAR(k(0, 0), 0.5, 1e-9);
  EXPECT_NEAR(k(1, 0), 0.0, 1e-12);
}

TEST(SteadyStateGain, PredictableStateIgnoresObservations) {
  Rng rng(16);
  const Eigen::MatrixXd h = random_h(6, rng);
  const auto k = steady_state_gain(h, Eigen::VectorXd::Ones(6), Mat2::Zero(), 0.0);
  EXPECT_EQ(k.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SteadyStateGain, IsFixedPointOfOneMoreIteration) {
  Rng rng(17);
  const Eigen::MatrixXd h = random_h(10, rng);
  Eigen::VectorXd q(10);
  for (int c = 0; c < 10; ++c) q(c) = rng.uniform(0.5, 2.0);
  Mat2 w;
  w << 0.3, 0.05, 0.05, 0.2;
  const double alpha = 0.94;
  const auto k = steady_state_gain(h, q, w, alpha);

  TimeVaryingKalman tv{h, Eigen::MatrixXd(q.asDiagonal()), w, alpha};
  Eigen::MatrixXd prev = tv.gain_update();
  for (int i = 0; i < 100000; ++i) {
    Eigen::MatrixXd next = tv.gain_update();
    const double d = (next - prev).cwiseAbs().maxCoeff();
    prev = std::move(next);
    if (d < 1e-13) break;
  }
  EXPECT_LT((prev - k).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((tv.gain_update() - k).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(SteadyStateGain, IndependentOfInitialCovariance) {
  Rng rng(18);
  const Eigen::MatrixXd h = random_h(7, rng);
  const Eigen::VectorXd q = Eigen::VectorXd::Constant(7, 1.5);
  Mat2 w;
  w << 0.1, 0.0, 0.0, 0.15;
  SteadyStateOptions a, b;
  b.initial_covariance = Mat2::Identity() * 25.0;
  const auto k1 = steady_state_gain(h, q, w, 0.9, a);
  const auto k2 = steady_state_gain(h, q, w, 0.9, b);
  EXPECT_LT((k1 - k2).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SteadyStateGain, IterationCapRaisesConvergenceError) {
  Rng rng(19);
  const Eigen::MatrixXd h = random_h(3, rng);
  SteadyStateOptions o;
  o.max_iterations = 2;
  o.tolerance = 1e-15;
  try {
    steady_state_gain(h, Eigen::VectorXd::Ones(3), Mat2::Identity() * 0.1, 0.99, o);
    FAIL() << "expected a convergence error";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.last_delta(), 0.0);
  }
}

TEST(SteadyStateGain, MatchesTimeVaryingFilterOnSequence) {
  Rng rng(20);
  const int f = 9;
  const Eigen::MatrixXd h = random_h(f, rng);
  Eigen::VectorXd q(f);
  for (int c = 0; c < f; ++c) q(c) = rng.uniform(0.5, 2.0);
  Mat2 w;
  w << 0.2, 0.03, 0.03, 0.25;
  KalmanModel m;
  m.H = h;
  m.Q = q;
  m.W = w;
  m.alpha = 0.9;
  m.gain = 1.0;
  m.K = steady_state_gain(h, q, w, m.alpha);

  TimeVaryingKalman tv{h, Eigen::MatrixXd(q.asDiagonal()), w, m.alpha};
  for (int i = 0; i < 2000; ++i) tv.gain_update();  // run the covariance to convergence
  KalmanState s;
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd x(f);
    for (int c = 0; c < f; ++c) x(c) = rng.normal() * 2.0;
    const auto [v, next] = kalman_step(m, s, x);
    s = next;
    const Vec2 ref = tv.step(x);
    EXPECT_LT((v - ref).cwiseAbs().maxCoeff(), 1e-8) << "step " << t;
  }
}

TEST(KalmanStep, ZeroInputZeroOutput) {
  Rng rng(21);
  KalmanModel m;
  m.H = random_h(4, rng);
  m.Q = Eigen::VectorXd::Ones(4);
  m.alpha = 0.8;
  m.gain = 3.0;
  m.K = steady_state_gain(m.H, m.Q, Mat2::Identity(), m.alpha);
  const auto [v, s] = kalman_step(m, KalmanState{}, Eigen::VectorXd::Zero(4));
  EXPECT_EQ(v, Vec2::Zero());
  EXPECT_EQ(s.v_prev, Vec2::Zero());
}

TEST(KalmanStep, NoSmoothingIsGainTimesKx) {
  Rng rng(22);
  KalmanModel m;
  m.H = random_h(5, rng);
  m.Q = Eigen::VectorXd::Ones(5);
  m.alpha = 0.0;
  m.gain = 2.5;
  m.K = steady_state_gain(m.H, m.Q, Mat2::Identity(), 0.0);
  Eigen::VectorXd x(5);
  x << 1, -2, 0.5, 3, -1;
  KalmanState s;
  s.v_prev = Vec2(7, -3);
  const auto [v, next] = kalman_step(m, s, x);
  EXPECT_LT((v - 2.5 * m.K * x).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((next.v_prev - m.K * x).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(KalmanStep, ScalarHandExample) {
  KalmanModel m;
  m.H = Eigen::MatrixXd(1, 2);
  m.H << 1, 0;
  m.K = Eigen::MatrixXd(2, 1);
  m.K << 1, 0;
  m.Q = Eigen::VectorXd::Ones(1);
  m.alpha = 0.5;
  m.gain = 2.0;
  KalmanState s;
  s.v_prev = Vec2(0.4, 0.0);
  const auto [v, next] = kalman_step(m, s, Eigen::VectorXd::Ones(1));
  EXPECT_NEAR(v.x(), 2.0, 1e-15);
  EXPECT_NEAR(next.v_prev.x(), 1.0, 1e-15);
}

TEST(KalmanStep, LinearWithoutSmoothing) {
  Rng rng(23);
  KalmanModel m;
  m.H = random_h(6, rng);
  m.Q = Eigen::VectorXd::Ones(6);
  m.alpha = 0.0;
  m.gain = 1.7;
  m.K = steady_state_gain(m.H, m.Q, Mat2::Identity(), 0.0);
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd a(6), b(6);
    for (int c = 0; c < 6; ++c) {
      a(c) = rng.normal();
      b(c) = rng.normal();
    }
    const double p = rng.normal(), r = rng.normal();
    const Vec2 lhs = kalman_step(m, KalmanState{}, (p * a + r * b).eval()).first;
    const Vec2 rhs = p * kalman_step(m, KalmanState{}, a).first + r * kalman_step(m, KalmanState{}, b).first;
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(KalmanStep, RejectsBadInput) {
  Rng rng(24);
  KalmanModel m;
  m.H = random_h(3, rng);
  m.Q = Eigen::VectorXd::Ones(3);
  m.K = steady_state_gain(m.H, m.Q, Mat2::Identity(), 0.0);
  EXPECT_THROW(kalman_step(m, KalmanState{}, Eigen::VectorXd::Zero(4)), DecodeError);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
  x(1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(kalman_step(m, KalmanState{}, x), DecodeError);
}
