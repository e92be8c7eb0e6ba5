#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bcisim/core.hpp"
#include "bcisim/datamodel.hpp"

namespace bcisim {

/// Observation model fitted from labeled training blocks: x = H v + noise.
struct ObservationModel {
  Eigen::MatrixXd H;        // features x 2
  Eigen::VectorXd Q;        // diagonal of the observation-noise covariance
  Mat2 W = Mat2::Zero();    // state-noise covariance
  double ridge_lambda = 0.0;
  std::vector<double> lambda_grid;
  std::vector<double> cv_mse;  // held-out MSE per grid entry
};

/// Steady-state velocity Kalman decoder.
struct KalmanModel {
  Eigen::MatrixXd H;        // features x 2
  Eigen::MatrixXd K;        // 2 x features
  double alpha = 0.0;
  double gain = 1.0;
  Mat2 W = Mat2::Zero();
  Eigen::VectorXd Q;
  double ridge_lambda = 0.0;

  int feature_count() const { return static_cast<int>(H.rows()); }

  void validate() const {
    if (H.cols() != 2 || K.rows() != 2 || K.cols() != H.rows() || Q.size() != H.rows())
      throw ValidationError("Kalman model dimensions are inconsistent");
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in [0, 1)");
    if (!(gain > 0.0)) throw ValidationError("gain must be positive");
    if (!H.allFinite() || !K.allFinite()) throw ValidationError("Kalman model has non-finite entries");
  }
};

/// Un-gained velocity carried between steps.
struct KalmanState {
  Vec2 v_prev = Vec2::Zero();
};

struct KalmanFitOptions {
  int folds = 5;
  std::vector<double> lambda_grid;  // empty: default_ridge_grid()
  double min_samples_per_feature = 10.0;
};

/// 1e-4 ... 1e3, eight log-spaced values.
inline std::vector<double> default_ridge_grid() {
  std::vector<double> g;
  for (int e = -4; e <= 3; ++e) g.push_back(std::pow(10.0, e));
  return g;
}

/// Contiguous fold labels: sample i goes to fold floor(folds * i / n).
inline std::vector<int> cv_fold_assignment(std::size_t n, int folds) {
  if (folds < 2) throw ValidationError("need at least 2 folds");
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<int>((static_cast<unsigned long long>(i) * static_cast<unsigned>(folds)) / n);
  return out;
}

namespace detail {

struct RegressionStats {
  Mat2 yty = Mat2::Zero();
  Eigen::MatrixXd ytx;    // 2 x F
  Eigen::VectorXd xx;     // per-channel sum of squares
  Eigen::VectorXd xsum;
  Vec2 ysum = Vec2::Zero();
  double count = 0.0;

  explicit RegressionStats(Eigen::Index f) : ytx(Eigen::MatrixXd::Zero(2, f)), xx(Eigen::VectorXd::Zero(f)),
                                             xsum(Eigen::VectorXd::Zero(f)) {}

  RegressionStats& operator+=(const RegressionStats& o) {
    yty += o.yty;
    ytx += o.ytx;
    xx += o.xx;
    xsum += o.xsum;
    ysum += o.ysum;
    count += o.count;
    return *this;
  }
};

// Per-channel sum of squared residuals of x_c - h_c . y over the samples the
// statistics describe, for H^T given as 2 x F.
inline Eigen::VectorXd residual_ss(const RegressionStats& s, const Eigen::MatrixXd& ht) {
  const Eigen::MatrixXd yty_h = s.yty * ht;  // 2 x F
  return s.xx - 2.0 * (ht.array() * s.ytx.array()).colwise().sum().transpose().matrix() +
         (ht.array() * yty_h.array()).colwise().sum().transpose().matrix();
}

inline Eigen::MatrixXd ridge_solve(const Mat2& yty, const Eigen::MatrixXd& ytx, double lambda) {
  const Mat2 a = yty + lambda * Mat2::Identity();
  return a.ldlt().solve(ytx);  // 2 x F
}

}  // namespace detail

/// Ridge regression of every channel onto the 2-D label (no intercept: the
/// features are z-scored per block), with the regularizer chosen by k-fold
/// cross validation on held-out MSE. Q is the diagonal residual covariance and
/// W the covariance of within-block label first differences.
inline ObservationModel fit_observation_model(std::span<const Block* const> blocks, const KalmanFitOptions& options = {}) {
  if (blocks.empty()) throw FitError("no training blocks");
  const Eigen::Index f = blocks.front()->features.cols();
  std::size_t n = 0;
  for (const auto* b : blocks) {
    if (b->features.cols() != f) throw FitError("training blocks disagree on feature count");
    n += b->ticks();
  }
  if (static_cast<double>(n) < options.min_samples_per_feature * static_cast<double>(f))
    throw FitError("insufficient training data: " + std::to_string(n) + " samples for " + std::to_string(f) +
                   " features");

  const int folds = options.folds;
  std::vector<detail::RegressionStats> fold_stats(static_cast<std::size_t>(folds), detail::RegressionStats(f));
  const auto fold_of = [&](std::size_t i) {
    return static_cast<int>((static_cast<unsigned long long>(i) * static_cast<unsigned>(folds)) / n);
  };

  Mat2 diff_outer = Mat2::Zero();
  Vec2 diff_sum = Vec2::Zero();
  double diff_count = 0.0;

  std::size_t global = 0;
  for (const auto* b : blocks) {
    const std::size_t t = b->ticks();
    // Split the block at fold boundaries and accumulate each run with one GEMM.
    std::size_t start = 0;
    while (start < t) {
      const int fold = fold_of(global + start);
      std::size_t stop = start + 1;
      while (stop < t && fold_of(global + stop) == fold) ++stop;
      const auto rows = static_cast<Eigen::Index>(stop - start);
      Eigen::MatrixXd x = b->features.middleRows(static_cast<Eigen::Index>(start), rows).cast<double>();
      Eigen::MatrixXd y(rows, 2);
      for (Eigen::Index r = 0; r < rows; ++r) y.row(r) = b->labels[start + static_cast<std::size_t>(r)].transpose();
      auto& s = fold_stats[static_cast<std::size_t>(fold)];
      s.yty.noalias() += y.transpose() * y;
      s.ytx.noalias() += y.transpose() * x;
      s.xx += x.array().square().colwise().sum().transpose().matrix();
      s.xsum += x.colwise().sum().transpose();
      s.ysum += y.colwise().sum().transpose();
      s.count += static_cast<double>(rows);
      start = stop;
    }
    for (std::size_t i = 1; i < t; ++i) {
      const Vec2 d = b->labels[i] - b->labels[i - 1];
      diff_outer += d * d.transpose();
      diff_sum += d;
      diff_count += 1.0;
    }
    global += t;
  }

  detail::RegressionStats total(f);
  for (const auto& s : fold_stats) total += s;

  const Eigen::SelfAdjointEigenSolver<Mat2> eig(total.yty);
  if (!(eig.eigenvalues()(1) > 0.0) || eig.eigenvalues()(0) <= 1e-12 * eig.eigenvalues()(1))
    throw FitError("degenerate regression: training labels do not span two dimensions");

  ObservationModel model;
  model.lambda_grid = options.lambda_grid.empty() ? default_ridge_grid() : options.lambda_grid;
  double best = 0.0;
  for (std::size_t li = 0; li < model.lambda_grid.size(); ++li) {
    const double lambda = model.lambda_grid[li];
    double sse = 0.0;
    for (const auto& held : fold_stats) {
      if (held.count == 0.0) continue;
      const Eigen::MatrixXd ht = detail::ridge_solve(total.yty - held.yty, total.ytx - held.ytx, lambda);
      sse += detail::residual_ss(held, ht).sum();
    }
    const double mse = sse / (static_cast<double>(n) * static_cast<double>(f));
    model.cv_mse.push_back(mse);
    if (li == 0 || mse < best) {
      best = mse;
      model.ridge_lambda = lambda;
    }
  }

  const Eigen::MatrixXd ht = detail::ridge_solve(total.yty, total.ytx, model.ridge_lambda);
  model.H = ht.transpose();
  const double nn = static_cast<double>(n);
  const Eigen::VectorXd resid_mean = (total.xsum - ht.transpose() * total.ysum) / nn;
  model.Q = (detail::residual_ss(total, ht) / nn - resid_mean.array().square().matrix()).cwiseMax(1e-9);
  if (diff_count > 0.0) {
    const Vec2 mu = diff_sum / diff_count;
    model.W = diff_outer / diff_count - mu * mu.transpose();
  }
  return model;
}

struct SteadyStateOptions {
  double tolerance = 1e-9;
  int max_iterations = 100000;
  std::optional<Mat2> initial_covariance;  // default: zero
};

/// Iterates the Kalman covariance recursion with A = alpha * I until the gain
/// stops changing. The innovation inverse is taken through the 2 x 2 identity
///   P H^T (H P H^T + Q)^-1 = P (I + M P)^-1 H^T Q^-1,  M = H^T Q^-1 H,
/// so no features x features matrix is ever formed.
inline Eigen::MatrixXd steady_state_gain(const Eigen::MatrixXd& H, const Eigen::VectorXd& Q, const Mat2& W, double alpha,
                                         const SteadyStateOptions& options = {}) {
  if (H.cols() != 2 || Q.size() != H.rows()) throw ValidationError("steady_state_gain: dimension mismatch");
  if ((Q.array() <= 0.0).any()) throw ValidationError("steady_state_gain: Q diagonal must be positive");
  const Eigen::MatrixXd ht_qinv = H.transpose() * Q.cwiseInverse().asDiagonal();  // 2 x F
  const Mat2 m = ht_qinv * H;
  Mat2 p = options.initial_covariance.value_or(Mat2::Zero());
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(2, H.rows());
  double delta = 0.0;
  for (int it = 0; it < options.max_iterations; ++it) {
    const Mat2 p_pred = alpha * alpha * p + W;
    const Mat2 g = p_pred * (Mat2::Identity() + m * p_pred).inverse();
    Eigen::MatrixXd k_next = g * ht_qinv;
    p = (Mat2::Identity() - g * m) * p_pred;
    p = 0.5 * (p + p.transpose());
    delta = (k_next - k).cwiseAbs().maxCoeff();
    k = std::move(k_next);
    if (!std::isfinite(delta)) break;
    if (delta < options.tolerance) return k;
  }
  throw ConvergenceError("steady-state gain did not converge", delta);
}

inline KalmanModel make_kalman_model(const ObservationModel& obs, double alpha, double gain = 1.0) {
  KalmanModel m;
  m.H = obs.H;
  m.Q = obs.Q;
  m.W = obs.W;
  m.ridge_lambda = obs.ridge_lambda;
  m.alpha = alpha;
  m.gain = gain;
  m.K = steady_state_gain(obs.H, obs.Q, obs.W, alpha);
  m.validate();
  return m;
}

/// Same fitted observation model with a different smoothing factor.
inline KalmanModel with_alpha(const KalmanModel& model, double alpha) {
  KalmanModel m = model;
  m.alpha = alpha;
  m.K = steady_state_gain(model.H, model.Q, model.W, alpha);
  m.validate();
  return m;
}

/// One decoder update: v_t = g [A v_{t-1} + K (x_t - H A v_{t-1})] with A = alpha I.
/// The returned state carries v_t / g so the gain stays a pure output scale.
template <class Derived>
std::pair<Vec2, KalmanState> kalman_step(const KalmanModel& model, const KalmanState& state,
                                         const Eigen::MatrixBase<Derived>& x) {
  if (x.size() != model.H.rows()) throw DecodeError("feature vector length does not match the model");
  if (!x.allFinite()) throw DecodeError("non-finite feature vector");
  const Vec2 predicted = model.alpha * state.v_prev;
  const Eigen::VectorXd innovation = x.template cast<double>() - model.H * predicted;
  const Vec2 unscaled = predicted + model.K * innovation;
  return {model.gain * unscaled, KalmanState{unscaled}};
}

}  // namespace bcisim
