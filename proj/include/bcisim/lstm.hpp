#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bcisim/core.hpp"
#include "bcisim/rng.hpp"

namespace bcisim {

enum class Gate { forget = 0, input = 1, output = 2, update = 3 };

/// Head rows of LstmWeights::head_w.
enum Head { kHeadVx = 0, kHeadVy = 1, kHeadDist = 2 };

/// LSTM cell plus the three dense heads (v_x, v_y through tanh; d through a
/// sigmoid). Gate parameters are stacked row-wise in the order forget, input,
/// output, update, each block `hidden` rows tall.
template <class T>
struct LstmWeights {
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  Matrix W;       // 4H x F
  Matrix U;       // 4H x H
  Vector b;       // 4H
  Matrix head_w;  // 3 x H
  Vector head_b;  // 3

  static LstmWeights zeros(int features, int hidden) {
    LstmWeights w;
    w.W = Matrix::Zero(4 * hidden, features);
    w.U = Matrix::Zero(4 * hidden, hidden);
    w.b = Vector::Zero(4 * hidden);
    w.head_w = Matrix::Zero(3, hidden);
    w.head_b = Vector::Zero(3);
    return w;
  }

  int hidden() const { return static_cast<int>(U.cols()); }
  int features() const { return static_cast<int>(W.cols()); }

  auto gate_W(Gate g) { return W.middleRows(static_cast<int>(g) * hidden(), hidden()); }
  auto gate_W(Gate g) const { return W.middleRows(static_cast<int>(g) * hidden(), hidden()); }
  auto gate_U(Gate g) { return U.middleRows(static_cast<int>(g) * hidden(), hidden()); }
  auto gate_U(Gate g) const { return U.middleRows(static_cast<int>(g) * hidden(), hidden()); }
  auto gate_b(Gate g) { return b.segment(static_cast<int>(g) * hidden(), hidden()); }
  auto gate_b(Gate g) const { return b.segment(static_cast<int>(g) * hidden(), hidden()); }

  bool all_finite() const {
    return W.allFinite() && U.allFinite() && b.allFinite() && head_w.allFinite() && head_b.allFinite();
  }

  void validate() const {
    const auto h = U.cols();
    if (U.rows() != 4 * h || W.rows() != 4 * h || b.size() != 4 * h || head_w.rows() != 3 || head_w.cols() != h ||
        head_b.size() != 3)
      throw ValidationError("LSTM weight dimensions are inconsistent");
    if (!all_finite()) throw ValidationError("LSTM weights are not finite");
  }

  template <class S>
  LstmWeights<S> cast() const {
    return {W.template cast<S>(), U.template cast<S>(), b.template cast<S>(), head_w.template cast<S>(),
            head_b.template cast<S>()};
  }

  // Flat parameter access in the fixed order W, U, b, head_w, head_b.
  template <class Fn>
  void for_each_tensor(Fn&& fn) {
    fn(W.data(), W.size());
    fn(U.data(), U.size());
    fn(b.data(), b.size());
    fn(head_w.data(), head_w.size());
    fn(head_b.data(), head_b.size());
  }
};

template <class T>
struct LstmState {
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  Vector h;
  Vector c;

  static LstmState zeros(int hidden) { return {Vector::Zero(hidden), Vector::Zero(hidden)}; }
};

template <class T>
inline T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

/// Initialization: Glorot-uniform input and head weights, orthogonal recurrent
/// blocks, forget-gate bias 1.
template <class T>
LstmWeights<T> init_lstm_weights(int features, int hidden, std::uint64_t seed) {
  Rng rng(seed);
  auto w = LstmWeights<T>::zeros(features, hidden);
  const double in_limit = std::sqrt(6.0 / (features + hidden));
  for (Eigen::Index i = 0; i < w.W.size(); ++i) w.W.data()[i] = static_cast<T>(rng.uniform(-in_limit, in_limit));
  for (int g = 0; g < 4; ++g) {
    Eigen::MatrixXd gauss(hidden, hidden);
    for (Eigen::Index i = 0; i < gauss.size(); ++i) gauss.data()[i] = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
    Eigen::MatrixXd q = qr.householderQ();
    // Sign fix so the draw is uniform over the orthogonal group.
    for (int j = 0; j < hidden; ++j)
      if (qr.matrixQR()(j, j) < 0) q.col(j) *= -1.0;
    w.gate_U(static_cast<Gate>(g)) = q.cast<T>();
  }
  const double head_limit = std::sqrt(6.0 / (hidden + 1));
  for (Eigen::Index i = 0; i < w.head_w.size(); ++i)
    w.head_w.data()[i] = static_cast<T>(rng.uniform(-head_limit, head_limit));
  w.gate_b(Gate::forget).setConstant(T(1));
  return w;
}

/// Cell update from a precomputed input drive W x + b. Shared by lstm_step and
/// the simulator fast path, which caches the drive of every pooled sample.
template <class T, class Drive>
LstmState<T> lstm_step_from_drive(const LstmWeights<T>& w, const LstmState<T>& s, const Eigen::MatrixBase<Drive>& drive) {
  using Vector = typename LstmState<T>::Vector;
  const int h = w.hidden();
  Vector z = drive;
  z.noalias() += w.U * s.h;
  LstmState<T> out;
  out.c.resize(h);
  out.h.resize(h);
  for (int j = 0; j < h; ++j) {
    const T f = sigmoid(z(j));
    const T i = sigmoid(z(h + j));
    const T o = sigmoid(z(2 * h + j));
    const T u = std::tanh(z(3 * h + j));
    out.c(j) = f * s.c(j) + i * u;
    out.h(j) = o * std::tanh(out.c(j));
  }
  return out;
}

/// One LSTM time step with forget, input and output gates and a tanh
/// candidate: c_t = f o c_{t-1} + i o c_u, h_t = o o tanh(c_t).
template <class T, class Derived>
LstmState<T> lstm_step(const LstmWeights<T>& w, const LstmState<T>& s, const Eigen::MatrixBase<Derived>& x) {
  if (x.size() != w.features() || s.h.size() != w.hidden() || s.c.size() != w.hidden())
    throw DecodeError("lstm_step: dimension mismatch");
  if (!x.allFinite()) throw DecodeError("lstm_step: non-finite input");
  typename LstmState<T>::Vector drive = w.b;
  drive.noalias() += w.W * x.template cast<T>();
  return lstm_step_from_drive(w, s, drive);
}

/// Velocity from the heads: g * d * [tanh(a_x), tanh(a_y)] with d = sigmoid(a_d).
template <class T, class Derived>
Vec2 decode_heads(const LstmWeights<T>& w, const Eigen::MatrixBase<Derived>& h, double gain) {
  const Eigen::Matrix<T, 3, 1> a = w.head_w * h + w.head_b;
  const double vx = std::tanh(static_cast<double>(a(kHeadVx)));
  const double vy = std::tanh(static_cast<double>(a(kHeadVy)));
  const double d = sigmoid(static_cast<double>(a(kHeadDist)));
  return gain * d * Vec2(vx, vy);
}

// ---------------------------------------------------------------------------
// Truncated BPTT on a batch of equal-length windows.

/// Batch of B windows of T steps; inputs[t] is F x B, targets[t] is 3 x B with
/// rows (direction x, direction y, clipped distance).
template <class T>
struct SequenceBatch {
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  std::vector<Matrix> inputs;
  std::vector<Matrix> targets;

  int steps() const { return static_cast<int>(inputs.size()); }
  int size() const { return inputs.empty() ? 0 : static_cast<int>(inputs.front().cols()); }
};

/// Loss is the mean over windows and steps of the squared error summed over
/// the three heads. Dropout, when masks are given, multiplies h_t before the
/// heads (masks are already scaled by 1 / keep probability).
template <class T>
T lstm_forward_loss(const LstmWeights<T>& w, const SequenceBatch<T>& batch,
                    const std::vector<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>* dropout_masks = nullptr) {
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  const int h = w.hidden();
  const int bsz = batch.size();
  Matrix hs = Matrix::Zero(h, bsz), cs = Matrix::Zero(h, bsz);
  T loss = 0;
  for (int t = 0; t < batch.steps(); ++t) {
    Matrix z = w.W * batch.inputs[static_cast<std::size_t>(t)];
    z.colwise() += w.b;
    z.noalias() += w.U * hs;
    for (int bi = 0; bi < bsz; ++bi)
      for (int j = 0; j < h; ++j) {
        const T f = sigmoid(z(j, bi)), i = sigmoid(z(h + j, bi)), o = sigmoid(z(2 * h + j, bi));
        const T u = std::tanh(z(3 * h + j, bi));
        cs(j, bi) = f * cs(j, bi) + i * u;
        hs(j, bi) = o * std::tanh(cs(j, bi));
      }
    Matrix hd = hs;
    if (dropout_masks) hd.array() *= (*dropout_masks)[static_cast<std::size_t>(t)].array();
    Matrix a = w.head_w * hd;
    a.colwise() += w.head_b;
    const Matrix& y = batch.targets[static_cast<std::size_t>(t)];
    for (int bi = 0; bi < bsz; ++bi) {
      const T px = std::tanh(a(0, bi)), py = std::tanh(a(1, bi)), pd = sigmoid(a(2, bi));
      loss += (px - y(0, bi)) * (px - y(0, bi)) + (py - y(1, bi)) * (py - y(1, bi)) + (pd - y(2, bi)) * (pd - y(2, bi));
    }
  }
  return loss / static_cast<T>(bsz * batch.steps());
}

/// Forward + backward pass. Returns the loss and writes gradients (same layout
/// as the weights) into `grad`.
template <class T>
T lstm_loss_and_gradient(const LstmWeights<T>& w, const SequenceBatch<T>& batch, LstmWeights<T>& grad,
                         const std::vector<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>* dropout_masks = nullptr) {
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  const int h = w.hidden();
  const int bsz = batch.size();
  const int steps = batch.steps();
  const auto ts = static_cast<std::size_t>(steps);
  if (steps == 0 || bsz == 0) throw TrainError("empty batch");

  grad = LstmWeights<T>::zeros(w.features(), h);

  // Forward, keeping activations for the backward pass.
  std::vector<Matrix> gates(ts);   // 4H x B activated gate values (f, i, o, u)
  std::vector<Matrix> cells(ts + 1, Matrix::Zero(h, bsz));
  std::vector<Matrix> hiddens(ts + 1, Matrix::Zero(h, bsz));
  std::vector<Matrix> tanh_c(ts);
  std::vector<Matrix> preds(ts);
  T loss = 0;
  for (std::size_t t = 0; t < ts; ++t) {
    Matrix z = w.W * batch.inputs[t];
    z.colwise() += w.b;
    z.noalias() += w.U * hiddens[t];
    Matrix& g = gates[t];
    g.resize(4 * h, bsz);
    g.topRows(3 * h) = z.topRows(3 * h).unaryExpr([](T v) { return sigmoid(v); });
    g.bottomRows(h) = z.bottomRows(h).array().tanh().matrix();
    cells[t + 1] = g.topRows(h).cwiseProduct(cells[t]) + g.middleRows(h, h).cwiseProduct(g.bottomRows(h));
    tanh_c[t] = cells[t + 1].array().tanh().matrix();
    hiddens[t + 1] = g.middleRows(2 * h, h).cwiseProduct(tanh_c[t]);
    Matrix hd = hiddens[t + 1];
    if (dropout_masks) hd.array() *= (*dropout_masks)[t].array();
    Matrix a = w.head_w * hd;
    a.colwise() += w.head_b;
    Matrix& p = preds[t];
    p.resize(3, bsz);
    p.topRows(2) = a.topRows(2).array().tanh().matrix();
    p.row(2) = a.row(2).unaryExpr([](T v) { return sigmoid(v); });
    loss += (p - batch.targets[t]).squaredNorm();
  }
  const T scale = T(1) / static_cast<T>(bsz * steps);
  loss *= scale;

  Matrix dh_next = Matrix::Zero(h, bsz);
  Matrix dc_next = Matrix::Zero(h, bsz);
  Matrix dz(4 * h, bsz);
  for (std::size_t tt = ts; tt-- > 0;) {
    const Matrix& p = preds[tt];
    Matrix da = (p - batch.targets[tt]) * (T(2) * scale);
    da.topRows(2).array() *= (T(1) - p.topRows(2).array().square());
    da.row(2).array() *= p.row(2).array() * (T(1) - p.row(2).array());

    Matrix hd = hiddens[tt + 1];
    if (dropout_masks) hd.array() *= (*dropout_masks)[tt].array();
    grad.head_w.noalias() += da * hd.transpose();
    grad.head_b += da.rowwise().sum();

    Matrix dh = w.head_w.transpose() * da;
    if (dropout_masks) dh.array() *= (*dropout_masks)[tt].array();
    dh += dh_next;

    const Matrix& g = gates[tt];
    const auto f = g.topRows(h).array();
    const auto i = g.middleRows(h, h).array();
    const auto o = g.middleRows(2 * h, h).array();
    const auto u = g.bottomRows(h).array();
    const auto tc = tanh_c[tt].array();

    Matrix dc = (dh.array() * o * (T(1) - tc.square())).matrix() + dc_next;
    dz.topRows(h) = (dc.array() * cells[tt].array() * f * (T(1) - f)).matrix();
    dz.middleRows(h, h) = (dc.array() * u * i * (T(1) - i)).matrix();
    dz.middleRows(2 * h, h) = (dh.array() * tc * o * (T(1) - o)).matrix();
    dz.bottomRows(h) = (dc.array() * i * (T(1) - u.square())).matrix();
    dc_next = (dc.array() * f).matrix();

    grad.W.noalias() += dz * batch.inputs[tt].transpose();
    grad.U.noalias() += dz * hiddens[tt].transpose();
    grad.b += dz.rowwise().sum();
    dh_next.noalias() = w.U.transpose() * dz;
  }
  return loss;
}

// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction, holding first/second moment buffers shaped like
/// the parameters.
template <class T>
class AdamOptimizer {
 public:
  AdamOptimizer(const LstmWeights<T>& like, AdamConfig config)
      : config_(config), m_(LstmWeights<T>::zeros(like.features(), like.hidden())),
        v_(LstmWeights<T>::zeros(like.features(), like.hidden())) {}

  void step(LstmWeights<T>& params, LstmWeights<T>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
    const T lr = static_cast<T>(config_.learning_rate / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(config_.epsilon);

    std::vector<std::pair<T*, Eigen::Index>> p, g, m, v;
    auto collect = [](auto& out) { return [&out](T* d, Eigen::Index n) { out.emplace_back(d, n); }; };
    params.for_each_tensor(collect(p));
    grad.for_each_tensor(collect(g));
    m_.for_each_tensor(collect(m));
    v_.for_each_tensor(collect(v));
    for (std::size_t k = 0; k < p.size(); ++k) {
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> pk(p[k].first, p[k].second), gk(g[k].first, g[k].second),
          mk(m[k].first, m[k].second), vk(v[k].first, v[k].second);
      mk = b1 * mk + (T(1) - b1) * gk;
      vk = b2 * vk + (T(1) - b2) * gk.square();
      pk -= lr * mk / ((vk * inv_c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig config_;
  LstmWeights<T> m_;
  LstmWeights<T> v_;
  long t_ = 0;
};

}  // namespace bcisim
