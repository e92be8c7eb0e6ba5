#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "bcisim/core.hpp"
#include "bcisim/datamodel.hpp"
#include "bcisim/lstm.hpp"
#include "bcisim/rng.hpp"

namespace bcisim {

/// Training hyperparameters; defaults follow the reference configuration
/// (50 hidden units, batch 512, Adam at 1e-3, 15 unrolled steps, 50% dropout).
struct TrainConfig {
  int hidden_units = 50;
  int batch_size = 512;
  double learning_rate = 0.001;
  int unroll_steps = 15;
  double dropout = 0.5;
  AdamConfig adam{};
  int epochs = 10;
  std::uint64_t seed = 1;

  void validate() const {
    if (hidden_units < 1 || batch_size < 1 || unroll_steps < 1 || epochs < 0)
      throw ValidationError("invalid RNN training configuration");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  }
};

/// Head targets for one label: unit direction to the target and the distance
/// clipped to [0, 1]. A zero label has direction (0, 0).
inline Eigen::Vector3d rnn_target(const Vec2& label) {
  const double d = label.norm();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  if (d > 0.0) t.head<2>() = label / d;
  t(2) = std::clamp(d, 0.0, 1.0);
  return t;
}

/// Every stride-1 window of `steps` consecutive ticks that stays inside one block.
struct WindowSet {
  struct Window {
    std::uint32_t block = 0;
    std::uint32_t start = 0;
  };
  std::vector<const Block*> blocks;
  std::vector<Window> windows;
  int steps = 0;
};

inline WindowSet make_windows(std::span<const Block* const> blocks, int steps) {
  WindowSet set;
  set.blocks.assign(blocks.begin(), blocks.end());
  set.steps = steps;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::size_t t = blocks[b]->ticks();
    if (t < static_cast<std::size_t>(steps)) continue;
    for (std::size_t s = 0; s + static_cast<std::size_t>(steps) <= t; ++s)
      set.windows.push_back({static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(s)});
  }
  return set;
}

template <class T>
SequenceBatch<T> gather_batch(const WindowSet& set, std::span<const std::size_t> ids) {
  using Matrix = typename SequenceBatch<T>::Matrix;
  SequenceBatch<T> batch;
  const auto bsz = static_cast<Eigen::Index>(ids.size());
  const Eigen::Index f = set.blocks.front()->features.cols();
  batch.inputs.assign(static_cast<std::size_t>(set.steps), Matrix(f, bsz));
  batch.targets.assign(static_cast<std::size_t>(set.steps), Matrix(3, bsz));
  for (Eigen::Index j = 0; j < bsz; ++j) {
    const auto& win = set.windows[ids[static_cast<std::size_t>(j)]];
    const Block& blk = *set.blocks[win.block];
    for (int t = 0; t < set.steps; ++t) {
      const std::size_t row = win.start + static_cast<std::size_t>(t);
      batch.inputs[static_cast<std::size_t>(t)].col(j) =
          blk.features.row(static_cast<Eigen::Index>(row)).transpose().template cast<T>();
      batch.targets[static_cast<std::size_t>(t)].col(j) = rnn_target(blk.labels[row]).cast<T>();
    }
  }
  return batch;
}

template <class T>
struct TrainResult {
  LstmWeights<T> weights;
  std::vector<double> train_loss;  // mean minibatch loss per epoch (with dropout)
  std::vector<double> valid_loss;  // dropout-free loss on the selection set per epoch
  int best_epoch = -1;             // -1: initial weights were kept
};

/// Mean dropout-free loss over all windows of a set, evaluated in batches.
template <class T>
double evaluate_loss(const LstmWeights<T>& w, const WindowSet& set, int batch_size) {
  if (set.windows.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  std::vector<std::size_t> ids;
  for (std::size_t start = 0; start < set.windows.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(set.windows.size(), start + static_cast<std::size_t>(batch_size));
    ids.resize(stop - start);
    for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = start + k;
    const auto batch = gather_batch<T>(set, ids);
    total += static_cast<double>(lstm_forward_loss(w, batch)) * static_cast<double>(ids.size());
  }
  return total / static_cast<double>(set.windows.size());
}

/// Truncated-BPTT training with Adam. Minibatches are drawn from a per-epoch
/// shuffle of all training windows; after each epoch the dropout-free
/// validation loss is measured and the best epoch's weights are returned.
/// With no validation windows the training set itself is used for selection.
template <class T = float>
TrainResult<T> train_rnn(std::span<const Block* const> train_blocks, std::span<const Block* const> valid_blocks,
                         const TrainConfig& config) {
  config.validate();
  const WindowSet train = make_windows(train_blocks, config.unroll_steps);
  if (train.windows.empty()) throw TrainError("no training windows of " + std::to_string(config.unroll_steps) + " steps");
  const WindowSet valid = make_windows(valid_blocks, config.unroll_steps);
  const WindowSet& selection = valid.windows.empty() ? train : valid;
  const int features = static_cast<int>(train.blocks.front()->features.cols());

  TrainResult<T> result;
  result.weights = init_lstm_weights<T>(features, config.hidden_units, derive_seed(config.seed, {0x1417ULL}));
  if (config.epochs == 0) return result;

  LstmWeights<T> w = result.weights;
  AdamConfig adam = config.adam;
  adam.learning_rate = config.learning_rate;
  AdamOptimizer<T> opt(w, adam);
  LstmWeights<T> grad;
  double best = std::numeric_limits<double>::infinity();
  const double keep = 1.0 - config.dropout;

  std::vector<std::size_t> order(train.windows.size());
  std::vector<typename SequenceBatch<T>::Matrix> masks;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, {0xe90cULL, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::span<const std::size_t> ids(order.data() + start, stop - start);
      const auto batch = gather_batch<T>(train, ids);
      T loss;
      if (config.dropout > 0.0) {
        masks.assign(static_cast<std::size_t>(config.unroll_steps),
                     SequenceBatch<T>::Matrix::Zero(config.hidden_units, static_cast<Eigen::Index>(ids.size())));
        for (auto& m : masks)
          for (Eigen::Index k = 0; k < m.size(); ++k)
            m.data()[k] = rng.uniform() < keep ? static_cast<T>(1.0 / keep) : T(0);
        loss = lstm_loss_and_gradient(w, batch, grad, &masks);
      } else {
        loss = lstm_loss_and_gradient(w, batch, grad);
      }
      if (!std::isfinite(static_cast<double>(loss)) || !grad.all_finite())
        throw TrainError("training diverged at epoch " + std::to_string(epoch));
      opt.step(w, grad);
      epoch_loss += static_cast<double>(loss) * static_cast<double>(ids.size());
    }
    if (!w.all_finite()) throw TrainError("weights became non-finite at epoch " + std::to_string(epoch));
    result.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    const double vloss = evaluate_loss(w, selection, config.batch_size);
    if (!std::isfinite(vloss)) throw TrainError("validation loss is not finite at epoch " + std::to_string(epoch));
    result.valid_loss.push_back(vloss);
    if (vloss < best) {
      best = vloss;
      result.best_epoch = epoch;
      result.weights = w;
    }
  }
  return result;
}

}  // namespace bcisim
