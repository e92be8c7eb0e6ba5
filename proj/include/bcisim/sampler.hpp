#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numbers>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "bcisim/core.hpp"
#include "bcisim/datamodel.hpp"
#include "bcisim/rng.hpp"

namespace bcisim {

/// Read-only view of one pooled sample.
struct SampleView {
  std::span<const float> features;
  Vec2 label;
  int block_id = 0;
  int tick_ms = 0;
};

struct BinCoord {
  int angle = 0;
  int distance = 0;
  auto operator<=>(const BinCoord&) const = default;
};

/// Angle x distance binned pool of labeled samples. The index owns a copy of
/// the pooled features, so it is immutable and shareable once built.
class SampleIndex {
 public:
  static constexpr int kDefaultAngleBins = 16;
  static constexpr int kDefaultDistBins = 8;
  static constexpr double kDefaultMaxDist = std::numbers::sqrt2;

  static SampleIndex build(std::span<const LabeledSample> pool, int angle_bins = kDefaultAngleBins,
                           int dist_bins = kDefaultDistBins, double max_dist = kDefaultMaxDist) {
    if (pool.empty()) throw EmptyPoolError("cannot index an empty pool");
    SampleIndex idx(angle_bins, dist_bins, max_dist);
    const auto f = static_cast<Eigen::Index>(pool.front().features.size());
    idx.features_.resize(static_cast<Eigen::Index>(pool.size()), f);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (static_cast<Eigen::Index>(pool[i].features.size()) != f)
        throw ValidationError("pool samples disagree on feature count");
      idx.features_.row(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const Eigen::RowVectorXf>(pool[i].features.data(), f);
      idx.labels_.push_back(pool[i].label);
      idx.block_ids_.push_back(pool[i].block_id);
      idx.ticks_.push_back(pool[i].tick_ms);
    }
    idx.finish();
    return idx;
  }

  /// Pools every tick of the given blocks. `sources` records which blocks the
  /// index was built from so callers can audit for test-block leakage.
  static SampleIndex build(std::span<const Block* const> blocks, std::vector<BlockRef> sources = {},
                           int angle_bins = kDefaultAngleBins, int dist_bins = kDefaultDistBins,
                           double max_dist = kDefaultMaxDist) {
    std::size_t total = 0;
    for (const auto* b : blocks) total += b->ticks();
    if (total == 0) throw EmptyPoolError("cannot index an empty pool");
    SampleIndex idx(angle_bins, dist_bins, max_dist);
    const Eigen::Index f = blocks.front()->features.cols();
    idx.features_.resize(static_cast<Eigen::Index>(total), f);
    Eigen::Index row = 0;
    for (const auto* b : blocks) {
      if (b->features.cols() != f) throw ValidationError("blocks disagree on feature count");
      idx.features_.middleRows(row, b->features.rows()) = b->features;
      row += b->features.rows();
      idx.labels_.insert(idx.labels_.end(), b->labels.begin(), b->labels.end());
      idx.ticks_.insert(idx.ticks_.end(), b->tick_ms.begin(), b->tick_ms.end());
      idx.block_ids_.insert(idx.block_ids_.end(), b->ticks(), b->block_id);
    }
    idx.sources_ = std::move(sources);
    idx.finish();
    return idx;
  }

  int angle_bins() const { return angle_bins_; }
  int dist_bins() const { return dist_bins_; }
  double max_dist() const { return max_dist_; }
  std::size_t size() const { return labels_.size(); }
  int feature_count() const { return static_cast<int>(features_.cols()); }
  const FeatureMatrix& features() const { return features_; }
  const std::vector<BlockRef>& sources() const { return sources_; }

  SampleView sample(std::size_t i) const {
    const auto r = static_cast<Eigen::Index>(i);
    return {std::span<const float>(features_.row(r).data(), static_cast<std::size_t>(features_.cols())),
            labels_[i], block_ids_[i], ticks_[i]};
  }

  BinCoord bin_of(const Vec2& v) const {
    const double d = v.norm();
    if (d == 0.0) return {0, 0};
    double theta = std::atan2(v.y(), v.x());
    if (theta < 0.0) theta += 2.0 * std::numbers::pi;
    int a = static_cast<int>(std::floor(angle_bins_ * theta / (2.0 * std::numbers::pi)));
    a = ((a % angle_bins_) + angle_bins_) % angle_bins_;
    const int db = std::min(dist_bins_ - 1, static_cast<int>(std::floor(dist_bins_ * d / max_dist_)));
    return {a, db};
  }

  BinCoord stored_bin(std::size_t i) const { return coord(sample_bin_[i]); }

  std::span<const std::uint32_t> bin(BinCoord c) const { return bins_[flat(c)]; }

  /// The nonempty bin a query in `c` is served from.
  BinCoord resolved_bin(BinCoord c) const { return coord(fallback_[flat(c)]); }

  std::size_t draw_index(const Vec2& cursor_to_target, Rng& rng) const {
    const auto& members = bins_[fallback_[flat(bin_of(cursor_to_target))]];
    return members[static_cast<std::size_t>(rng.index(members.size()))];
  }

  SampleView draw(const Vec2& cursor_to_target, Rng& rng) const { return sample(draw_index(cursor_to_target, rng)); }

 private:
  SampleIndex(int angle_bins, int dist_bins, double max_dist)
      : angle_bins_(angle_bins), dist_bins_(dist_bins), max_dist_(max_dist) {
    if (angle_bins < 4) throw ValidationError("angle_bins must be >= 4");
    if (dist_bins < 2) throw ValidationError("dist_bins must be >= 2");
    if (!(max_dist > 0.0)) throw ValidationError("max_dist must be positive");
  }

  std::size_t flat(BinCoord c) const {
    return static_cast<std::size_t>(c.distance) * static_cast<std::size_t>(angle_bins_) +
           static_cast<std::size_t>(c.angle);
  }
  BinCoord coord(std::size_t f) const {
    return {static_cast<int>(f % static_cast<std::size_t>(angle_bins_)),
            static_cast<int>(f / static_cast<std::size_t>(angle_bins_))};
  }

  void finish() {
    bins_.assign(static_cast<std::size_t>(angle_bins_ * dist_bins_), {});
    sample_bin_.resize(labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      const std::size_t f = flat(bin_of(labels_[i]));
      bins_[f].push_back(static_cast<std::uint32_t>(i));
      sample_bin_[i] = f;
    }
    // Precompute the nearest nonempty bin for every bin: circular angle
    // difference plus distance-bin difference, ties to the smaller distance
    // difference, then the smaller angle index, then the smaller distance index.
    fallback_.resize(bins_.size());
    for (std::size_t q = 0; q < bins_.size(); ++q) {
      if (!bins_[q].empty()) {
        fallback_[q] = q;
        continue;
      }
      const BinCoord qc = coord(q);
      std::size_t best = bins_.size();
      std::tuple<int, int, int, int> best_key{};
      for (std::size_t c = 0; c < bins_.size(); ++c) {
        if (bins_[c].empty()) continue;
        const BinCoord cc = coord(c);
        const int da = std::abs(cc.angle - qc.angle);
        const int circ = std::min(da, angle_bins_ - da);
        const int dd = std::abs(cc.distance - qc.distance);
        const std::tuple<int, int, int, int> key{circ + dd, dd, cc.angle, cc.distance};
        if (best == bins_.size() || key < best_key) {
          best = c;
          best_key = key;
        }
      }
      fallback_[q] = best;
    }
  }

  int angle_bins_;
  int dist_bins_;
  double max_dist_;
  FeatureMatrix features_;
  std::vector<Vec2> labels_;
  std::vector<int> block_ids_;
  std::vector<int> ticks_;
  std::vector<BlockRef> sources_;
  std::vector<std::vector<std::uint32_t>> bins_;
  std::vector<std::size_t> sample_bin_;
  std::vector<std::size_t> fallback_;
};

}  // namespace bcisim
