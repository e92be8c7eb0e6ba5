#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "bcisim/core.hpp"

namespace bcisim::stats {

/// Percentile with linear interpolation between order statistics
/// (rank = p/100 * (n - 1)), p in [0, 100].
inline double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw DomainError("percentile of empty set");
  if (!(p >= 0.0 && p <= 100.0)) throw DomainError("percentile rank outside [0, 100]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double rank = p / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

inline double median(std::span<const double> values) { return percentile(values, 50.0); }

inline double mean(std::span<const double> values) {
  if (values.empty()) throw DomainError("mean of empty set");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

// Standard error of the mean with the n-1 sample variance; 0 for n < 2.
inline double sem(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  const double n = static_cast<double>(values.size());
  return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

struct RankSumResult {
  double u_statistic = 0.0;  // Mann-Whitney U of the first sample
  double z = 0.0;            // positive when the first sample tends larger
  double p_greater = 1.0;    // one-sided p-value for "first > second"
  double p_two_sided = 1.0;
};

/// Wilcoxon rank-sum test with the tie-corrected normal approximation.
/// Intended for acceptance checks with tens of samples per group or more.
inline RankSumResult rank_sum(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("rank-sum needs two nonempty samples");
  struct Item {
    double value;
    bool first;
  };
  std::vector<Item> all;
  all.reserve(a.size() + b.size());
  for (double v : a) all.push_back({v, true});
  for (double v : b) all.push_back({v, false});
  std::sort(all.begin(), all.end(), [](const Item& x, const Item& y) { return x.value < y.value; });

  const double n1 = static_cast<double>(a.size());
  const double n2 = static_cast<double>(b.size());
  const double n = n1 + n2;
  double rank_sum_a = 0.0;
  double tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].value == all[i].value) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].first) rank_sum_a += avg_rank;
    i = j;
  }

  RankSumResult r;
  r.u_statistic = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
  const double mu = n1 * n2 / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) return r;  // all values tied
  r.z = (r.u_statistic - mu) / std::sqrt(var);
  r.p_greater = 0.5 * std::erfc(r.z / std::sqrt(2.0));
  r.p_two_sided = std::min(1.0, std::erfc(std::abs(r.z) / std::sqrt(2.0)));
  return r;
}

}  // namespace bcisim::stats
