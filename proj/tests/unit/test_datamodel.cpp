#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "bcisim/datamodel.hpp"
#include "bcisim/rng.hpp"

using namespace bcisim;

namespace {

Block make_block(int id, int ticks, int features, Rng& rng) {
  Block b;
  b.block_id = id;
  b.features.resize(ticks, features);
  for (int i = 0; i < ticks; ++i) {
    b.tick_ms.push_back(i * kTickMs);
    b.labels.emplace_back(rng.uniform(-2, 2), rng.uniform(-2, 2));
    for (int c = 0; c < features; ++c) b.features(i, c) = static_cast<float>(rng.normal());
  }
  return b;
}

SessionData make_session(int index, int blocks, int ticks = 10, int features = 3, std::uint64_t seed = 1) {
  Rng rng(seed + static_cast<std::uint64_t>(index));
  SessionData s;
  s.session_index = index;
  s.calendar_day = index * 3;
  s.feature_count = features;
  for (int b = 1; b <= blocks; ++b) s.blocks.push_back(make_block(b, ticks, features, rng));
  return s;
}

std::string header(int features) {
  std::string h = "block_id,tick_ms,label_dx,label_dy";
  for (int c = 0; c < features; ++c) h += ",f" + std::to_string(c);
  return h + "\n";
}

std::string row(int block, int tick, int features) {
  std::string r = std::to_string(block) + "," + std::to_string(tick) + ",0.5,-0.25";
  for (int c = 0; c < features; ++c) r += "," + std::to_string(c);
  return r + "\n";
}

// Linear-interpolation percentile computed independently of the library.
double oracle_percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

TEST(LoadSession, TwoBlockFile) {
  std::string text = header(2);
  for (int t = 0; t < 3; ++t) text += row(1, t * 20, 2);
  for (int t = 0; t < 4; ++t) text += row(2, t * 20, 2);
  std::istringstream in(text);
  const auto s = read_session(in);
  ASSERT_EQ(s.blocks.size(), 2u);
  EXPECT_EQ(s.feature_count, 2);
  EXPECT_EQ(s.blocks[0].ticks(), 3u);
  EXPECT_EQ(s.blocks[1].ticks(), 4u);
  EXPECT_DOUBLE_EQ(s.blocks[1].labels[2].y(), -0.25);
}

TEST(LoadSession, ShortRowNamesRow) {
  std::string text = header(384);
  for (int t = 0; t < 5; ++t) text += row(1, t * 20, 384);
  text += row(1, 100, 383);  // file line 7
  std::istringstream in(text);
  try {
    read_session(in);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 7u);
    EXPECT_NE(std::string(e.what()).find("383"), std::string::npos);
  }
}

TEST(LoadSession, NonMonotoneTicksRejected) {
  std::string text = header(1) + row(1, 0, 1) + row(1, 40, 1);
  std::istringstream in(text);
  EXPECT_THROW(read_session(in), ParseError);
}

TEST(LoadSession, BadHeaderRejected) {
  std::istringstream in("block,tick_ms,label_dx,label_dy,f0\n1,0,0,0,1\n");
  EXPECT_THROW(read_session(in), ParseError);
}

TEST(LoadSession, WriteLoadRoundTripIsByteIdentical) {
  const auto s = make_session(0, 3, 25, 4);
  std::ostringstream first;
  write_session(s, first);
  std::istringstream in(first.str());
  const auto loaded = read_session(in);
  std::ostringstream second;
  write_session(loaded, second);
  EXPECT_EQ(first.str(), second.str());
}

TEST(LoadSession, DatasetManifestResolvesRelativePaths) {
  const auto dir = std::filesystem::temp_directory_path() / "bcisim_manifest_test";
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (int i : {1, 0}) {
    const auto s = make_session(i, 2);
    const std::string name = "s" + std::to_string(i) + ".csv";
    write_session(s, dir / name);
    entries.push_back({i, 10 * i, name});
  }
  write_manifest(entries, dir / "manifest.csv");
  const auto sessions = load_dataset(dir / "manifest.csv");
  ASSERT_EQ(sessions.size(), 2u);
  EXPECT_EQ(sessions[0].session_index, 0);
  EXPECT_EQ(sessions[1].calendar_day, 10);
  std::filesystem::remove_all(dir);
}

TEST(ZScore, HandComputedColumn) {
  Eigen::MatrixXd m(3, 1);
  m << 1, 2, 3;
  const auto z = zscore_block(m);
  EXPECT_NEAR(z(0, 0), -1.22474487, 1e-6);
  EXPECT_NEAR(z(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(z(2, 0), 1.22474487, 1e-6);
}

TEST(ZScore, ConstantColumnBecomesZeros) {
  Eigen::MatrixXd m(3, 2);
  m << 5, 1, 5, 2, 5, 4;
  const auto z = zscore_block(m);
  EXPECT_EQ(z.col(0), Eigen::Vector3d::Zero());
}

TEST(ZScore, StandardizedColumnUnchangedAndIdempotent) {
  Rng rng(3);
  Eigen::MatrixXd m(50, 4);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * 3 + 7;
  const auto once = zscore_block(m);
  const auto twice = zscore_block(once);
  EXPECT_LT((once - twice).cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index c = 0; c < 4; ++c) {
    EXPECT_NEAR(once.col(c).mean(), 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(once.col(c).squaredNorm() / 50.0), 1.0, 1e-12);
  }
}

TEST(ZScore, SingleRowIsDegenerate) {
  Eigen::MatrixXd m(1, 3);
  m.setOnes();
  EXPECT_THROW(zscore_block(m), DegenerateBlockError);
}

TEST(NormalizeLabels, AllZeroUnchanged) {
  auto s = make_session(0, 1, 5, 1);
  for (auto& l : s.blocks[0].labels) l.setZero();
  const auto n = normalize_labels(s);
  EXPECT_EQ(n.label_scale, 1.0);
  for (const auto& l : n.blocks[0].labels) EXPECT_EQ(l, Vec2::Zero());
}

TEST(NormalizeLabels, MostComponentsWithinUnitRange) {
  auto s = make_session(0, 1, 100, 1);
  for (int i = 0; i < 100; ++i) s.blocks[0].labels[static_cast<std::size_t>(i)] = Vec2(2 * i + 1, -(2 * i + 2));
  const auto n = normalize_labels(s);
  int inside = 0;
  for (const auto& l : n.blocks[0].labels) inside += (std::abs(l.x()) <= 1.0) + (std::abs(l.y()) <= 1.0);
  EXPECT_GE(inside, 198);
}

TEST(NormalizeLabels, SingleSampleMatchesPercentileOracle) {
  SessionData s = make_session(0, 1, 2, 1);
  s.blocks[0].labels = {Vec2(3, -4), Vec2(3, -4)};
  const double expected = oracle_percentile({3, 4, 3, 4}, 99.0);
  const auto n = normalize_labels(s);
  EXPECT_NEAR(n.label_scale, expected, 1e-12);
  EXPECT_NEAR(n.blocks[0].labels[0].x(), 3.0 / expected, 1e-12);
}

TEST(NormalizeLabels, PreservesDirection) {
  const auto s = make_session(0, 2, 40, 1);
  const auto n = normalize_labels(s);
  for (std::size_t b = 0; b < s.blocks.size(); ++b)
    for (std::size_t i = 0; i < s.blocks[b].labels.size(); ++i) {
      const Vec2 a = s.blocks[b].labels[i], c = n.blocks[b].labels[i];
      EXPECT_NEAR(a.x() * c.y() - a.y() * c.x(), 0.0, 1e-12);
      EXPECT_GE(a.dot(c), 0.0);
    }
}

TEST(Split, SixBlocksNoPriors) {
  const std::vector<SessionData> sessions{make_session(0, 6)};
  const auto sp = make_split(sessions, 0, 0);
  EXPECT_EQ(sp.train_blocks, (std::vector<BlockRef>{{0, 1}, {0, 2}}));
  EXPECT_EQ(sp.validation_blocks, (std::vector<BlockRef>{{0, 3}, {0, 4}}));
  EXPECT_EQ(sp.test_blocks, (std::vector<BlockRef>{{0, 5}, {0, 6}}));
}

TEST(Split, OnePriorSessionAddsAllItsBlocks) {
  const std::vector<SessionData> sessions{make_session(0, 3), make_session(1, 4), make_session(2, 6)};
  const auto sp = make_split(sessions, 2, 1);
  EXPECT_EQ(sp.prior_sessions, 1);
  std::set<BlockRef> train(sp.train_blocks.begin(), sp.train_blocks.end());
  EXPECT_EQ(train, (std::set<BlockRef>{{1, 1}, {1, 2}, {1, 3}, {1, 4}, {2, 1}, {2, 2}}));
}

TEST(Split, DClippedToAvailableSessions) {
  const std::vector<SessionData> sessions{make_session(0, 2), make_session(1, 5)};
  EXPECT_EQ(make_split(sessions, 1, 30).prior_sessions, 1);
}

TEST(Split, FourBlocksIneligible) {
  const std::vector<SessionData> sessions{make_session(0, 4)};
  EXPECT_THROW(make_split(sessions, 0, 0), IneligibleSessionError);
}

TEST(Split, ListsDisjointAndCoverIntendedBlocks) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<SessionData> sessions;
    const int n = 1 + static_cast<int>(rng.index(6));
    for (int i = 0; i < n; ++i) sessions.push_back(make_session(i, 5 + static_cast<int>(rng.index(4)), 3));
    const int test = static_cast<int>(rng.index(static_cast<std::uint64_t>(n)));
    const int d = static_cast<int>(rng.index(8));
    const auto sp = make_split(sessions, test, d);
    std::set<BlockRef> all;
    std::size_t total = 0;
    for (const auto* list : {&sp.train_blocks, &sp.validation_blocks, &sp.test_blocks}) {
      all.insert(list->begin(), list->end());
      total += list->size();
    }
    EXPECT_EQ(all.size(), total);
    std::set<BlockRef> expected;
    for (const auto& s : sessions)
      if (s.session_index == test || (s.session_index < test && s.session_index >= test - d))
        for (const auto& b : s.blocks) expected.insert({s.session_index, b.block_id});
    EXPECT_EQ(all, expected);
  }
}
