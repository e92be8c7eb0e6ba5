#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "bcisim/core.hpp"
#include "bcisim/stats.hpp"

namespace bcisim {

/// One 20 ms tick: a feature vector and the cursor-to-target label it was
/// recorded with.
struct LabeledSample {
  std::vector<float> features;
  Vec2 label = Vec2::Zero();
  int block_id = 0;
  int tick_ms = 0;
};

/// A contiguous recording block stored column-wise: row i of `features` is the
/// feature vector of tick i.
struct Block {
  int block_id = 0;
  std::vector<int> tick_ms;
  std::vector<Vec2> labels;
  FeatureMatrix features;

  std::size_t ticks() const { return labels.size(); }

  LabeledSample sample(std::size_t i) const {
    LabeledSample s;
    s.features.assign(features.row(static_cast<Eigen::Index>(i)).data(),
                      features.row(static_cast<Eigen::Index>(i)).data() + features.cols());
    s.label = labels[i];
    s.block_id = block_id;
    s.tick_ms = tick_ms[i];
    return s;
  }
};

struct SessionData {
  int session_index = 0;
  int calendar_day = 0;
  int feature_count = 0;
  double label_scale = 1.0;
  std::vector<Block> blocks;

  std::size_t sample_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.ticks();
    return n;
  }

  const Block& block(int block_id) const {
    for (const auto& b : blocks)
      if (b.block_id == block_id) return b;
    throw ValidationError("session " + std::to_string(session_index) + " has no block " +
                          std::to_string(block_id));
  }

  void validate() const {
    if (blocks.empty()) throw ValidationError("session has no blocks");
    if (feature_count <= 0) throw ValidationError("feature_count must be positive");
    if (!(label_scale > 0.0)) throw ValidationError("label_scale must be positive");
    for (const auto& b : blocks) {
      if (b.features.rows() != static_cast<Eigen::Index>(b.ticks()) ||
          b.features.cols() != feature_count || b.tick_ms.size() != b.ticks())
        throw ValidationError("block " + std::to_string(b.block_id) + " has inconsistent dimensions");
      for (std::size_t i = 0; i < b.ticks(); ++i) {
        if (b.tick_ms[i] % kTickMs != 0) throw ValidationError("tick_ms not a multiple of 20");
        if (i > 0 && b.tick_ms[i] != b.tick_ms[i - 1] + kTickMs)
          throw ValidationError("tick_ms not strictly increasing by 20 within block");
        if (!b.labels[i].allFinite()) throw ValidationError("non-finite label");
      }
    }
  }
};

struct BlockRef {
  int session_index = 0;
  int block_id = 0;
  auto operator<=>(const BlockRef&) const = default;
};

/// Train / validation / test block assignment for one test session.
struct DataSplit {
  int test_session_index = 0;
  int prior_sessions = 0;  // D after clipping to what exists
  std::vector<BlockRef> train_blocks;
  std::vector<BlockRef> validation_blocks;
  std::vector<BlockRef> test_blocks;
};

// ---------------------------------------------------------------------------
// Session CSV

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, std::size_t row, const char* what) {
  T value{};
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last)
    throw ParseError(row, std::string("cannot parse ") + what + " '" + std::string(s) + "'");
  return value;
}

inline void append_number(std::string& out, double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof buf, "%.9g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace detail

/// Parses a session CSV (`block_id,tick_ms,label_dx,label_dy,f0,...`). Rows
/// are numbered by file line, the header being row 1.
inline SessionData read_session(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  detail::strip_cr(line);
  const auto header = detail::split_csv(line);
  if (header.size() < 5 || header[0] != "block_id" || header[1] != "tick_ms" ||
      header[2] != "label_dx" || header[3] != "label_dy")
    throw ParseError(1, "malformed header");
  const int feature_count = static_cast<int>(header.size()) - 4;
  for (int c = 0; c < feature_count; ++c)
    if (header[static_cast<std::size_t>(c) + 4] != "f" + std::to_string(c))
      throw ParseError(1, "malformed header: expected f" + std::to_string(c));

  SessionData session;
  session.feature_count = feature_count;

  struct Pending {
    int block_id = 0;
    std::vector<int> ticks;
    std::vector<Vec2> labels;
    std::vector<float> values;
  };
  std::vector<Pending> pending;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    detail::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size())
      throw ParseError(row, "expected " + std::to_string(feature_count) + " features, found " +
                                std::to_string(static_cast<long>(cells.size()) - 4));
    const int block_id = detail::parse_number<int>(cells[0], row, "block_id");
    const int tick = detail::parse_number<int>(cells[1], row, "tick_ms");
    const Vec2 label(detail::parse_number<double>(cells[2], row, "label_dx"),
                     detail::parse_number<double>(cells[3], row, "label_dy"));
    if (!label.allFinite()) throw ParseError(row, "non-finite label");
    if (tick < 0 || tick % kTickMs != 0) throw ParseError(row, "tick_ms must be a nonnegative multiple of 20");

    if (pending.empty() || pending.back().block_id != block_id) {
      for (const auto& p : pending)
        if (p.block_id == block_id) throw ParseError(row, "block " + std::to_string(block_id) + " is not contiguous");
      pending.push_back({block_id, {}, {}, {}});
    } else if (tick != pending.back().ticks.back() + kTickMs) {
      throw ParseError(row, "tick_ms must increase by 20 within a block");
    }
    auto& p = pending.back();
    p.ticks.push_back(tick);
    p.labels.push_back(label);
    for (int c = 0; c < feature_count; ++c)
      p.values.push_back(detail::parse_number<float>(cells[static_cast<std::size_t>(c) + 4], row, "feature"));
  }
  if (pending.empty()) throw ParseError(row, "no data rows");

  for (auto& p : pending) {
    Block b;
    b.block_id = p.block_id;
    b.tick_ms = std::move(p.ticks);
    b.labels = std::move(p.labels);
    b.features = Eigen::Map<const FeatureMatrix>(p.values.data(), static_cast<Eigen::Index>(b.ticks()),
                                                 feature_count);
    session.blocks.push_back(std::move(b));
  }
  session.validate();
  return session;
}

inline SessionData load_session(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  return read_session(in);
}

inline void write_session(const SessionData& session, std::ostream& out) {
  std::string line = "block_id,tick_ms,label_dx,label_dy";
  for (int c = 0; c < session.feature_count; ++c) line += ",f" + std::to_string(c);
  line += '\n';
  out << line;
  for (const auto& b : session.blocks) {
    for (std::size_t i = 0; i < b.ticks(); ++i) {
      line.clear();
      line += std::to_string(b.block_id);
      line += ',';
      line += std::to_string(b.tick_ms[i]);
      line += ',';
      detail::append_number(line, b.labels[i].x());
      line += ',';
      detail::append_number(line, b.labels[i].y());
      const auto r = static_cast<Eigen::Index>(i);
      for (int c = 0; c < session.feature_count; ++c) {
        line += ',';
        detail::append_number(line, b.features(r, c));
      }
      line += '\n';
      out << line;
    }
  }
}

inline void write_session(const SessionData& session, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_session(session, out);
}

// ---------------------------------------------------------------------------
// Manifest CSV: session_index,calendar_day,path

struct ManifestEntry {
  int session_index = 0;
  int calendar_day = 0;
  std::string path;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing manifest header");
  detail::strip_cr(line);
  if (line != "session_index,calendar_day,path") throw ParseError(1, "malformed manifest header");
  std::vector<ManifestEntry> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    detail::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != 3) throw ParseError(row, "manifest rows have 3 columns");
    out.push_back({detail::parse_number<int>(cells[0], row, "session_index"),
                   detail::parse_number<int>(cells[1], row, "calendar_day"), std::string(cells[2])});
  }
  return out;
}

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "session_index,calendar_day,path\n";
  for (const auto& e : entries) out << e.session_index << ',' << e.calendar_day << ',' << e.path << '\n';
}

/// Loads every session a manifest lists, ordered by session_index. Relative
/// paths resolve against the manifest's directory.
inline std::vector<SessionData> load_dataset(const std::filesystem::path& manifest) {
  auto entries = read_manifest(manifest);
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.session_index < b.session_index; });
  std::vector<SessionData> sessions;
  for (const auto& e : entries) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = manifest.parent_path() / p;
    SessionData s;
    try {
      s = load_session(p);
    } catch (const ParseError& err) {
      throw ParseError(err.row(), p.string() + ": " + err.what());
    }
    s.session_index = e.session_index;
    s.calendar_day = e.calendar_day;
    sessions.push_back(std::move(s));
  }
  return sessions;
}

// ---------------------------------------------------------------------------
// Normalization

/// Z-scores each column with its mean and population standard deviation.
/// Columns with (numerically) zero variance become all zeros.
template <class Derived>
typename Derived::PlainObject zscore_block(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index rows = m.rows();
  if (rows < 2) throw DegenerateBlockError("z-scoring needs at least 2 rows, got " + std::to_string(rows));
  typename Derived::PlainObject out(rows, m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    double sum = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) sum += static_cast<double>(m(r, c));
    const double mu = sum / static_cast<double>(rows);
    double ss = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double d = static_cast<double>(m(r, c)) - mu;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(rows));
    if (sd <= 1e-12 * (1.0 + std::abs(mu))) {
      out.col(c).setZero();
      continue;
    }
    for (Eigen::Index r = 0; r < rows; ++r)
      out(r, c) = static_cast<Scalar>((static_cast<double>(m(r, c)) - mu) / sd);
  }
  return out;
}

/// Returns the session with every block's features z-scored per block.
inline SessionData zscore_features(SessionData session) {
  for (auto& b : session.blocks) b.features = zscore_block(b.features);
  return session;
}

/// Divides every label by the 99th percentile of the pooled absolute label
/// components. All-zero labels are left alone with label_scale = 1.
inline SessionData normalize_labels(SessionData session) {
  std::vector<double> magnitudes;
  magnitudes.reserve(2 * session.sample_count());
  for (const auto& b : session.blocks)
    for (const auto& l : b.labels) {
      magnitudes.push_back(std::abs(l.x()));
      magnitudes.push_back(std::abs(l.y()));
    }
  if (magnitudes.empty()) throw DomainError("normalize_labels needs at least one sample");
  const double s = stats::percentile(magnitudes, 99.0);
  if (s == 0.0) {
    session.label_scale = 1.0;
    return session;
  }
  for (auto& b : session.blocks)
    for (auto& l : b.labels) l /= s;
  session.label_scale = s;
  return session;
}

/// Full preprocessing applied before any decoder sees a session.
inline SessionData prepare_session(SessionData session) {
  return normalize_labels(zscore_features(std::move(session)));
}

// ---------------------------------------------------------------------------
// Splits

inline constexpr int kMinTestBlocks = 5;

/// Train on every test-session block except the last four plus all blocks of
/// the D most recent prior sessions; validate on blocks b-3, b-2 and test on
/// b-1, b. D is clipped to the number of prior sessions available.
inline DataSplit make_split(std::span<const SessionData> sessions, int test_session_index, int prior_sessions) {
  if (prior_sessions < 0) throw ValidationError("D must be nonnegative");
  const SessionData* test = nullptr;
  std::vector<const SessionData*> priors;
  for (const auto& s : sessions) {
    if (s.session_index == test_session_index) test = &s;
    else if (s.session_index < test_session_index) priors.push_back(&s);
  }
  if (test == nullptr) throw ValidationError("unknown test session " + std::to_string(test_session_index));
  const auto b = static_cast<int>(test->blocks.size());
  if (b < kMinTestBlocks)
    throw IneligibleSessionError("session " + std::to_string(test_session_index) + " has " + std::to_string(b) +
                                 " blocks; test sessions need at least " + std::to_string(kMinTestBlocks));

  std::sort(priors.begin(), priors.end(),
            [](const auto* x, const auto* y) { return x->session_index > y->session_index; });
  const int used = std::min<int>(prior_sessions, static_cast<int>(priors.size()));

  DataSplit split;
  split.test_session_index = test_session_index;
  split.prior_sessions = used;
  for (int i = used - 1; i >= 0; --i)
    for (const auto& blk : priors[static_cast<std::size_t>(i)]->blocks)
      split.train_blocks.push_back({priors[static_cast<std::size_t>(i)]->session_index, blk.block_id});
  for (int i = 0; i < b; ++i) {
    const BlockRef ref{test_session_index, test->blocks[static_cast<std::size_t>(i)].block_id};
    if (i < b - 4) split.train_blocks.push_back(ref);
    else if (i < b - 2) split.validation_blocks.push_back(ref);
    else split.test_blocks.push_back(ref);
  }
  return split;
}

inline const SessionData& find_session(std::span<const SessionData> sessions, int session_index) {
  for (const auto& s : sessions)
    if (s.session_index == session_index) return s;
  throw ValidationError("unknown session " + std::to_string(session_index));
}

/// Non-owning block pointers for a list of refs; sessions must outlive them.
inline std::vector<const Block*> resolve_blocks(std::span<const SessionData> sessions,
                                                std::span<const BlockRef> refs) {
  std::vector<const Block*> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back(&find_session(sessions, r.session_index).block(r.block_id));
  return out;
}

}  // namespace bcisim
