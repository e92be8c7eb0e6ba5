#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "bcisim/core.hpp"
#include "bcisim/datamodel.hpp"
#include "bcisim/decoder.hpp"
#include "bcisim/kalman.hpp"
#include "bcisim/lstm.hpp"

// Text model files. Doubles are written with 17 significant digits and floats
// with 9, both of which round-trip exactly.
//
//   bcisim-kalman,1                  bcisim-lstm,1
//   features,<F>                     features,<F>
//   alpha,<a>  gain,<g>              hidden,<H>
//   ridge_lambda,<l>                 W,<4H*F values, column-major>
//   W,<4 values, column-major>       U,... b,... head_w,... head_b,...
//   H,<F*2>  K,<2*F>  Q,<F>

namespace bcisim {

inline constexpr const char* kKalmanMagic = "bcisim-kalman";
inline constexpr const char* kLstmMagic = "bcisim-lstm";
inline constexpr int kModelFormatVersion = 1;

namespace detail {

template <class T>
void write_tensor(std::ostream& out, const char* name, const T* data, Eigen::Index n) {
  out << name;
  char buf[40];
  for (Eigen::Index i = 0; i < n; ++i) {
    if constexpr (std::is_same_v<T, float>) std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(data[i]));
    else std::snprintf(buf, sizeof buf, ",%.17g", static_cast<double>(data[i]));
    out << buf;
  }
  out << '\n';
}

class ModelReader {
 public:
  explicit ModelReader(std::istream& in) : in_(in) {}

  std::vector<std::string_view> line(const std::string& expected_key) {
    if (!std::getline(in_, buf_)) throw ParseError(row_ + 1, "unexpected end of model file");
    ++row_;
    strip_cr(buf_);
    auto cells = split_csv(buf_);
    if (cells.front() != expected_key) throw ParseError(row_, "expected '" + expected_key + "'");
    return cells;
  }

  template <class T>
  T scalar(const std::string& key) {
    const auto cells = line(key);
    if (cells.size() != 2) throw ParseError(row_, key + " takes one value");
    return parse_number<T>(cells[1], row_, key.c_str());
  }

  template <class T>
  void tensor(const std::string& key, T* data, Eigen::Index n) {
    const auto cells = line(key);
    if (static_cast<Eigen::Index>(cells.size()) != n + 1)
      throw ParseError(row_, key + " expects " + std::to_string(n) + " values");
    for (Eigen::Index i = 0; i < n; ++i)
      data[i] = parse_number<T>(cells[static_cast<std::size_t>(i) + 1], row_, key.c_str());
  }

  void header(const char* magic) {
    const auto cells = line(magic);
    if (cells.size() != 2 || parse_number<int>(cells[1], row_, "version") != kModelFormatVersion)
      throw ParseError(row_, "unsupported model format version");
  }

 private:
  std::istream& in_;
  std::string buf_;
  std::size_t row_ = 0;
};

}  // namespace detail

inline void write_kalman(const KalmanModel& m, std::ostream& out) {
  m.validate();
  out << kKalmanMagic << ',' << kModelFormatVersion << '\n';
  out << "features," << m.feature_count() << '\n';
  detail::write_tensor(out, "alpha", &m.alpha, 1);
  detail::write_tensor(out, "gain", &m.gain, 1);
  detail::write_tensor(out, "ridge_lambda", &m.ridge_lambda, 1);
  detail::write_tensor(out, "W", m.W.data(), 4);
  detail::write_tensor(out, "H", m.H.data(), m.H.size());
  detail::write_tensor(out, "K", m.K.data(), m.K.size());
  detail::write_tensor(out, "Q", m.Q.data(), m.Q.size());
}

inline KalmanModel read_kalman(std::istream& in) {
  detail::ModelReader r(in);
  r.header(kKalmanMagic);
  const int f = r.scalar<int>("features");
  if (f < 1) throw ParseError(2, "features must be positive");
  KalmanModel m;
  m.alpha = r.scalar<double>("alpha");
  m.gain = r.scalar<double>("gain");
  m.ridge_lambda = r.scalar<double>("ridge_lambda");
  r.tensor("W", m.W.data(), 4);
  m.H.resize(f, 2);
  r.tensor("H", m.H.data(), m.H.size());
  m.K.resize(2, f);
  r.tensor("K", m.K.data(), m.K.size());
  m.Q.resize(f);
  r.tensor("Q", m.Q.data(), m.Q.size());
  m.validate();
  return m;
}

inline void write_lstm(const LstmWeights<float>& w, std::ostream& out) {
  w.validate();
  out << kLstmMagic << ',' << kModelFormatVersion << '\n';
  out << "features," << w.features() << '\n';
  out << "hidden," << w.hidden() << '\n';
  detail::write_tensor(out, "W", w.W.data(), w.W.size());
  detail::write_tensor(out, "U", w.U.data(), w.U.size());
  detail::write_tensor(out, "b", w.b.data(), w.b.size());
  detail::write_tensor(out, "head_w", w.head_w.data(), w.head_w.size());
  detail::write_tensor(out, "head_b", w.head_b.data(), w.head_b.size());
}

inline LstmWeights<float> read_lstm(std::istream& in) {
  detail::ModelReader r(in);
  r.header(kLstmMagic);
  const int f = r.scalar<int>("features");
  const int h = r.scalar<int>("hidden");
  if (f < 1 || h < 1) throw ParseError(3, "features and hidden must be positive");
  auto w = LstmWeights<float>::zeros(f, h);
  r.tensor("W", w.W.data(), w.W.size());
  r.tensor("U", w.U.data(), w.U.size());
  r.tensor("b", w.b.data(), w.b.size());
  r.tensor("head_w", w.head_w.data(), w.head_w.size());
  r.tensor("head_b", w.head_b.data(), w.head_b.size());
  w.validate();
  return w;
}

inline void save_decoder(const DecoderModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  if (model.kind == DecoderKind::kalman) write_kalman(*model.kalman, out);
  else if (model.kind == DecoderKind::rnn) write_lstm(*model.rnn, out);
  else throw ValidationError("only trained decoders can be saved");
}

/// Loads a Kalman or LSTM model file, dispatching on its header.
inline DecoderModel load_decoder(const std::filesystem::path& path, double gain = 1.0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  const int first = in.peek();
  std::string probe;
  std::getline(in, probe);
  in.clear();
  in.seekg(0);
  if (first != EOF && probe.rfind(kKalmanMagic, 0) == 0) {
    auto m = read_kalman(in);
    m.gain = gain;
    return DecoderModel::from_kalman(std::move(m));
  }
  if (first != EOF && probe.rfind(kLstmMagic, 0) == 0) return DecoderModel::from_rnn(read_lstm(in), gain);
  throw ParseError(1, "unrecognized model header in " + path.string());
}

}  // namespace bcisim
