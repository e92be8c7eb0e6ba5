#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace bcisim {

inline constexpr const char* kVersion = "0.3.0";

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

// Features are stored as float: the 9-significant-digit CSV encoding round-trips
// a float exactly, and a session of 384 channels stays compact.
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kTickMs = 20;
inline constexpr double kTickSeconds = 0.02;

// Error hierarchy. Each operation throws the most specific type; callers that
// only care about failure catch bcisim::Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DegenerateBlockError : public Error {
 public:
  using Error::Error;
};

class IneligibleSessionError : public Error {
 public:
  using Error::Error;
};

class EmptyPoolError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_delta)
      : Error(what + " (last delta " + std::to_string(last_delta) + ")"), last_delta_(last_delta) {}
  double last_delta() const noexcept { return last_delta_; }

 private:
  double last_delta_;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class TrainError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace bcisim
