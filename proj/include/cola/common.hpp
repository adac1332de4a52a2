#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace cola {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Norms at or below this are treated as zero wherever a cosine is taken.
inline constexpr double kMinNorm = 1e-12;

enum class ErrorKind { usage, data, numerical };

// Every failure carries the module it came from so the CLI can map it to an
// exit code and a machine-readable report.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message), kind_(kind), module_(std::move(module)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

[[noreturn]] inline void fail_usage(const std::string& module, const std::string& message) {
  throw Error(ErrorKind::usage, module, message);
}

[[noreturn]] inline void fail_data(const std::string& module, const std::string& message) {
  throw Error(ErrorKind::data, module, message);
}

[[noreturn]] inline void fail_numerical(const std::string& module, const std::string& message) {
  throw Error(ErrorKind::numerical, module, message);
}

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::data: return "data";
    case ErrorKind::numerical: return "numerical";
  }
  return "unknown";
}

template <typename A, typename B>
double cosine(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y) {
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx <= kMinNorm || ny <= kMinNorm) {
    throw Error(ErrorKind::numerical, "cosine", "cosine undefined for zero-norm vector");
  }
  return x.dot(y) / (nx * ny);
}

// Numerically stable log(sum(exp(v))).
template <typename V>
double log_sum_exp(const Eigen::MatrixBase<V>& v) {
  const double c = v.maxCoeff();
  if (!std::isfinite(c)) return c;
  return c + std::log((v.array() - c).exp().sum());
}

// softmax(scale * v)
inline Vector softmax(const Vector& v, double scale = 1.0) {
  Vector s = scale * v;
  const double c = s.maxCoeff();
  Vector e = (s.array() - c).exp();
  return e / e.sum();
}

}  // namespace cola
