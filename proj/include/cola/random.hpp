#pragma once

#include <cstdint>
#include <random>

#include "cola/common.hpp"

namespace cola {

// Identifier written into bundle metadata so a reader knows which generator
// produced the data.
inline constexpr const char* kGeneratorName = "mt19937_64+splitmix64-streams";

// splitmix64 finalizer, used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(master) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t next() { return engine_(); }

  Vector normal_vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  // Uniform direction on the unit sphere.
  Vector unit_vector(Eigen::Index n) {
    for (;;) {
      Vector v = normal_vector(n);
      const double norm = v.norm();
      if (norm > kMinNorm) return v / norm;
    }
  }

  // d x k matrix with orthonormal columns spanning a uniformly random subspace.
  Matrix orthonormal_basis(Eigen::Index d, Eigen::Index k) {
    Matrix g(d, k);
    for (Eigen::Index j = 0; j < k; ++j)
      for (Eigen::Index i = 0; i < d; ++i) g(i, j) = normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    return qr.householderQ() * Matrix::Identity(d, k);
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace cola
