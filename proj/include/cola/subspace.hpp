#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "cola/common.hpp"

namespace cola {

struct SymmetricEigen {
  Vector values;   // descending
  Matrix vectors;  // columns match values
  int sweeps = 0;
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Sweeps rotate every
// off-diagonal pair until the off-diagonal mass is negligible relative to the
// Frobenius norm.
inline SymmetricEigen jacobi_eigen(Matrix a, int max_sweeps = 100) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) fail_usage("linalg_subspace", "jacobi_eigen requires a square matrix");
  Matrix v = Matrix::Identity(n, n);
  const double scale = a.norm();
  const double eps = std::numeric_limits<double>::epsilon();

  auto off_diagonal = [&] {
    double s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < j; ++i) s += a(i, j) * a(i, j);
    return std::sqrt(2.0 * s);
  };

  int sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    if (scale == 0.0 || off_diagonal() <= eps * scale) break;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= eps * eps * scale) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // tan of the rotation angle, smaller root for stability
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (Eigen::Index k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = a(p, k) = c * akp - s * akq;
          a(k, q) = a(q, k) = s * akp + c * akq;
        }
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (sweep == max_sweeps && off_diagonal() > std::sqrt(eps) * scale) {
    fail_numerical("linalg_subspace", "Jacobi eigensolver did not converge");
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return a(i, i) > a(j, j); });

  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values[k] = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
    out.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
  }
  out.sweeps = sweep;
  return out;
}

// Flips v so that its largest-magnitude entry (first on ties) is positive.
inline void canonical_sign(Eigen::Ref<Vector> v) {
  Eigen::Index arg = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > best) {
      best = std::abs(v[i]);
      arg = i;
    }
  }
  if (v[arg] < 0) v = -v;
}

struct PerturbationSplit {
  Vector parallel;
  Vector orthogonal;
};

class SubspaceProjector {
 public:
  SubspaceProjector() = default;
  SubspaceProjector(Matrix basis, Vector singular_values)
      : basis_(std::move(basis)), singular_values_(std::move(singular_values)) {
    if (basis_.cols() != singular_values_.size()) fail_usage("linalg_subspace", "basis/singular value size mismatch");
  }

  Eigen::Index dim() const { return basis_.rows(); }
  Eigen::Index components() const { return basis_.cols(); }
  const Matrix& basis() const { return basis_; }
  const Vector& singular_values() const { return singular_values_; }

  // U_C U_C^T x
  Vector project(const Vector& x) const {
    check_dim(x.size());
    return basis_ * (basis_.transpose() * x);
  }

  // Projects every row of an n x d matrix.
  Matrix project_rows(const Matrix& rows) const {
    check_dim(rows.cols());
    return (rows * basis_) * basis_.transpose();
  }

  PerturbationSplit split(const Vector& delta) const {
    PerturbationSplit s;
    s.parallel = project(delta);
    s.orthogonal = delta - s.parallel;
    return s;
  }

  // Coordinates of each row on the first two basis columns.
  Matrix pca_coords(const Matrix& features) const {
    if (components() < 2) fail_usage("linalg_subspace", "pca_coords requires at least 2 components");
    check_dim(features.cols());
    return features * basis_.leftCols(2);
  }

 private:
  void check_dim(Eigen::Index n) const {
    if (n != dim()) {
      fail_usage("linalg_subspace",
                 "dimension mismatch: expected " + std::to_string(dim()) + ", got " + std::to_string(n));
    }
  }

  Matrix basis_;
  Vector singular_values_;
};

// A component whose singular value falls below this fraction of the largest
// is treated as absent; requesting it is a rank error.
inline constexpr double kRankTolerance = 1e-6;

// Top-C left singular subspace of the d x KM matrix whose columns are the text
// features (rows of `text_features`). Computed from the d x d Gram matrix.
inline SubspaceProjector build_projector(const Matrix& text_features, Eigen::Index components, bool center = false) {
  const Eigen::Index rows = text_features.rows();
  const Eigen::Index d = text_features.cols();
  if (components < 1 || components > std::min(d, rows)) {
    fail_usage("linalg_subspace", "components C=" + std::to_string(components) + " out of range [1, " +
                                      std::to_string(std::min(d, rows)) + "]");
  }
  if (!text_features.allFinite()) fail_data("linalg_subspace", "text features contain non-finite values");

  Matrix z = text_features;
  if (center) z.rowwise() -= z.colwise().mean();
  const Matrix gram = z.transpose() * z;
  SymmetricEigen eig = jacobi_eigen(gram);

  Vector sv(components);
  for (Eigen::Index k = 0; k < components; ++k) sv[k] = std::sqrt(std::max(eig.values[k], 0.0));
  const double largest = std::sqrt(std::max(eig.values[0], 0.0));
  if (largest == 0.0 || sv[components - 1] <= kRankTolerance * largest) {
    fail_numerical("linalg_subspace", "text matrix rank is below C=" + std::to_string(components));
  }

  Matrix basis = eig.vectors.leftCols(components);
  for (Eigen::Index k = 0; k < components; ++k) canonical_sign(basis.col(k));
  return SubspaceProjector(std::move(basis), std::move(sv));
}

// proj.bin: u32le d, u32le C, basis column-major f32le, singular values f32le.
inline void save_projector(const SubspaceProjector& p, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes;
  auto put = [&](std::uint32_t v) {
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xffu));
  };
  put(static_cast<std::uint32_t>(p.dim()));
  put(static_cast<std::uint32_t>(p.components()));
  for (Eigen::Index c = 0; c < p.components(); ++c)
    for (Eigen::Index r = 0; r < p.dim(); ++r) put(std::bit_cast<std::uint32_t>(static_cast<float>(p.basis()(r, c))));
  for (Eigen::Index c = 0; c < p.components(); ++c)
    put(std::bit_cast<std::uint32_t>(static_cast<float>(p.singular_values()[c])));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_data("linalg_subspace", "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail_data("linalg_subspace", "write failed for " + path.string());
}

inline SubspaceProjector load_projector(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("linalg_subspace", "missing file " + path.string());
  const std::vector<unsigned char> bytes(std::istreambuf_iterator<char>(in), {});
  auto get = [&](std::size_t offset) {
    const unsigned char* p = bytes.data() + offset;
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  };
  if (bytes.size() < 8) fail_data("linalg_subspace", "proj.bin: truncated header");
  const std::uint32_t d = get(0);
  const std::uint32_t c = get(4);
  const std::size_t expected = 8 + (static_cast<std::size_t>(d) * c + c) * 4;
  if (d == 0 || c == 0 || c > d || bytes.size() != expected) {
    fail_data("linalg_subspace", "proj.bin: byte-count mismatch, expected " + std::to_string(expected) +
                                     " bytes, found " + std::to_string(bytes.size()));
  }
  Matrix basis(d, c);
  Vector sv(c);
  std::size_t offset = 8;
  for (std::uint32_t col = 0; col < c; ++col)
    for (std::uint32_t row = 0; row < d; ++row, offset += 4) basis(row, col) = std::bit_cast<float>(get(offset));
  for (std::uint32_t col = 0; col < c; ++col, offset += 4) sv[col] = std::bit_cast<float>(get(offset));
  if (!basis.allFinite() || !sv.allFinite()) fail_data("linalg_subspace", "proj.bin: non-finite value");
  // float storage leaves ~1e-7 drift; restore orthonormality with modified Gram-Schmidt
  for (Eigen::Index col = 0; col < basis.cols(); ++col) {
    for (Eigen::Index prev = 0; prev < col; ++prev) basis.col(col) -= basis.col(prev).dot(basis.col(col)) * basis.col(prev);
    const double norm = basis.col(col).norm();
    if (norm <= kMinNorm) fail_data("linalg_subspace", "proj.bin: basis columns are linearly dependent");
    basis.col(col) /= norm;
  }
  return SubspaceProjector(std::move(basis), std::move(sv));
}

}  // namespace cola
