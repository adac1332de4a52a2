#include <catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include "cola/random.hpp"
#include "cola/subspace.hpp"
#include "test_support.hpp"

using namespace cola;
using Catch::Approx;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.normal();
  return m;
}

// Cosines of the principal angles between two orthonormal bases.
Vector principal_cosines(const Matrix& a, const Matrix& b) {
  Eigen::JacobiSVD<Matrix> svd(a.transpose() * b);
  return svd.singularValues();
}

}  // namespace

TEST_CASE("Jacobi eigendecomposition matches a dense solver") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 2 + trial % 12;
    const Matrix a = random_matrix(rng, n + 3, n);
    const Matrix sym = a.transpose() * a;
    const auto mine = jacobi_eigen(sym);
    Eigen::SelfAdjointEigenSolver<Matrix> oracle(sym);
    const Vector expected = oracle.eigenvalues().reverse();
    for (Eigen::Index k = 0; k < n; ++k) CHECK(mine.values[k] == Approx(expected[k]).margin(1e-10 * expected[0]));
    const Matrix recon = mine.vectors * mine.values.asDiagonal() * mine.vectors.transpose();
    CHECK((recon - sym).cwiseAbs().maxCoeff() <= 1e-10 * expected[0]);
    CHECK((mine.vectors.transpose() * mine.vectors - Matrix::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("coordinate rows span the coordinate plane") {
  Matrix z(2, 3);
  z << 1, 0, 0, 0, 1, 0;
  const auto p = build_projector(z, 2);
  CHECK(p.singular_values().minCoeff() > 0.0);
  const Matrix b = p.basis();
  CHECK(b.row(2).norm() == Approx(0.0).margin(1e-12));
  CHECK((b.transpose() * b - Matrix::Identity(2, 2)).norm() <= 1e-12);
}

TEST_CASE("rank-one bank yields the repeated row with singular value sqrt(KM)") {
  Vector v(5);
  v << 0.1, -0.7, 0.2, 0.5, 0.3;
  v.normalize();
  Matrix z(12, 5);
  for (Eigen::Index i = 0; i < z.rows(); ++i) z.row(i) = v.transpose();
  const auto p = build_projector(z, 1);
  CHECK(p.singular_values()[0] == Approx(std::sqrt(12.0)).epsilon(1e-12));
  // largest-magnitude entry of v is negative, so the canonical sign flips it
  CHECK((p.basis().col(0) + v).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK_THROWS_AS(build_projector(z, 2), Error);
}

TEST_CASE("basis matches the top eigenvectors of the Gram matrix") {
  Rng rng(2);
  const Matrix z = random_matrix(rng, 20, 8);
  const auto p = build_projector(z, 4);
  Eigen::SelfAdjointEigenSolver<Matrix> oracle(z.transpose() * z);
  for (Eigen::Index k = 0; k < 4; ++k) {
    const Vector expected = oracle.eigenvectors().col(7 - k);
    const double aligned = std::min((p.basis().col(k) - expected).cwiseAbs().maxCoeff(),
                                    (p.basis().col(k) + expected).cwiseAbs().maxCoeff());
    CHECK(aligned <= 1e-5);
    CHECK(p.singular_values()[k] == Approx(std::sqrt(oracle.eigenvalues()[7 - k])).epsilon(1e-10));
  }
}

TEST_CASE("subspace agrees with the left singular vectors of the d x KM matrix") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index d = 8 + 7 * trial % 57;
    const Matrix z = random_matrix(rng, 40, d);
    const Eigen::Index c = std::min<Eigen::Index>(d - 1, 6);
    const auto p = build_projector(z, c);
    Eigen::JacobiSVD<Matrix> svd(z.transpose(), Eigen::ComputeThinU);
    const Vector cosines = principal_cosines(p.basis(), svd.matrixU().leftCols(c));
    CHECK(std::acos(std::min(1.0, cosines.minCoeff())) <= 1e-4);
  }
}

TEST_CASE("canonical sign makes the largest entry positive") {
  Rng rng(4);
  const auto p = build_projector(random_matrix(rng, 30, 10), 5);
  for (Eigen::Index k = 0; k < 5; ++k) {
    Eigen::Index arg = 0;
    p.basis().col(k).cwiseAbs().maxCoeff(&arg);
    CHECK(p.basis()(arg, k) > 0.0);
  }
}

TEST_CASE("component count outside [1, min(d, KM)] is a usage error") {
  Rng rng(5);
  const Matrix z = random_matrix(rng, 4, 6);
  try {
    build_projector(z, 5);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::usage);
  }
  CHECK_THROWS_AS(build_projector(z, 0), Error);
}

TEST_CASE("projection onto coordinate plane") {
  Matrix basis(3, 2);
  basis << 1, 0, 0, 1, 0, 0;
  const SubspaceProjector p(basis, Vector::Ones(2));
  const Vector x = Vector{{0.6, 0.8, 0.5}};
  const Vector px = p.project(x);
  CHECK(px[0] == Approx(0.6));
  CHECK(px[1] == Approx(0.8));
  CHECK(px[2] == Approx(0.0).margin(1e-15));
  CHECK_THROWS_AS(p.project(Vector::Ones(4)), Error);
}

TEST_CASE("projection identities on random subspaces") {
  Rng rng(6);
  const Matrix basis = rng.orthonormal_basis(20, 5);
  const SubspaceProjector p(basis, Vector::Ones(5));
  for (int i = 0; i < 1000; ++i) {
    const Vector x = rng.normal_vector(20);
    const Vector px = p.project(x);
    CHECK((p.project(px) - px).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(std::abs(x.squaredNorm() - px.squaredNorm() - (x - px).squaredNorm()) <= 1e-6);
    CHECK(px.norm() <= x.norm() + 1e-9);
    const Vector in_span = basis * rng.normal_vector(5);
    CHECK((p.project(in_span) - in_span).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("perturbation split") {
  Rng rng(7);
  const Matrix basis = rng.orthonormal_basis(10, 3);
  const SubspaceProjector p(basis, Vector::Ones(3));
  const Vector inside = basis * rng.normal_vector(3);
  CHECK(p.split(inside).orthogonal.cwiseAbs().maxCoeff() <= 1e-6);
  const Vector g = rng.normal_vector(10);
  const Vector outside = g - basis * (basis.transpose() * g);
  CHECK(p.split(outside).parallel.cwiseAbs().maxCoeff() <= 1e-6);
  const auto s = p.split(g);
  CHECK((s.parallel + s.orthogonal - g).cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("pca coordinates") {
  Rng rng(8);
  const Matrix basis = rng.orthonormal_basis(6, 3);
  const SubspaceProjector p(basis, Vector::Ones(3));
  Matrix first(1, 6);
  first.row(0) = basis.col(0).transpose();
  const Matrix c = p.pca_coords(first);
  CHECK(c(0, 0) == Approx(1.0));
  CHECK(c(0, 1) == Approx(0.0).margin(1e-12));

  const Vector g = rng.normal_vector(6);
  Matrix outside(1, 6);
  outside.row(0) = (g - basis * (basis.transpose() * g)).transpose();
  CHECK(p.pca_coords(outside).cwiseAbs().maxCoeff() <= 1e-12);

  Matrix three(3, 6);
  for (int i = 0; i < 3; ++i) three.row(i) = rng.normal_vector(6).transpose();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 2; ++k) {
      double dot = 0.0;
      for (int j = 0; j < 6; ++j) dot += three(i, j) * basis(j, k);
      CHECK(p.pca_coords(three)(i, k) == Approx(dot).margin(1e-12));
    }
  const SubspaceProjector one(basis.leftCols(1), Vector::Ones(1));
  CHECK_THROWS_AS(one.pca_coords(three), Error);
}

TEST_CASE("centering fits the covariance instead of the raw second moment") {
  Rng rng(9);
  Vector offset = Vector::Zero(5);
  offset[0] = 10.0;
  Matrix z(50, 5);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    z.row(i) = (offset + rng.normal_vector(5).cwiseProduct(Vector{{0.1, 3.0, 0.5, 0.2, 0.1}})).transpose();
  }
  const auto raw = build_projector(z, 1);
  const auto centered = build_projector(z, 1, true);
  CHECK(std::abs(raw.basis()(0, 0)) > 0.9);
  CHECK(std::abs(centered.basis()(1, 0)) > 0.9);
}

TEST_CASE("projector file round trip") {
  Rng rng(10);
  const auto p = build_projector(random_matrix(rng, 30, 12), 5);
  const auto dir = test_support::scratch("projector");
  save_projector(p, dir / "proj.bin");
  CHECK(std::filesystem::file_size(dir / "proj.bin") == 8u + (12u * 5u + 5u) * 4u);
  const auto q = load_projector(dir / "proj.bin");
  CHECK(q.dim() == 12);
  CHECK(q.components() == 5);
  CHECK((q.basis() - p.basis()).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((q.basis().transpose() * q.basis() - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((q.singular_values() - p.singular_values()).cwiseAbs().maxCoeff() <= 1e-5 * p.singular_values()[0]);

  std::filesystem::resize_file(dir / "proj.bin", 40);
  try {
    load_projector(dir / "proj.bin");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
  CHECK_THROWS_AS(load_projector(dir / "absent.bin"), Error);
}
