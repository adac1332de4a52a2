#include <catch_amalgamated.hpp>

#include "cola/distributions.hpp"
#include "cola/random.hpp"

using namespace cola;
using Catch::Approx;

namespace {

Matrix orthogonal_means(Eigen::Index k, Eigen::Index d) {
  Matrix m = Matrix::Zero(k, d);
  for (Eigen::Index y = 0; y < k; ++y) m(y, y) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("posterior of an equiangular feature is uniform") {
  const Matrix means = orthogonal_means(2, 3);
  const Vector p = class_posterior(Vector{{1.0, 1.0, 0.3}}, means, 100.0);
  CHECK(p[0] == Approx(0.5));
  CHECK(p[1] == Approx(0.5));
}

TEST_CASE("posterior tends to uniform as temperature vanishes") {
  const Matrix means = orthogonal_means(4, 5);
  const Vector p = class_posterior(Vector{{0.9, 0.1, -0.3, 0.2, 0.0}}, means, 1e-9);
  for (Eigen::Index y = 0; y < 4; ++y) CHECK(p[y] == Approx(0.25).margin(1e-6));
}

TEST_CASE("posterior at temperature one is the plain softmax of cosines") {
  const Matrix means = orthogonal_means(2, 2);
  const Vector p = class_posterior(Vector{{2.0, 0.0}}, means, 1.0);
  const double e = std::exp(1.0);
  CHECK(p[0] == Approx(e / (e + 1.0)).epsilon(1e-12));
  CHECK(p[1] == Approx(1.0 / (e + 1.0)).epsilon(1e-12));
  CHECK(p[0] == Approx(0.7311).margin(1e-4));
}

TEST_CASE("posterior rejects zero-norm inputs") {
  const Matrix means = orthogonal_means(2, 2);
  CHECK_THROWS_AS(class_posterior(Vector::Zero(2), means, 1.0), Error);
  CHECK_THROWS_AS(class_posterior(Vector::Ones(2), Matrix::Zero(2, 2), 1.0), Error);
}

TEST_CASE("entropy values") {
  CHECK(entropy(Vector{{1.0, 0.0, 0.0}}) == 0.0);
  CHECK(entropy(Vector{{0.5, 0.5}}) == Approx(0.693147).margin(1e-6));
  CHECK(entropy(Vector{{0.75, 0.25}}) == Approx(-0.75 * std::log(0.75) - 0.25 * std::log(0.25)).epsilon(1e-14));
  CHECK(entropy(Vector{{0.75, 0.25}}) == Approx(0.562335).margin(1e-6));
  CHECK_THROWS_AS(entropy(Vector{{1.5, -0.5}}), Error);
}

TEST_CASE("view weights for one view and for identical views") {
  const Matrix means = orthogonal_means(3, 4);
  Matrix one(1, 4);
  one << 0.3, 0.1, 0.7, 0.2;
  CHECK(view_weights(one, means, {}).isApprox(Vector::Ones(1)));
  Matrix same(4, 4);
  for (int i = 0; i < 4; ++i) same.row(i) = one.row(0);
  const Vector w = view_weights(same, means, {});
  for (int i = 0; i < 4; ++i) CHECK(w[i] == 0.25);
}

TEST_CASE("weights from entropies 0 and ln 2") {
  const Vector h{{0.0, std::log(2.0)}};
  const Vector semantic = weights_from_entropies(h, {});
  CHECK(semantic[0] == Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(semantic[1] == Approx(1.0 / 3.0).epsilon(1e-14));
  WeightingConfig literal;
  literal.entropy_sign = EntropySign::paper_literal;
  const Vector flipped = weights_from_entropies(h, literal);
  CHECK(flipped[0] == Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(flipped[1] == Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("view weights realize the entropy example end to end") {
  // one confident view (h ~ 0) and one equiangular view (h = ln 2)
  const Matrix means = orthogonal_means(2, 2);
  Matrix views(2, 2);
  views << 1.0, 0.0, 1.0, 1.0;
  const Vector w = view_weights(views, means, {});
  const double h0 = entropy(class_posterior(views.row(0).transpose(), means, 100.0));
  CHECK(h0 < 1e-40);
  CHECK(w[0] == Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(w[1] == Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("text weights") {
  Rng rng(3);
  const Matrix means = orthogonal_means(2, 4);
  std::vector<Matrix> single{Matrix(rng.normal_vector(4).transpose()), Matrix(rng.normal_vector(4).transpose())};
  CHECK(text_weights(single, means, {}).isApprox(Matrix::Ones(2, 1)));

  Matrix repeated(3, 4);
  for (int i = 0; i < 3; ++i) repeated.row(i) = Vector{{0.2, 0.9, 0.1, 0.0}}.transpose();
  const Matrix w = text_weights({repeated, repeated}, means, {});
  for (int i = 0; i < 3; ++i) CHECK(w(0, i) == Approx(1.0 / 3.0).epsilon(1e-15));

  // composition oracle: posterior -> entropy -> softmax(-h), by hand
  std::vector<Matrix> feats;
  for (int y = 0; y < 2; ++y) {
    Matrix f(2, 4);
    for (int m = 0; m < 2; ++m) f.row(m) = rng.normal_vector(4).transpose();
    feats.push_back(f);
  }
  Matrix class_means(2, 4);
  for (int y = 0; y < 2; ++y) class_means.row(y) = feats[static_cast<std::size_t>(y)].colwise().mean();
  WeightingConfig cfg;
  cfg.temperature_logit = 7.0;
  cfg.temperature_weight = 0.5;
  const Matrix got = text_weights(feats, class_means, cfg);
  for (int y = 0; y < 2; ++y) {
    double h[2];
    for (int m = 0; m < 2; ++m) {
      const Vector z = feats[static_cast<std::size_t>(y)].row(m).transpose();
      double logits[2], zsum = 0.0;
      for (int k = 0; k < 2; ++k) {
        const Vector mk = class_means.row(k).transpose();
        logits[k] = std::exp(7.0 * z.dot(mk) / (z.norm() * mk.norm()));
        zsum += logits[k];
      }
      h[m] = 0.0;
      for (double l : logits) h[m] -= l / zsum * std::log(l / zsum);
    }
    const double e0 = std::exp(-h[0] / 0.5), e1 = std::exp(-h[1] / 0.5);
    CHECK(got(y, 0) == Approx(e0 / (e0 + e1)).epsilon(1e-12));
    CHECK(got(y, 1) == Approx(e1 / (e0 + e1)).epsilon(1e-12));
  }
}

TEST_CASE("weights are distributions and permutation equivariant") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index k = 2 + trial % 5, n = 1 + trial % 7, d = 8;
    Matrix means(k, d), views(n, d);
    for (Eigen::Index y = 0; y < k; ++y) means.row(y) = rng.normal_vector(d).transpose();
    for (Eigen::Index i = 0; i < n; ++i) views.row(i) = rng.normal_vector(d).transpose();
    WeightingConfig cfg;
    cfg.temperature_logit = 10.0;
    const Vector w = view_weights(views, means, cfg);
    CHECK(w.minCoeff() >= 0.0);
    CHECK(w.sum() == Approx(1.0).margin(1e-6));
    const Matrix reversed = views.colwise().reverse();
    CHECK((view_weights(reversed, means, cfg) - w.reverse()).cwiseAbs().maxCoeff() <= 1e-12);
    const Vector h = view_entropies(views, means, cfg.temperature_logit);
    CHECK(h.maxCoeff() <= std::log(static_cast<double>(k)) + 1e-12);
    CHECK(h.minCoeff() >= 0.0);
  }
}

TEST_CASE("weighting config validation") {
  WeightingConfig cfg;
  cfg.temperature_weight = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.temperature_logit = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("text bank means, unit rows and stacking") {
  Matrix a(2, 3), b(2, 3);
  a << 2, 0, 0, 0, 2, 0;
  b << 0, 0, 1, 0, 1, 1;
  const TextBank bank = make_text_bank({a, b}, {});
  CHECK(bank.num_classes() == 2);
  CHECK(bank.descriptions() == 2);
  CHECK(bank.means.row(0).isApprox(Vector{{1.0, 1.0, 0.0}}.transpose()));
  CHECK(bank.unit_features[0].row(0).norm() == Approx(1.0));
  const Matrix z = stacked_text(bank);
  CHECK(z.row(2) == b.row(0));
  CHECK_THROWS_AS(make_text_bank({a, Matrix(3, 3)}, {}), Error);
}
