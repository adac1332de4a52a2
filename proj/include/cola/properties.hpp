#pragma once

// Executable checks of the projection and margin theory. Each check states its
// hypotheses, generates instances that satisfy them, and asserts only what the
// corresponding derivation guarantees. Everything measured outside those
// hypotheses is reported as statistics, never asserted.

#include <algorithm>
#include <chrono>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cola/assignment.hpp"
#include "cola/classifier.hpp"
#include "cola/distributions.hpp"
#include "cola/random.hpp"
#include "cola/subspace.hpp"
#include "cola/transport.hpp"

namespace cola {

struct SuiteReport {
  std::string suite;
  bool pass = false;
  std::uint64_t trials = 0;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();
  nlohmann::json stats = nlohmann::json::object();
  double seconds = 0.0;
};

inline nlohmann::json to_json(const SuiteReport& r) {
  return {{"suite", r.suite}, {"pass", r.pass},   {"trials", r.trials},  {"seed", r.seed},
          {"params", r.params}, {"stats", r.stats}, {"seconds", r.seconds}};
}

namespace detail {

inline constexpr const char* kPropertyModule = "property_suite";

// Projector whose span is a uniformly random C-dimensional subspace of R^d.
inline SubspaceProjector random_projector(Rng& rng, Eigen::Index d, Eigen::Index c) {
  const Matrix basis = rng.orthonormal_basis(d, c);
  Matrix text(2 * c, d);
  for (Eigen::Index r = 0; r < text.rows(); ++r) text.row(r) = (basis * rng.normal_vector(c)).transpose();
  return build_projector(text, c);
}

inline Vector unit_in_span(Rng& rng, const SubspaceProjector& p) {
  Vector v = p.basis() * rng.normal_vector(p.components());
  return v / v.norm();
}

inline Vector unit_orthogonal(Rng& rng, const SubspaceProjector& p) {
  for (;;) {
    const Vector g = rng.normal_vector(p.dim());
    const Vector o = g - p.project(g);
    const double n = o.norm();
    if (n > 1e-8) return o / n;
  }
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline constexpr std::uint64_t kTrialsPerProjector = 100;

}  // namespace detail

// ---------------------------------------------------------------------------
// Projection identities

inline constexpr double kProjectionTolerance = 1e-6;

inline SuiteReport check_projection_identities(std::uint64_t trials, std::uint64_t seed, Eigen::Index d = 64,
                                               Eigen::Index c = 16) {
  if (c < 1 || c >= d) fail_usage(detail::kPropertyModule, "projection suite needs 1 <= C < d");
  detail::Stopwatch clock;
  double orthonormality = 0.0, idempotency = 0.0, pythagoras = 0.0, dot = 0.0, norm_excess = 0.0;
  std::uint64_t passed = 0;
  std::optional<SubspaceProjector> proj;
  double ortho_block = 0.0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    if (t % detail::kTrialsPerProjector == 0) {
      Rng block_rng(stream_seed(seed, t / detail::kTrialsPerProjector, 0x9a0bULL));
      proj = detail::random_projector(block_rng, d, c);
      const Matrix& b = proj->basis();
      ortho_block = (b.transpose() * b - Matrix::Identity(c, c)).cwiseAbs().maxCoeff();
      orthonormality = std::max(orthonormality, ortho_block);
    }
    Rng rng(stream_seed(seed, t));
    const Vector x = rng.normal_vector(d);
    const Vector px = proj->project(x);
    const double idem = (proj->project(px) - px).cwiseAbs().maxCoeff() / std::max(1.0, x.norm());
    const double pyth = std::abs(x.squaredNorm() - px.squaredNorm() - (x - px).squaredNorm()) / x.squaredNorm();
    const Vector z = detail::unit_in_span(rng, *proj);
    const double dp = std::abs(x.dot(z) - px.dot(z)) / (x.norm() * z.norm());
    const double excess = std::max(0.0, px.norm() - x.norm());
    idempotency = std::max(idempotency, idem);
    pythagoras = std::max(pythagoras, pyth);
    dot = std::max(dot, dp);
    norm_excess = std::max(norm_excess, excess);
    if (ortho_block <= kProjectionTolerance && idem <= kProjectionTolerance && pyth <= kProjectionTolerance &&
        dp <= kProjectionTolerance && excess <= 1e-9) {
      ++passed;
    }
  }
  SuiteReport r;
  r.suite = "projection";
  r.trials = trials;
  r.seed = seed;
  r.params = {{"d", d}, {"C", c}, {"tolerance", kProjectionTolerance}};
  r.stats = {{"passed", passed},
             {"max_orthonormality_error", orthonormality},
             {"max_idempotency_error", idempotency},
             {"max_pythagoras_error", pythagoras},
             {"max_dot_preservation_error", dot},
             {"max_norm_excess", norm_excess}};
  r.pass = passed == trials;
  r.seconds = clock.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// Cosine distortion before and after projection

struct DistortionRecord {
  double delta_raw = 0.0;   // |cos(x1+d1, x2+d2) - cos(x1, x2)|
  double delta_proj = 0.0;  // same with both perturbed features projected
  double parallel_norm = 0.0;
  double orthogonal_norm = 0.0;
  double clean_cosine = 0.0;
  bool hypotheses_met = false;
};

// Small-perturbation regime assumed by the first-order analysis.
inline constexpr double kMaxDistortionScale = 0.05;

// Shared perturbation `delta` applied to both clean features.
inline DistortionRecord measure_distortion(const Vector& x1, const Vector& x2, const Vector& delta,
                                           const SubspaceProjector& proj) {
  DistortionRecord rec;
  const PerturbationSplit split = proj.split(delta);
  rec.parallel_norm = split.parallel.norm();
  rec.orthogonal_norm = split.orthogonal.norm();
  rec.clean_cosine = cosine(x1, x2);
  const Vector a = x1 + delta;
  const Vector b = x2 + delta;
  rec.delta_raw = std::abs(cosine(a, b) - rec.clean_cosine);
  rec.delta_proj = std::abs(cosine(proj.project(a), proj.project(b)) - rec.clean_cosine);
  const bool in_span = (x1 - proj.project(x1)).norm() <= 1e-9 * x1.norm() &&
                       (x2 - proj.project(x2)).norm() <= 1e-9 * x2.norm();
  rec.hypotheses_met = in_span && delta.norm() <= kMaxDistortionScale + 1e-12 && rec.orthogonal_norm > 0.0;
  return rec;
}

struct DistortionParams {
  Eigen::Index d = 32;
  Eigen::Index components = 8;
  double epsilon_scale = 0.01;
  // Unset: delta is isotropic in R^d. Set: |delta_par| / |delta| is fixed.
  std::optional<double> parallel_fraction;
};

inline constexpr double kDistortionPassRate = 0.99;

inline SuiteReport check_distortion(std::uint64_t trials, std::uint64_t seed, const DistortionParams& params = {}) {
  using detail::kPropertyModule;
  if (params.components < 1 || params.components >= params.d) fail_usage(kPropertyModule, "distortion needs 1 <= C < d");
  if (!(params.epsilon_scale > 0.0) || params.epsilon_scale > kMaxDistortionScale) {
    fail_usage(kPropertyModule, "distortion needs 0 < epsilon_scale <= 0.05");
  }
  if (params.parallel_fraction && !(*params.parallel_fraction >= 0.0 && *params.parallel_fraction < 1.0)) {
    fail_usage(kPropertyModule, "parallel_fraction must lie in [0, 1) so delta keeps an orthogonal part");
  }
  detail::Stopwatch clock;
  std::uint64_t passed = 0, ratio_count = 0, within_bound = 0, within_general = 0, hypotheses = 0;
  double ratio_sum = 0.0, bound_sum = 0.0, max_ratio = 0.0;
  std::optional<SubspaceProjector> proj;
  for (std::uint64_t t = 0; t < trials; ++t) {
    if (t % detail::kTrialsPerProjector == 0) {
      Rng block_rng(stream_seed(seed, t / detail::kTrialsPerProjector, 0xd157ULL));
      proj = detail::random_projector(block_rng, params.d, params.components);
    }
    Rng rng(stream_seed(seed, t));
    const Vector x1 = detail::unit_in_span(rng, *proj);
    const Vector x2 = detail::unit_in_span(rng, *proj);
    Vector delta;
    if (params.parallel_fraction) {
      const double f = *params.parallel_fraction;
      delta = params.epsilon_scale * (f * detail::unit_in_span(rng, *proj) +
                                      std::sqrt(1.0 - f * f) * detail::unit_orthogonal(rng, *proj));
    } else {
      delta = params.epsilon_scale * rng.unit_vector(params.d);
    }
    const DistortionRecord rec = measure_distortion(x1, x2, delta, *proj);
    if (rec.hypotheses_met) ++hypotheses;
    if (rec.delta_proj <= rec.delta_raw + 1e-9) ++passed;
    const double bound = rec.parallel_norm / delta.norm();
    bound_sum += bound;
    if (rec.delta_raw > 0.0) {
      const double ratio = rec.delta_proj / rec.delta_raw;
      ratio_sum += ratio;
      max_ratio = std::max(max_ratio, ratio);
      ++ratio_count;
      if (ratio <= bound + 1e-12) ++within_bound;
      if (ratio <= 1.0 / (1.0 + std::abs(rec.clean_cosine))) ++within_general;
    }
  }
  SuiteReport r;
  r.suite = "distortion";
  r.trials = trials;
  r.seed = seed;
  r.params = {{"d", params.d},
              {"C", params.components},
              {"epsilon_scale", params.epsilon_scale},
              {"perturbation", params.parallel_fraction ? "fixed_parallel_fraction" : "isotropic"},
              {"required_pass_fraction", kDistortionPassRate}};
  if (params.parallel_fraction) r.params["parallel_fraction"] = *params.parallel_fraction;
  const double n = static_cast<double>(std::max<std::uint64_t>(trials, 1));
  const double mean_ratio = ratio_count ? ratio_sum / static_cast<double>(ratio_count) : 0.0;
  const double pass_fraction = static_cast<double>(passed) / n;
  r.stats = {{"pass_fraction", pass_fraction},
             {"mean_ratio", mean_ratio},
             {"max_ratio", max_ratio},
             {"mean_parallel_bound", bound_sum / n},
             {"fraction_ratio_within_parallel_bound",
              ratio_count ? static_cast<double>(within_bound) / static_cast<double>(ratio_count) : 0.0},
             {"fraction_ratio_within_general_bound",
              ratio_count ? static_cast<double>(within_general) / static_cast<double>(ratio_count) : 0.0},
             {"hypotheses_met", hypotheses}};
  r.pass = hypotheses == trials && pass_fraction >= kDistortionPassRate && mean_ratio < 1.0;
  r.seconds = clock.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// OT margin before and after projection

struct MarginRecord {
  double gamma_raw = 0.0;   // nearest competitor distance minus true-class distance, raw cost
  double gamma_proj = 0.0;  // same with the projected cost
  bool condition_met = false;
};

// All cosines non-negative and, for every (n, m), the true class is at least
// as similar as every competitor.
inline bool margin_condition(const Matrix& views, const std::vector<Matrix>& class_features, Eigen::Index label) {
  const Matrix v = normalized_rows(views, detail::kPropertyModule);
  std::vector<Matrix> cos;
  for (const auto& f : class_features) cos.push_back(v * normalized_rows(f, detail::kPropertyModule).transpose());
  const Matrix& truth = cos[static_cast<std::size_t>(label)];
  for (std::size_t y = 0; y < cos.size(); ++y) {
    if (cos[y].minCoeff() < 0.0) return false;
    if (static_cast<Eigen::Index>(y) != label && (truth - cos[y]).minCoeff() < 0.0) return false;
  }
  return true;
}

// Margins from exact OT so solver regularization cannot mask a violation.
inline MarginRecord measure_margin(const Matrix& views, const Vector& view_weights,
                                   const std::vector<Matrix>& class_features, const Matrix& text_weights,
                                   Eigen::Index label, const SubspaceProjector& proj) {
  if (class_features.size() < 2) fail_usage(detail::kPropertyModule, "margin needs at least two classes");
  auto margin = [&](const SubspaceProjector* p) {
    Vector d(static_cast<Eigen::Index>(class_features.size()));
    for (std::size_t y = 0; y < class_features.size(); ++y) {
      TransportProblem prob{build_cost(views, class_features[y], p), view_weights,
                            text_weights.row(static_cast<Eigen::Index>(y)).transpose()};
      d[static_cast<Eigen::Index>(y)] = exact_ot(prob).distance;
    }
    double competitor = std::numeric_limits<double>::infinity();
    for (Eigen::Index y = 0; y < d.size(); ++y)
      if (y != label) competitor = std::min(competitor, d[y]);
    return competitor - d[label];
  };
  MarginRecord rec;
  rec.gamma_raw = margin(nullptr);
  rec.gamma_proj = margin(&proj);
  rec.condition_met = margin_condition(views, class_features, label);
  return rec;
}

struct MarginShape {
  Eigen::Index d = 32;
  Eigen::Index components = 8;
  Eigen::Index classes = 3;
  Eigen::Index views = 3;
  Eigen::Index descriptions = 4;
  double class_similarity = 0.5;
  double view_noise = 0.3;        // in-subspace spread of views around the true prototype
  double orthogonal_scale = 0.5;  // per-view |delta_perp| drawn uniformly from [0, scale]
};

inline constexpr double kMarginTolerance = 1e-9;

namespace detail {

struct MarginInstance {
  Matrix views;
  Vector view_weights;
  std::vector<Matrix> class_features;
  Matrix text_weights;
  SubspaceProjector proj;
};

// Text lives in a random C-dimensional subspace U (so U is exactly the span
// the projector recovers); the true class is 0.
inline MarginInstance make_margin_instance(Rng& rng, const MarginShape& s, bool orthogonal_noise) {
  const Matrix basis = rng.orthonormal_basis(s.d, s.components);
  auto in_u = [&](double scale) -> Vector { return scale * (basis * rng.unit_vector(s.components)); };
  const Vector shared = in_u(1.0);
  MarginInstance inst;
  std::vector<Vector> protos;
  for (Eigen::Index y = 0; y < s.classes; ++y) {
    Vector p = std::sqrt(s.class_similarity) * shared + std::sqrt(1.0 - s.class_similarity) * in_u(1.0);
    protos.push_back(p / p.norm());
  }
  Matrix stacked(s.classes * s.descriptions, s.d);
  for (Eigen::Index y = 0; y < s.classes; ++y) {
    Matrix f(s.descriptions, s.d);
    for (Eigen::Index m = 0; m < s.descriptions; ++m) {
      Vector z = protos[static_cast<std::size_t>(y)] + in_u(0.2 * rng.uniform());
      f.row(m) = (z / z.norm()).transpose();
    }
    stacked.middleRows(y * s.descriptions, s.descriptions) = f;
    inst.class_features.push_back(std::move(f));
  }
  inst.proj = build_projector(stacked, s.components);
  inst.views.resize(s.views, s.d);
  for (Eigen::Index n = 0; n < s.views; ++n) {
    Vector x = protos[0] + in_u(s.view_noise * rng.uniform());
    x /= x.norm();
    if (orthogonal_noise) x += s.orthogonal_scale * rng.uniform() * unit_orthogonal(rng, inst.proj);
    inst.views.row(n) = x.transpose();
  }
  Matrix means(s.classes, s.d);
  for (Eigen::Index y = 0; y < s.classes; ++y) means.row(y) = inst.class_features[static_cast<std::size_t>(y)].colwise().mean();
  const WeightingConfig weighting;
  inst.view_weights = view_weights(inst.views, means, weighting);
  inst.text_weights = text_weights(inst.class_features, means, weighting);
  return inst;
}

}  // namespace detail

inline SuiteReport check_margin(std::uint64_t trials, std::uint64_t seed, const MarginShape& shape = {}) {
  using detail::kPropertyModule;
  if (shape.components < 1 || shape.components >= shape.d || shape.classes < 2) {
    fail_usage(kPropertyModule, "margin needs 1 <= C < d and K >= 2");
  }
  detail::Stopwatch clock;
  const std::uint64_t max_attempts = std::max<std::uint64_t>(1000, 500 * trials);
  std::uint64_t met = 0, met_passed = 0, strict = 0, attempts = 0;
  std::uint64_t violators = 0, violators_passed = 0;
  double min_gain = std::numeric_limits<double>::infinity(), gain_sum = 0.0;
  while (met < trials && attempts < max_attempts) {
    Rng rng(stream_seed(seed, attempts++, 0x3a7ULL));
    const auto inst = detail::make_margin_instance(rng, shape, true);
    const MarginRecord rec =
        measure_margin(inst.views, inst.view_weights, inst.class_features, inst.text_weights, 0, inst.proj);
    const double gain = rec.gamma_proj - rec.gamma_raw;
    if (rec.condition_met) {
      ++met;
      if (gain >= -kMarginTolerance) ++met_passed;
      if (gain > kMarginTolerance) ++strict;
      min_gain = std::min(min_gain, gain);
      gain_sum += gain;
    } else {
      ++violators;
      if (gain >= -kMarginTolerance) ++violators_passed;
    }
  }

  // Equality case: no orthogonal component in any view.
  const std::uint64_t equality_trials = std::max<std::uint64_t>(1, trials / 10);
  std::uint64_t equality_passed = 0;
  double equality_max_gap = 0.0;
  for (std::uint64_t t = 0; t < equality_trials; ++t) {
    Rng rng(stream_seed(seed, t, 0xe9ULL));
    const auto inst = detail::make_margin_instance(rng, shape, false);
    const MarginRecord rec =
        measure_margin(inst.views, inst.view_weights, inst.class_features, inst.text_weights, 0, inst.proj);
    const double gap = std::abs(rec.gamma_proj - rec.gamma_raw);
    equality_max_gap = std::max(equality_max_gap, gap);
    if (gap <= kMarginTolerance) ++equality_passed;
  }

  SuiteReport r;
  r.suite = "margin";
  r.trials = trials;
  r.seed = seed;
  r.params = {{"d", shape.d},
              {"C", shape.components},
              {"K", shape.classes},
              {"N", shape.views},
              {"M", shape.descriptions},
              {"class_similarity", shape.class_similarity},
              {"view_noise", shape.view_noise},
              {"orthogonal_scale", shape.orthogonal_scale},
              {"solver", "exact_ot"},
              {"tolerance", kMarginTolerance}};
  r.stats = {{"condition_met_trials", met},
             {"condition_met_passed", met_passed},
             {"strictly_increased", strict},
             {"min_margin_gain", met ? min_gain : 0.0},
             {"mean_margin_gain", met ? gain_sum / static_cast<double>(met) : 0.0},
             {"attempts", attempts},
             {"condition_violating_trials", violators},
             {"condition_violating_still_increased", violators_passed},
             {"equality_trials", equality_trials},
             {"equality_passed", equality_passed},
             {"equality_max_gap", equality_max_gap}};
  r.pass = met == trials && met_passed == met && equality_passed == equality_trials;
  r.seconds = clock.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// Dot-product preservation against in-subspace vectors

inline SuiteReport check_dot_preservation(std::uint64_t trials, std::uint64_t seed, Eigen::Index d = 64,
                                          Eigen::Index c = 16) {
  if (c < 1 || c >= d) fail_usage(detail::kPropertyModule, "dot suite needs 1 <= C < d");
  detail::Stopwatch clock;
  std::uint64_t passed = 0;
  double worst = 0.0;
  std::optional<SubspaceProjector> proj;
  for (std::uint64_t t = 0; t < trials; ++t) {
    if (t % detail::kTrialsPerProjector == 0) {
      Rng block_rng(stream_seed(seed, t / detail::kTrialsPerProjector, 0xd07ULL));
      proj = detail::random_projector(block_rng, d, c);
    }
    Rng rng(stream_seed(seed, t));
    const Vector x = rng.normal_vector(d);
    const Vector z = (0.1 + 2.0 * rng.uniform()) * detail::unit_in_span(rng, *proj);
    const double err = std::abs(x.dot(z) - proj->project(x).dot(z)) / (x.norm() * z.norm());
    worst = std::max(worst, err);
    if (err <= kProjectionTolerance) ++passed;
  }
  SuiteReport r;
  r.suite = "dot";
  r.trials = trials;
  r.seed = seed;
  r.params = {{"d", d}, {"C", c}, {"tolerance", kProjectionTolerance}};
  r.stats = {{"passed", passed}, {"max_relative_error", worst}};
  r.pass = passed == trials;
  r.seconds = clock.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// Entrywise cost dominance

inline SuiteReport check_cost_dominance(std::uint64_t pairs, std::uint64_t seed, Eigen::Index d = 64,
                                        Eigen::Index c = 16) {
  if (c < 1 || c >= d) fail_usage(detail::kPropertyModule, "cost dominance needs 1 <= C < d");
  detail::Stopwatch clock;
  std::uint64_t checked = 0, passed = 0, skipped_negative = 0, equality_checked = 0, equality_passed = 0;
  double worst_excess = -std::numeric_limits<double>::infinity();
  std::optional<SubspaceProjector> proj;
  std::uint64_t attempt = 0;
  while (checked < pairs) {
    if (attempt % detail::kTrialsPerProjector == 0) {
      Rng block_rng(stream_seed(seed, attempt / detail::kTrialsPerProjector, 0xc05ULL));
      proj = detail::random_projector(block_rng, d, c);
    }
    Rng rng(stream_seed(seed, attempt++));
    const Vector z = detail::unit_in_span(rng, *proj);
    const bool clean_view = rng.uniform() < 0.1;
    Vector x = detail::unit_in_span(rng, *proj) + 0.8 * z;
    if (!clean_view) x += 2.0 * rng.uniform() * detail::unit_orthogonal(rng, *proj);
    Matrix view(1, d), desc(1, d);
    view.row(0) = x.transpose();
    desc.row(0) = z.transpose();
    if (cosine(x, z) < 0.0) {
      ++skipped_negative;
      continue;
    }
    const double raw = build_cost(view, desc, nullptr)(0, 0);
    const double projected = build_cost(view, desc, &*proj)(0, 0);
    ++checked;
    worst_excess = std::max(worst_excess, projected - raw);
    if (projected <= raw + kMarginTolerance) ++passed;
    if (clean_view) {
      ++equality_checked;
      if (std::abs(projected - raw) <= kMarginTolerance) ++equality_passed;
    }
  }
  SuiteReport r;
  r.suite = "cost-dominance";
  r.trials = pairs;
  r.seed = seed;
  r.params = {{"d", d}, {"C", c}, {"tolerance", kMarginTolerance}};
  r.stats = {{"pairs_checked", checked},          {"passed", passed},
             {"max_excess", worst_excess},         {"skipped_negative_cosine", skipped_negative},
             {"equality_pairs", equality_checked}, {"equality_passed", equality_passed}};
  r.pass = passed == checked && equality_passed == equality_checked;
  r.seconds = clock.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// Sinkhorn against the exact solver, and the exact solver against assignment

struct OtOracleParams {
  Eigen::Index max_size = 10;
  double cost_max = 2.0;
  double coarse_epsilon = 1e-2;
  double coarse_band = 5e-2;
  double fine_epsilon = 1e-3;
  double fine_band = 1e-2;
  double tolerance = 1e-6;
  int max_iters = 1'000'000;
  std::uint64_t assignment_trials = 100;
  Eigen::Index assignment_size = 4;
};

inline TransportProblem random_transport_problem(Rng& rng, Eigen::Index n, Eigen::Index m, double cost_max) {
  TransportProblem p;
  p.cost.resize(n, m);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < n; ++i) p.cost(i, j) = cost_max * rng.uniform();
  auto marginal = [&](Eigen::Index k) {
    Vector v(k);
    for (Eigen::Index i = 0; i < k; ++i) v[i] = 0.05 + rng.uniform();
    return Vector(v / v.sum());
  };
  p.row_marginal = marginal(n);
  p.col_marginal = marginal(m);
  return p;
}

inline SuiteReport check_ot_oracle(std::uint64_t trials, std::uint64_t seed, const OtOracleParams& params = {}) {
  detail::Stopwatch clock;
  std::uint64_t coarse_ok = 0, fine_ok = 0, sandwich_ok = 0, feasible_ok = 0;
  double coarse_worst = 0.0, fine_worst = 0.0, worst_violation = 0.0;
  long iterations_fine = 0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    Rng rng(stream_seed(seed, t, 0x0701ULL));
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.next() % static_cast<std::uint64_t>(params.max_size));
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng.next() % static_cast<std::uint64_t>(params.max_size));
    const TransportProblem prob = random_transport_problem(rng, n, m, params.cost_max);
    const double exact = exact_ot(prob).distance;
    const auto coarse = sinkhorn(prob, {params.coarse_epsilon, params.max_iters, params.tolerance});
    const auto fine = sinkhorn(prob, {params.fine_epsilon, params.max_iters, params.tolerance});
    iterations_fine += fine.iterations;
    const double ce = std::abs(coarse.distance - exact);
    const double fe = std::abs(fine.distance - exact);
    coarse_worst = std::max(coarse_worst, ce);
    fine_worst = std::max(fine_worst, fe);
    if (ce <= params.coarse_band) ++coarse_ok;
    if (fe <= params.fine_band) ++fine_ok;
    if (coarse.distance >= exact - 1e-9 && fine.distance >= exact - 1e-9) ++sandwich_ok;
    const double violation = std::max(coarse.marginal_violation, fine.marginal_violation);
    worst_violation = std::max(worst_violation, violation);
    if (coarse.converged && fine.converged && violation <= params.tolerance) ++feasible_ok;
  }

  std::uint64_t assignment_ok = 0;
  double assignment_worst = 0.0;
  const Eigen::Index k = params.assignment_size;
  for (std::uint64_t t = 0; t < params.assignment_trials; ++t) {
    Rng rng(stream_seed(seed, t, 0xa55ULL));
    TransportProblem prob = random_transport_problem(rng, k, k, params.cost_max);
    prob.row_marginal = Vector::Constant(k, 1.0 / static_cast<double>(k));
    prob.col_marginal = prob.row_marginal;
    const double gap = std::abs(exact_ot(prob).distance - hungarian(prob.cost).cost / static_cast<double>(k));
    assignment_worst = std::max(assignment_worst, gap);
    if (gap <= 1e-9) ++assignment_ok;
  }

  SuiteReport r;
  r.suite = "ot-oracle";
  r.trials = trials;
  r.seed = seed;
  r.params = {{"max_size", params.max_size},
              {"cost_max", params.cost_max},
              {"coarse_epsilon", params.coarse_epsilon},
              {"coarse_band", params.coarse_band},
              {"fine_epsilon", params.fine_epsilon},
              {"fine_band", params.fine_band},
              {"tolerance", params.tolerance},
              {"max_iters", params.max_iters},
              {"assignment_trials", params.assignment_trials},
              {"assignment_size", k}};
  r.stats = {{"coarse_within_band", coarse_ok},
             {"coarse_max_gap", coarse_worst},
             {"fine_within_band", fine_ok},
             {"fine_max_gap", fine_worst},
             {"sandwich_held", sandwich_ok},
             {"converged_and_feasible", feasible_ok},
             {"max_marginal_violation", worst_violation},
             {"mean_fine_iterations", trials ? static_cast<double>(iterations_fine) / static_cast<double>(trials) : 0.0},
             {"assignment_matches", assignment_ok},
             {"assignment_max_gap", assignment_worst}};
  r.pass = coarse_ok == trials && fine_ok == trials && sandwich_ok == trials && feasible_ok == trials &&
           assignment_ok == params.assignment_trials;
  r.seconds = clock.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// Entropy weights

inline SuiteReport check_weights(std::uint64_t trials, std::uint64_t seed) {
  detail::Stopwatch clock;
  std::uint64_t valid = 0, equivariant = 0, ordered = 0, reversed = 0, bounded = 0, pairs_n2 = 0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    Rng rng(stream_seed(seed, t, 0x3e1ULL));
    const Eigen::Index k = 2 + static_cast<Eigen::Index>(rng.next() % 5);
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.next() % 6);
    const Eigen::Index d = 16;
    Matrix means(k, d), views(n, d);
    for (Eigen::Index y = 0; y < k; ++y) means.row(y) = rng.unit_vector(d).transpose();
    for (Eigen::Index i = 0; i < n; ++i) views.row(i) = rng.normal_vector(d).transpose();
    WeightingConfig sem;
    sem.temperature_logit = 1.0 + 20.0 * rng.uniform();
    WeightingConfig lit = sem;
    lit.entropy_sign = EntropySign::paper_literal;

    const Vector h = view_entropies(views, means, sem.temperature_logit);
    const Vector ws = view_weights(views, means, sem);
    const Vector wl = view_weights(views, means, lit);
    auto is_distribution = [](const Vector& w) {
      return w.minCoeff() >= 0.0 && std::abs(w.sum() - 1.0) <= 1e-6;
    };
    if (is_distribution(ws) && is_distribution(wl)) ++valid;
    if (h.minCoeff() >= 0.0 && h.maxCoeff() <= std::log(static_cast<double>(k)) + 1e-12) ++bounded;

    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.next() % i]);
    Matrix permuted(n, d);
    for (Eigen::Index i = 0; i < n; ++i) permuted.row(i) = views.row(perm[static_cast<std::size_t>(i)]);
    const Vector wp = view_weights(permuted, means, sem);
    bool same = true;
    for (Eigen::Index i = 0; i < n; ++i) same = same && std::abs(wp[i] - ws[perm[static_cast<std::size_t>(i)]]) <= 1e-12;
    if (same) ++equivariant;

    bool order_ok = true, reverse_ok = true;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (h[i] < h[j] - 1e-9) {
          order_ok = order_ok && ws[i] > ws[j];
          reverse_ok = reverse_ok && wl[i] < wl[j];
        }
    if (order_ok) ++ordered;
    if (n == 2) {
      ++pairs_n2;
      if (std::abs(ws[0] - wl[1]) <= 1e-12 && std::abs(ws[1] - wl[0]) <= 1e-12) ++reversed;
    } else if (reverse_ok) {
      ++reversed;
    }
  }
  SuiteReport r;
  r.suite = "weights";
  r.trials = trials;
  r.seed = seed;
  r.stats = {{"valid_distributions", valid}, {"permutation_equivariant", equivariant},
             {"semantic_ordered", ordered},  {"literal_reversed", reversed},
             {"entropy_bounded", bounded},   {"two_view_trials", pairs_n2}};
  r.pass = valid == trials && equivariant == trials && ordered == trials && reversed == trials && bounded == trials;
  r.seconds = clock.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// N = M = 1 reduction of the OT classifier to cosine classification

inline SuiteReport check_reduction(std::uint64_t samples, std::uint64_t seed, Eigen::Index d = 32,
                                   Eigen::Index c = 8) {
  detail::Stopwatch clock;
  std::uint64_t agree_raw = 0, agree_proj = 0, score_ok = 0;
  double worst_score = 0.0;
  std::optional<SubspaceProjector> proj;
  std::optional<TextBank> bank;
  for (std::uint64_t s = 0; s < samples; ++s) {
    if (s % detail::kTrialsPerProjector == 0) {
      Rng block_rng(stream_seed(seed, s / detail::kTrialsPerProjector, 0x4edULL));
      const Eigen::Index k = 2 + static_cast<Eigen::Index>(block_rng.next() % 9);
      std::vector<Matrix> features;
      Matrix stacked(k, d);
      for (Eigen::Index y = 0; y < k; ++y) {
        features.push_back(block_rng.unit_vector(d).transpose());
        stacked.row(y) = features.back();
      }
      bank = make_text_bank(std::move(features), WeightingConfig{});
      proj = build_projector(stacked, std::min(c, k));
    }
    Rng rng(stream_seed(seed, s, 0x4eeULL));
    ViewSet vs{Matrix(rng.normal_vector(d).transpose()), Vector::Ones(1)};
    ClassifierConfig cfg;
    const Prediction ot_raw = ot_classify(vs, *bank, nullptr, cfg);
    const Prediction cos_raw = cosine_classify(vs.features.row(0).transpose(), *bank);
    const Prediction ot_proj = ot_classify(vs, *bank, &*proj, cfg);
    const Prediction cos_proj = cosine_classify(proj->project(vs.features.row(0).transpose()), *bank);
    if (ot_raw.label == cos_raw.label) ++agree_raw;
    if (ot_proj.label == cos_proj.label) ++agree_proj;
    const double gap = (ot_raw.per_class_scores - (1.0 + cos_raw.per_class_scores.array()).matrix()).cwiseAbs().maxCoeff();
    worst_score = std::max(worst_score, gap);
    if (gap <= 1e-9) ++score_ok;
  }
  SuiteReport r;
  r.suite = "reduction";
  r.trials = samples;
  r.seed = seed;
  r.params = {{"d", d}, {"C", c}};
  r.stats = {{"agree_raw", agree_raw},
             {"agree_projected", agree_proj},
             {"scores_match", score_ok},
             {"max_score_gap", worst_score}};
  r.pass = agree_raw == samples && agree_proj == samples && score_ok == samples;
  r.seconds = clock.seconds();
  return r;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"projection", "distortion", "margin",    "dot",
                                              "ot-oracle",  "weights",    "cost-dominance", "reduction"};
  return names;
}

inline SuiteReport run_suite(const std::string& name, std::uint64_t trials, std::uint64_t seed) {
  if (name == "projection") return check_projection_identities(trials, seed);
  if (name == "distortion") return check_distortion(trials, seed);
  if (name == "margin") return check_margin(trials, seed);
  if (name == "dot") return check_dot_preservation(trials, seed);
  if (name == "ot-oracle") return check_ot_oracle(trials, seed);
  if (name == "weights") return check_weights(trials, seed);
  if (name == "cost-dominance") return check_cost_dominance(trials, seed);
  if (name == "reduction") return check_reduction(trials, seed);
  fail_usage(detail::kPropertyModule, "unknown suite '" + name + "'");
}

}  // namespace cola
