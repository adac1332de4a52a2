#pragma once

// Embedding-space attacks. PGD ascends the cross-entropy of the
// temperature-scaled cosine classifier; structured noise injects perturbations
// with prescribed norms inside and outside the text subspace.

#include <limits>
#include <optional>
#include <string>

#include <json.hpp>

#include "cola/bundle_io.hpp"
#include "cola/distributions.hpp"
#include "cola/parallel.hpp"
#include "cola/random.hpp"
#include "cola/subspace.hpp"

namespace cola {

enum class AttackNorm { l_inf, l2 };
enum class AttackMode { pgd_cosine, structured };

inline const char* to_string(AttackNorm n) { return n == AttackNorm::l_inf ? "l_inf" : "l2"; }
inline const char* to_string(AttackMode m) { return m == AttackMode::pgd_cosine ? "pgd_cosine" : "structured"; }

// Feature-space budget on unit-norm embeddings (see docs/calibration.md).
inline constexpr double kDefaultAttackBudget = 0.05;

struct AttackConfig {
  double budget = kDefaultAttackBudget;
  int steps = 10;
  double step_size = 2.5 * kDefaultAttackBudget / 10;
  AttackNorm norm = AttackNorm::l_inf;
  AttackMode mode = AttackMode::pgd_cosine;
  double temperature = 100.0;  // logit scale of the attacked posterior

  void validate() const {
    if (!(budget > 0.0)) fail_usage("attack_sim", "budget must be positive");
    if (steps < 1) fail_usage("attack_sim", "steps must be >= 1");
    if (!(step_size > 0.0)) fail_usage("attack_sim", "step_size must be positive");
    if (!(temperature > 0.0)) fail_usage("attack_sim", "temperature must be positive");
  }
};

// Standard schedule: 2.5 * budget / steps.
inline AttackConfig make_pgd_config(double budget, int steps = 10, AttackNorm norm = AttackNorm::l_inf) {
  AttackConfig cfg;
  cfg.budget = budget;
  cfg.steps = steps;
  cfg.step_size = 2.5 * budget / steps;
  cfg.norm = norm;
  return cfg;
}

struct StructuredNoiseSpec {
  double parallel_scale = 0.0;
  double orthogonal_scale = 0.0;
};

struct LossAndGradient {
  double loss = 0.0;
  Vector gradient;
};

// L(x) = -log softmax(T cos(x, mean_y))_label and its gradient in x.
inline LossAndGradient cosine_cross_entropy(const Vector& x, Eigen::Index label, const Matrix& means,
                                            double temperature) {
  const Eigen::Index k = means.rows();
  if (label < 0 || label >= k) fail_usage("attack_sim", "label " + std::to_string(label) + " out of range");
  const double nx = x.norm();
  if (nx <= kMinNorm) fail_numerical("attack_sim", "zero-norm feature");
  const Vector u = x / nx;
  const Matrix unit_means = normalized_rows(means, "attack_sim");
  const Vector cos = unit_means * u;
  const Vector logits = temperature * cos;
  const Vector p = softmax(logits);

  LossAndGradient out;
  // log(1 + sum_{y != label} exp(l_y - l_label)); the log1p branch keeps
  // confident losses (~1e-40 at T = 100) from rounding to zero
  const Vector shifted = logits.array() - logits[label];
  double others_max = -std::numeric_limits<double>::infinity();
  for (Eigen::Index y = 0; y < k; ++y)
    if (y != label) others_max = std::max(others_max, shifted[y]);
  if (k == 1) {
    out.loss = 0.0;
  } else if (others_max < 0.0) {
    double tail = 0.0;
    for (Eigen::Index y = 0; y < k; ++y)
      if (y != label) tail += std::exp(shifted[y]);
    out.loss = std::log1p(tail);
  } else {
    out.loss = log_sum_exp(shifted);
  }
  // d cos_y / dx = (mhat_y - cos_y u) / |x|
  Vector coeff = p;
  coeff[label] -= 1.0;
  out.gradient = temperature / nx * (unit_means.transpose() * coeff - coeff.dot(cos) * u);
  return out;
}

namespace detail {

inline void clip_to_ball(Vector& delta, const AttackConfig& cfg) {
  if (cfg.norm == AttackNorm::l_inf) {
    delta = delta.cwiseMax(-cfg.budget).cwiseMin(cfg.budget);
  } else {
    const double n = delta.norm();
    if (n > cfg.budget) delta *= cfg.budget / n;
  }
}

}  // namespace detail

// PGD from delta = 0. Returns the highest-loss iterate seen, so the returned
// point never has lower loss than x itself.
inline Vector pgd_embedding(const Vector& x, Eigen::Index label, const Matrix& means, const AttackConfig& cfg) {
  cfg.validate();
  Vector delta = Vector::Zero(x.size());
  Vector best = x;
  double best_loss = cosine_cross_entropy(x, label, means, cfg.temperature).loss;
  for (int step = 0; step < cfg.steps; ++step) {
    const Vector g = cosine_cross_entropy(x + delta, label, means, cfg.temperature).gradient;
    if (cfg.norm == AttackNorm::l_inf) {
      delta += cfg.step_size * g.unaryExpr([](double v) { return static_cast<double>((v > 0) - (v < 0)); });
    } else {
      const double gn = g.norm();
      if (gn > 0.0) delta += cfg.step_size / gn * g;
    }
    detail::clip_to_ball(delta, cfg);
    const Vector candidate = x + delta;
    const double loss = cosine_cross_entropy(candidate, label, means, cfg.temperature).loss;
    if (loss > best_loss) {
      best_loss = loss;
      best = candidate;
    }
  }
  return best;
}

inline Vector pgd_embedding(const Vector& x, Eigen::Index label, const TextBank& bank, const AttackConfig& cfg) {
  return pgd_embedding(x, label, bank.means, cfg);
}

// x + delta with |delta_par| = parallel_scale and |delta_perp| = orthogonal_scale.
inline Vector structured_perturb(const Vector& x, const SubspaceProjector& projector, const StructuredNoiseSpec& spec,
                                 std::uint64_t seed) {
  if (x.size() != projector.dim()) fail_usage("attack_sim", "dimension mismatch");
  if (spec.parallel_scale < 0.0 || spec.orthogonal_scale < 0.0) fail_usage("attack_sim", "scales must be >= 0");
  if (spec.orthogonal_scale > 0.0 && projector.components() >= projector.dim()) {
    fail_usage("attack_sim", "orthogonal noise needs C < d");
  }
  Rng rng(seed);
  Vector out = x;
  auto draw = [&](bool parallel, double scale) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const Vector g = rng.normal_vector(x.size());
      const Vector p = projector.project(g);
      const Vector dir = parallel ? p : Vector(g - p);
      const double n = dir.norm();
      if (n > 1e-8) return Vector(scale / n * dir);
    }
    fail_numerical("attack_sim", "could not draw a non-degenerate direction");
  };
  if (spec.parallel_scale > 0.0) out += draw(true, spec.parallel_scale);
  if (spec.orthogonal_scale > 0.0) out += draw(false, spec.orthogonal_scale);
  return out;
}

// New bundle whose views are attacked independently; labels and text are
// unchanged. Per-view PRNG streams are derived from (seed, sample, view).
inline EmbeddingBundle attack_bundle(const EmbeddingBundle& bundle, const AttackConfig& cfg, const TextBank& bank,
                                     const SubspaceProjector* projector,
                                     const std::optional<StructuredNoiseSpec>& spec, std::uint64_t seed,
                                     unsigned threads = 1) {
  if (cfg.mode == AttackMode::pgd_cosine) cfg.validate();
  if (cfg.mode == AttackMode::structured && (!projector || !spec)) {
    fail_usage("attack_sim", "structured attack needs a projector and a noise spec");
  }
  if (bank.dim() != static_cast<Eigen::Index>(bundle.manifest.dim)) {
    fail_usage("attack_sim", "text bank does not match bundle");
  }
  EmbeddingBundle out = bundle;
  const auto& m = bundle.manifest;
  const bool unit = m.normalization == Normalization::unit;
  parallel_for(m.num_samples, threads, [&](std::size_t s) {
    const auto sample = static_cast<std::uint32_t>(s);
    for (std::uint32_t n = 0; n < m.views_per_sample; ++n) {
      const Eigen::Index row = bundle.view_row(sample, n);
      Vector x = bundle.image_views.row(row).cast<double>().transpose();
      if (unit) x /= x.norm();
      const Vector attacked = cfg.mode == AttackMode::pgd_cosine
                                  ? pgd_embedding(x, bundle.labels[s], bank.means, cfg)
                                  : structured_perturb(x, *projector, *spec, stream_seed(seed, s, n));
      out.image_views.row(row) = attacked.transpose().cast<float>();
    }
  });

  out.manifest.normalization = Normalization::raw;
  nlohmann::json attack = {{"mode", to_string(cfg.mode)}, {"seed", seed}};
  if (cfg.mode == AttackMode::pgd_cosine) {
    attack["budget"] = cfg.budget;
    attack["steps"] = cfg.steps;
    attack["step_size"] = cfg.step_size;
    attack["norm"] = to_string(cfg.norm);
    attack["temperature"] = cfg.temperature;
  } else {
    attack["parallel_scale"] = spec->parallel_scale;
    attack["orthogonal_scale"] = spec->orthogonal_scale;
    attack["components"] = projector->components();
  }
  out.manifest.metadata["attack"] = attack;
  return out;
}

}  // namespace cola
