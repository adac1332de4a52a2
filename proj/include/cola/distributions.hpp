#pragma once

#include <string>
#include <vector>

#include "cola/bundle_io.hpp"
#include "cola/common.hpp"

namespace cola {

enum class EntropySign {
  paper_literal,  // a ∝ exp(+h): high-entropy views weigh more
  semantic,       // a ∝ exp(-h): confident views weigh more
};

inline const char* to_string(EntropySign s) { return s == EntropySign::semantic ? "semantic" : "paper_literal"; }

struct WeightingConfig {
  double temperature_logit = 100.0;
  EntropySign entropy_sign = EntropySign::semantic;
  double temperature_weight = 1.0;

  void validate() const {
    if (!(temperature_logit > 0.0) || !(temperature_weight > 0.0)) {
      fail_usage("distributions", "temperatures must be positive");
    }
  }
};

// Row i of `features` normalized to unit length.
inline Matrix normalized_rows(const Matrix& features, const char* module = "distributions") {
  Matrix out = features;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n <= kMinNorm) fail_numerical(module, "zero-norm row " + std::to_string(i));
    out.row(i) /= n;
  }
  return out;
}

// softmax_y(temperature * cos(x, mean_y))
inline Vector class_posterior(const Vector& x, const Matrix& means, double temperature_logit) {
  if (!x.allFinite()) fail_data("distributions", "class_posterior: non-finite input");
  const double nx = x.norm();
  if (nx <= kMinNorm) fail_numerical("distributions", "class_posterior: zero-norm feature");
  Vector cos = means * x;
  for (Eigen::Index y = 0; y < means.rows(); ++y) {
    const double ny = means.row(y).norm();
    if (ny <= kMinNorm) fail_numerical("distributions", "class_posterior: zero-norm class mean " + std::to_string(y));
    cos[y] /= nx * ny;
  }
  return softmax(cos, temperature_logit);
}

// Natural-log Shannon entropy with 0 log 0 = 0.
inline double entropy(const Vector& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0) fail_data("distributions", "entropy: negative probability at index " + std::to_string(i));
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  }
  return std::max(h, 0.0);
}

inline Vector view_entropies(const Matrix& views, const Matrix& means, double temperature_logit) {
  Vector h(views.rows());
  for (Eigen::Index n = 0; n < views.rows(); ++n) {
    h[n] = entropy(class_posterior(views.row(n).transpose(), means, temperature_logit));
  }
  return h;
}

// Softmax over signed entropies; `semantic` favours low-entropy rows.
inline Vector weights_from_entropies(const Vector& h, const WeightingConfig& cfg) {
  const double sign = cfg.entropy_sign == EntropySign::semantic ? -1.0 : 1.0;
  return softmax(h, sign / cfg.temperature_weight);
}

inline Vector view_weights(const Matrix& views, const Matrix& means, const WeightingConfig& cfg) {
  cfg.validate();
  if (views.rows() < 1) fail_usage("distributions", "view_weights: need at least one view");
  return weights_from_entropies(view_entropies(views, means, cfg.temperature_logit), cfg);
}

// Per-class description weights. Each description's posterior ranges over all
// K class means.
inline Matrix text_weights(const std::vector<Matrix>& class_features, const Matrix& means,
                           const WeightingConfig& cfg) {
  cfg.validate();
  if (class_features.empty()) return Matrix(0, 0);
  Matrix w(static_cast<Eigen::Index>(class_features.size()), class_features.front().rows());
  for (std::size_t y = 0; y < class_features.size(); ++y) {
    w.row(static_cast<Eigen::Index>(y)) = view_weights(class_features[y], means, cfg).transpose();
  }
  return w;
}

// K classes x M descriptions with per-class means and description weights.
struct TextBank {
  std::vector<Matrix> features;       // K entries, each M x d
  std::vector<Matrix> unit_features;  // rows of `features` scaled to unit norm
  Matrix means;                       // K x d
  Matrix weights;                     // K x M

  Eigen::Index num_classes() const { return means.rows(); }
  Eigen::Index descriptions() const { return weights.cols(); }
  Eigen::Index dim() const { return means.cols(); }
};

inline TextBank make_text_bank(std::vector<Matrix> features, const WeightingConfig& cfg) {
  if (features.empty()) fail_usage("distributions", "text bank needs at least one class");
  TextBank bank;
  const Eigen::Index m = features.front().rows();
  const Eigen::Index d = features.front().cols();
  bank.means.resize(static_cast<Eigen::Index>(features.size()), d);
  for (std::size_t y = 0; y < features.size(); ++y) {
    if (features[y].rows() != m || features[y].cols() != d || m < 1) {
      fail_usage("distributions", "text bank classes must share M >= 1 and d");
    }
    bank.means.row(static_cast<Eigen::Index>(y)) = features[y].colwise().mean();
  }
  bank.weights = text_weights(features, bank.means, cfg);
  bank.unit_features.reserve(features.size());
  for (const auto& f : features) bank.unit_features.push_back(normalized_rows(f));
  bank.features = std::move(features);
  return bank;
}

// Unit-bundle rows are renormalized in double precision here.
inline TextBank make_text_bank(const EmbeddingBundle& bundle, const WeightingConfig& cfg) {
  const auto& m = bundle.manifest;
  std::vector<Matrix> features;
  features.reserve(m.num_classes);
  for (std::uint32_t y = 0; y < m.num_classes; ++y) {
    Matrix f = bundle.text_features.middleRows(bundle.text_row(y, 0), m.descriptions_per_class).cast<double>();
    if (m.normalization == Normalization::unit) f = normalized_rows(f);
    features.push_back(std::move(f));
  }
  return make_text_bank(std::move(features), cfg);
}

// All K*M text features stacked class-major, as used for the subspace.
inline Matrix stacked_text(const TextBank& bank) {
  Matrix z(bank.num_classes() * bank.descriptions(), bank.dim());
  for (Eigen::Index y = 0; y < bank.num_classes(); ++y) {
    z.middleRows(y * bank.descriptions(), bank.descriptions()) = bank.features[static_cast<std::size_t>(y)];
  }
  return z;
}

struct ViewSet {
  Matrix features;  // N x d
  Vector weights;   // N
};

}  // namespace cola
