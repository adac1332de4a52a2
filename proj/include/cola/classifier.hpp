#pragma once

#include <chrono>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cola/bundle_io.hpp"
#include "cola/distributions.hpp"
#include "cola/parallel.hpp"
#include "cola/subspace.hpp"
#include "cola/transport.hpp"

namespace cola {

enum class Method { cosine, mean_text, ot_raw, ot_projected };

inline constexpr Method kAllMethods[] = {Method::cosine, Method::mean_text, Method::ot_raw, Method::ot_projected};

inline const char* to_string(Method m) {
  switch (m) {
    case Method::cosine: return "cosine";
    case Method::mean_text: return "mean_text";
    case Method::ot_raw: return "ot_raw";
    case Method::ot_projected: return "ot_projected";
  }
  return "unknown";
}

inline Method parse_method(const std::string& s) {
  for (Method m : kAllMethods)
    if (s == to_string(m)) return m;
  fail_usage("cola_classifier", "unknown method '" + s + "'");
}

struct ClassifierConfig {
  Method method = Method::ot_projected;
  Eigen::Index components = 256;
  WeightingConfig weighting;
  SinkhornParams ot;
};

struct Prediction {
  Eigen::Index label = 0;
  Vector per_class_scores;  // lower is better
  double margin = 0.0;      // runner-up minus best, 0 when K = 1
};

// Argmin with lowest-index tie-break.
inline Prediction predict_from_scores(Vector scores) {
  Prediction p;
  for (Eigen::Index y = 1; y < scores.size(); ++y)
    if (scores[y] < scores[p.label]) p.label = y;
  double runner_up = std::numeric_limits<double>::infinity();
  for (Eigen::Index y = 0; y < scores.size(); ++y)
    if (y != p.label) runner_up = std::min(runner_up, scores[y]);
  p.margin = std::isfinite(runner_up) ? runner_up - scores[p.label] : 0.0;
  p.per_class_scores = std::move(scores);
  return p;
}

// Scores are -cos(x, mean_y); with M = 1 the mean is the single description.
inline Prediction cosine_classify(const Vector& x, const TextBank& bank) {
  if (x.size() != bank.dim()) fail_usage("cola_classifier", "feature dimension mismatch");
  const double nx = x.norm();
  if (nx <= kMinNorm) fail_numerical("cola_classifier", "zero-norm input feature");
  Vector scores(bank.num_classes());
  for (Eigen::Index y = 0; y < bank.num_classes(); ++y) scores[y] = -cosine(x, bank.means.row(y).transpose());
  return predict_from_scores(std::move(scores));
}

namespace detail {

// Unit rows of `views`, projected first when a projector is given.
inline Matrix unit_views(const Matrix& views, const SubspaceProjector* projector) {
  Matrix v = projector ? projector->project_rows(views) : views;
  for (Eigen::Index n = 0; n < v.rows(); ++n) {
    const double norm = v.row(n).norm();
    if (norm < kMinNorm) {
      fail_numerical("cola_classifier", std::string(projector ? "projected " : "") + "view " + std::to_string(n) +
                                            " has near-zero norm; cosine undefined");
    }
    v.row(n) /= norm;
  }
  return v;
}

inline Matrix cost_from_unit(const Matrix& unit_views, const Matrix& unit_text) {
  return (1.0 - (unit_views * unit_text.transpose()).array()).cwiseMax(0.0).cwiseMin(2.0).matrix();
}

}  // namespace detail

// C(n, m) = 1 - cos(P(view_n), z_m), with P the projection or the identity.
inline Matrix build_cost(const Matrix& views, const Matrix& class_features, const SubspaceProjector* projector) {
  if (views.cols() != class_features.cols()) fail_usage("cola_classifier", "build_cost: dimension mismatch");
  return detail::cost_from_unit(detail::unit_views(views, projector),
                                normalized_rows(class_features, "cola_classifier"));
}

namespace detail {

inline Prediction ot_classify_unit(const Matrix& unit_views, const Vector& view_weights, const TextBank& bank,
                                   const SinkhornParams& params) {
  Vector scores(bank.num_classes());
  TransportProblem problem;
  problem.row_marginal = view_weights;
  for (Eigen::Index y = 0; y < bank.num_classes(); ++y) {
    const auto yi = static_cast<std::size_t>(y);
    problem.cost = cost_from_unit(unit_views, bank.unit_features[yi]);
    problem.col_marginal = bank.weights.row(y).transpose();
    try {
      scores[y] = sinkhorn(problem, params).distance;
    } catch (const Error& e) {
      throw Error(e.kind(), "cola_classifier", "class " + std::to_string(y) + ": " + e.what());
    }
  }
  return predict_from_scores(std::move(scores));
}

}  // namespace detail

// argmin_y d_OT(P, Q_y) over per-class transport problems.
inline Prediction ot_classify(const ViewSet& views, const TextBank& bank, const SubspaceProjector* projector,
                              const ClassifierConfig& cfg) {
  if (views.features.rows() != views.weights.size()) fail_usage("cola_classifier", "view weights size mismatch");
  if (views.features.cols() != bank.dim()) fail_usage("cola_classifier", "feature dimension mismatch");
  return detail::ot_classify_unit(detail::unit_views(views.features, projector), views.weights, bank, cfg.ot);
}

// Builds the view distribution the given method sees: weights come from the
// same (projected or raw) features that enter the cost.
inline ViewSet make_view_set(const Matrix& views, const TextBank& bank, const SubspaceProjector* projector,
                             const WeightingConfig& weighting) {
  ViewSet vs;
  vs.features = projector ? projector->project_rows(views) : views;
  vs.weights = view_weights(vs.features, bank.means, weighting);
  return vs;
}

// Single prediction for one sample's N views under `method`.
inline Prediction classify_sample(const Matrix& views, const TextBank& bank, const SubspaceProjector* projector,
                                  const ClassifierConfig& cfg) {
  switch (cfg.method) {
    case Method::cosine:
      return cosine_classify(views.row(0).transpose(), bank);
    case Method::mean_text: {
      const Vector w = view_weights(views, bank.means, cfg.weighting);
      const Vector pooled = detail::unit_views(views, nullptr).transpose() * w;
      return cosine_classify(pooled, bank);
    }
    case Method::ot_raw: {
      const ViewSet vs = make_view_set(views, bank, nullptr, cfg.weighting);
      return detail::ot_classify_unit(detail::unit_views(vs.features, nullptr), vs.weights, bank, cfg.ot);
    }
    case Method::ot_projected: {
      if (!projector) fail_usage("cola_classifier", "ot_projected requires a projector");
      const ViewSet vs = make_view_set(views, bank, projector, cfg.weighting);
      return detail::ot_classify_unit(detail::unit_views(vs.features, nullptr), vs.weights, bank, cfg.ot);
    }
  }
  fail_usage("cola_classifier", "unknown method");
}

struct MethodResult {
  Method method = Method::cosine;
  double accuracy = 0.0;
  double mean_margin = 0.0;
  double mean_distance = 0.0;  // mean over samples of the mean per-class score
  double seconds = 0.0;
  std::size_t samples = 0;
  std::vector<Eigen::Index> predictions;
};

struct EvaluationReport {
  std::vector<MethodResult> methods;

  const MethodResult& at(Method m) const {
    for (const auto& r : methods)
      if (r.method == m) return r;
    fail_usage("cola_classifier", std::string("method not evaluated: ") + to_string(m));
  }
};

inline Matrix bundle_sample_views(const EmbeddingBundle& bundle, std::uint32_t s) {
  Matrix v = bundle.sample_views(s);
  if (bundle.manifest.normalization == Normalization::unit) v = normalized_rows(v, "cola_classifier");
  return v;
}

inline EvaluationReport evaluate(const EmbeddingBundle& bundle, const TextBank& bank,
                                 const std::vector<Method>& methods, const ClassifierConfig& cfg,
                                 const SubspaceProjector* projector, unsigned threads = 1) {
  if (bank.num_classes() != static_cast<Eigen::Index>(bundle.manifest.num_classes) ||
      bank.dim() != static_cast<Eigen::Index>(bundle.manifest.dim)) {
    fail_usage("cola_classifier", "text bank does not match bundle");
  }
  for (Method m : methods) {
    if (m == Method::ot_projected && !projector) fail_usage("cola_classifier", "ot_projected requires a projector");
  }
  EvaluationReport report;
  const std::size_t samples = bundle.manifest.num_samples;
  for (Method m : methods) {
    ClassifierConfig mc = cfg;
    mc.method = m;
    std::vector<Prediction> preds(samples);
    const auto start = std::chrono::steady_clock::now();
    parallel_for(samples, threads, [&](std::size_t s) {
      preds[s] = classify_sample(bundle_sample_views(bundle, static_cast<std::uint32_t>(s)), bank, projector, mc);
    });
    const auto stop = std::chrono::steady_clock::now();

    MethodResult r;
    r.method = m;
    r.samples = samples;
    r.seconds = std::chrono::duration<double>(stop - start).count();
    std::size_t correct = 0;
    double margin = 0.0, distance = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      r.predictions.push_back(preds[s].label);
      if (preds[s].label == static_cast<Eigen::Index>(bundle.labels[s])) ++correct;
      margin += preds[s].margin;
      distance += preds[s].per_class_scores.mean();
    }
    if (samples > 0) {
      r.accuracy = static_cast<double>(correct) / static_cast<double>(samples);
      r.mean_margin = margin / static_cast<double>(samples);
      r.mean_distance = distance / static_cast<double>(samples);
    }
    report.methods.push_back(std::move(r));
  }
  return report;
}

inline nlohmann::json to_json(const WeightingConfig& w) {
  return {{"temperature_logit", w.temperature_logit},
          {"entropy_sign", to_string(w.entropy_sign)},
          {"temperature_weight", w.temperature_weight}};
}

inline nlohmann::json to_json(const SinkhornParams& p) {
  return {{"epsilon", p.epsilon}, {"max_iters", p.max_iters}, {"tolerance", p.tolerance}};
}

inline nlohmann::json to_json(const MethodResult& r) {
  return {{"method", to_string(r.method)}, {"accuracy", r.accuracy},   {"mean_margin", r.mean_margin},
          {"mean_distance", r.mean_distance}, {"samples", r.samples}, {"seconds", r.seconds}};
}

inline nlohmann::json to_json(const EvaluationReport& report) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& r : report.methods) methods.push_back(to_json(r));
  return {{"methods", methods}};
}

// Clean and attacked evaluations of the same methods side by side.
struct BenchmarkReport {
  EvaluationReport clean;
  std::optional<EvaluationReport> robust;
  nlohmann::json config = nlohmann::json::object();
};

inline nlohmann::json to_json(const BenchmarkReport& b) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : b.clean.methods) {
    nlohmann::json row = {{"method", to_string(c.method)},
                          {"clean_accuracy", c.accuracy},
                          {"clean_mean_margin", c.mean_margin},
                          {"clean_mean_distance", c.mean_distance},
                          {"samples", c.samples},
                          {"clean_seconds", c.seconds}};
    if (b.robust) {
      const auto& r = b.robust->at(c.method);
      row["robust_accuracy"] = r.accuracy;
      row["robust_mean_margin"] = r.mean_margin;
      row["robust_mean_distance"] = r.mean_distance;
      row["robust_seconds"] = r.seconds;
    }
    rows.push_back(row);
  }
  return {{"config", b.config}, {"results", rows}};
}

// CSV columns: method, clean_accuracy, robust_accuracy, mean_margin, samples,
// seconds. mean_margin and robust_accuracy refer to the attacked set when one
// exists (robust_accuracy is empty otherwise); seconds covers both passes.
inline std::string to_csv(const BenchmarkReport& b) {
  std::ostringstream out;
  out.precision(10);
  out << "method,clean_accuracy,robust_accuracy,mean_margin,samples,seconds\n";
  for (const auto& c : b.clean.methods) {
    out << to_string(c.method) << ',' << c.accuracy << ',';
    double margin = c.mean_margin;
    double seconds = c.seconds;
    if (b.robust) {
      const auto& r = b.robust->at(c.method);
      out << r.accuracy;
      margin = r.mean_margin;
      seconds += r.seconds;
    }
    out << ',' << margin << ',' << c.samples << ',' << seconds << '\n';
  }
  return out.str();
}

}  // namespace cola
