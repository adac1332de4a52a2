#include <catch_amalgamated.hpp>

#include "cola/properties.hpp"

using namespace cola;
using Catch::Approx;

namespace {

SubspaceProjector coordinate_projector(Eigen::Index d, Eigen::Index c) {
  return SubspaceProjector(Matrix::Identity(d, c), Vector::Ones(c));
}

nlohmann::json without_timing(SuiteReport r) {
  r.seconds = 0.0;
  return to_json(r);
}

}  // namespace

TEST_CASE("distortion without orthogonal perturbation is unchanged by projection") {
  const auto p = coordinate_projector(6, 3);
  const Vector x1{{1.0, 0.0, 0.0, 0.0, 0.0, 0.0}};
  const Vector x2{{0.6, 0.8, 0.0, 0.0, 0.0, 0.0}};
  const Vector inside{{0.0, 0.004, 0.003, 0.0, 0.0, 0.0}};
  const auto rec = measure_distortion(x1, x2, inside, p);
  CHECK(rec.delta_proj == Approx(rec.delta_raw).margin(1e-15));
  CHECK(rec.orthogonal_norm == 0.0);
  CHECK_FALSE(rec.hypotheses_met);

  const auto zero = measure_distortion(x1, x2, Vector::Zero(6), p);
  CHECK(zero.delta_raw == 0.0);
  CHECK(zero.delta_proj == 0.0);
}

TEST_CASE("distortion record fields") {
  const auto p = coordinate_projector(4, 2);
  const Vector x1{{1.0, 0.0, 0.0, 0.0}};
  const Vector x2{{0.0, 1.0, 0.0, 0.0}};
  const Vector delta{{0.006, 0.0, 0.008, 0.0}};
  const auto rec = measure_distortion(x1, x2, delta, p);
  CHECK(rec.parallel_norm == Approx(0.006));
  CHECK(rec.orthogonal_norm == Approx(0.008));
  CHECK(rec.clean_cosine == Approx(0.0).margin(1e-15));
  CHECK(rec.hypotheses_met);
  const double raw = std::abs(cosine(x1 + delta, x2 + delta));
  CHECK(rec.delta_raw == Approx(raw).epsilon(1e-12));
}

TEST_CASE("distortion suite preconditions") {
  CHECK_THROWS_AS(check_distortion(10, 1, {8, 8, 0.01, std::nullopt}), Error);
  CHECK_THROWS_AS(check_distortion(10, 1, {32, 8, 0.06, std::nullopt}), Error);
  CHECK_THROWS_AS(check_distortion(10, 1, {32, 8, 0.01, 1.0}), Error);
}

TEST_CASE("purely orthogonal shared perturbations never increase distortion") {
  const auto r = check_distortion(500, 3, {32, 8, 0.01, 0.0});
  CHECK(r.stats.at("pass_fraction") == 1.0);
  CHECK(r.stats.at("hypotheses_met") == 500);
}

TEST_CASE("margin strictly grows for one view against orthogonal prototypes") {
  const auto p = coordinate_projector(3, 2);
  Matrix view(1, 3);
  view << 1.0, 0.2, 0.5;
  std::vector<Matrix> classes{Matrix(Vector{{1.0, 0.0, 0.0}}.transpose()), Matrix(Vector{{0.0, 1.0, 0.0}}.transpose())};
  const auto rec = measure_margin(view, Vector::Ones(1), classes, Matrix::Ones(2, 1), 0, p);
  const double norm = std::sqrt(1.0 + 0.04 + 0.25);
  const double projected_norm = std::sqrt(1.0 + 0.04);
  CHECK(rec.condition_met);
  CHECK(rec.gamma_raw == Approx(0.8 / norm).epsilon(1e-12));
  CHECK(rec.gamma_proj == Approx(0.8 / projected_norm).epsilon(1e-12));
  CHECK(rec.gamma_proj / rec.gamma_raw == Approx(norm / projected_norm).epsilon(1e-12));
  CHECK(rec.gamma_proj > rec.gamma_raw);
}

TEST_CASE("margin condition detects negative cosines and dominance failures") {
  std::vector<Matrix> classes{Matrix(Vector{{1.0, 0.0}}.transpose()), Matrix(Vector{{0.0, 1.0}}.transpose())};
  Matrix good(1, 2), flipped(1, 2), negative(1, 2);
  good << 1.0, 0.3;
  flipped << 0.3, 1.0;
  negative << 1.0, -0.1;
  CHECK(margin_condition(good, classes, 0));
  CHECK_FALSE(margin_condition(flipped, classes, 0));
  CHECK_FALSE(margin_condition(negative, classes, 0));
}

TEST_CASE("suites pass at small trial counts") {
  for (const char* name : {"projection", "margin", "dot", "weights", "cost-dominance", "reduction"}) {
    const auto r = run_suite(name, 200, 5);
    INFO(to_json(r).dump());
    CHECK(r.pass);
  }
  const auto ot = check_ot_oracle(20, 5);
  INFO(to_json(ot).dump());
  CHECK(ot.pass);
}

TEST_CASE("suite reports are deterministic for a fixed seed") {
  for (const auto& name : suite_names()) {
    if (name == "ot-oracle") continue;
    CHECK(without_timing(run_suite(name, 120, 9)) == without_timing(run_suite(name, 120, 9)));
  }
  CHECK(without_timing(check_ot_oracle(5, 9)) == without_timing(check_ot_oracle(5, 9)));
  CHECK(without_timing(run_suite("dot", 120, 9)) != without_timing(run_suite("dot", 120, 10)));
}

TEST_CASE("margin suite records equality trials and out-of-hypothesis instances") {
  const auto r = check_margin(100, 2);
  CHECK(r.stats.at("equality_passed") == r.stats.at("equality_trials"));
  CHECK(r.stats.at("condition_met_trials") == 100);
  CHECK(r.stats.contains("condition_violating_trials"));
}

TEST_CASE("unknown suite is a usage error") {
  try {
    run_suite("nonsense", 1, 1);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::usage);
  }
}
