#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cola/attack.hpp"
#include "cola/bundle_io.hpp"
#include "cola/classifier.hpp"
#include "cola/properties.hpp"
#include "cola/subspace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModule = "cli";

struct SharedOptions {
  unsigned threads = 1;
  long components = 256;
  double temperature_logit = 100.0;
  std::string entropy_sign = "semantic";
  double temperature_weight = 1.0;
  double ot_epsilon = 0.01;
  int ot_max_iters = 1000;
  double ot_tolerance = 1e-6;

  cola::ClassifierConfig classifier() const {
    cola::ClassifierConfig cfg;
    cfg.components = components;
    cfg.weighting.temperature_logit = temperature_logit;
    cfg.weighting.entropy_sign =
        entropy_sign == "paper_literal" ? cola::EntropySign::paper_literal : cola::EntropySign::semantic;
    cfg.weighting.temperature_weight = temperature_weight;
    cfg.weighting.validate();
    cfg.ot = {ot_epsilon, ot_max_iters, ot_tolerance};
    cfg.ot.validate();
    return cfg;
  }
};

void add_shared(CLI::App* cmd, SharedOptions& o) {
  cmd->add_option("--threads", o.threads, "Worker threads over samples")->check(CLI::Range(1u, 1024u));
  cmd->add_option("--components", o.components, "Subspace dimension C")->check(CLI::PositiveNumber);
  cmd->add_option("--temperature-logit", o.temperature_logit, "Logit scale of the class posterior");
  cmd->add_option("--entropy-sign", o.entropy_sign, "Entropy weighting sign")
      ->check(CLI::IsMember({"semantic", "paper_literal"}));
  cmd->add_option("--temperature-weight", o.temperature_weight, "Temperature of the entropy softmax");
  cmd->add_option("--ot-epsilon", o.ot_epsilon, "Sinkhorn entropic regularization");
  cmd->add_option("--ot-max-iters", o.ot_max_iters, "Sinkhorn iteration cap");
  cmd->add_option("--ot-tolerance", o.ot_tolerance, "Sinkhorn marginal tolerance");
}

json resolved_config(const SharedOptions& o, const cola::ClassifierConfig& cfg) {
  return {{"threads", o.threads},
          {"components", cfg.components},
          {"weighting", cola::to_json(cfg.weighting)},
          {"ot", cola::to_json(cfg.ot)}};
}

// Files created by the running command; removed if it fails.
std::vector<fs::path> g_outputs;

void track(const fs::path& p) {
  if (!fs::exists(p)) g_outputs.push_back(p);
}

void write_text(const fs::path& path, const std::string& text) {
  track(path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) cola::fail_data(kModule, "cannot write " + path.string());
}

cola::SubspaceProjector obtain_projector(const cola::EmbeddingBundle& bundle, const std::string& path,
                                         Eigen::Index components, bool center = false) {
  if (!path.empty()) {
    auto p = cola::load_projector(path);
    if (p.dim() != static_cast<Eigen::Index>(bundle.manifest.dim)) {
      cola::fail_usage(kModule, "projector dimension does not match bundle");
    }
    return p;
  }
  const cola::TextBank raw = cola::make_text_bank(bundle, cola::WeightingConfig{});
  return cola::build_projector(cola::stacked_text(raw), components, center);
}

void print_table(const cola::BenchmarkReport& report) {
  std::cout << std::left << std::setw(14) << "method" << std::right << std::setw(10) << "clean";
  if (report.robust) std::cout << std::setw(10) << "robust";
  std::cout << std::setw(12) << "margin" << std::setw(10) << "seconds" << "\n";
  std::cout << std::fixed;
  for (const auto& c : report.clean.methods) {
    std::cout << std::left << std::setw(14) << cola::to_string(c.method) << std::right << std::setprecision(4)
              << std::setw(10) << c.accuracy;
    double margin = c.mean_margin, seconds = c.seconds;
    if (report.robust) {
      const auto& r = report.robust->at(c.method);
      std::cout << std::setw(10) << r.accuracy;
      margin = r.mean_margin;
      seconds += r.seconds;
    }
    std::cout << std::setw(12) << std::setprecision(5) << margin << std::setw(10) << std::setprecision(3) << seconds
              << "\n";
  }
  std::cout.unsetf(std::ios::floatfield);
}

std::vector<cola::Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<cola::Method> out;
  if (names.empty()) return {std::begin(cola::kAllMethods), std::end(cola::kAllMethods)};
  for (const auto& n : names) out.push_back(cola::parse_method(n));
  return out;
}

struct AttackOptions {
  std::string mode = "pgd";
  double budget = cola::kDefaultAttackBudget;
  int steps = 10;
  std::optional<double> step_size;
  std::string norm = "l_inf";
  double parallel_scale = 0.0;
  double orthogonal_scale = 0.0;
  std::uint64_t seed = 0;
};

void add_attack(CLI::App* cmd, AttackOptions& a, bool optional_mode) {
  const std::vector<std::string> modes =
      optional_mode ? std::vector<std::string>{"none", "pgd", "structured"} : std::vector<std::string>{"pgd", "structured"};
  if (optional_mode) a.mode = "none";
  cmd->add_option(optional_mode ? "--attack" : "--mode", a.mode, "Attack mode")->check(CLI::IsMember(modes));
  cmd->add_option("--budget", a.budget, "Feature-space PGD budget");
  cmd->add_option("--steps", a.steps, "PGD steps");
  cmd->add_option("--step-size", a.step_size, "PGD step size (default 2.5*budget/steps)");
  cmd->add_option("--norm", a.norm, "PGD norm")->check(CLI::IsMember({"l_inf", "l2"}));
  cmd->add_option("--parallel-scale", a.parallel_scale, "Structured in-subspace noise norm");
  cmd->add_option("--orthogonal-scale", a.orthogonal_scale, "Structured orthogonal noise norm");
  cmd->add_option("--seed", a.seed, "Seed of the structured noise streams");
}

cola::AttackConfig attack_config(const AttackOptions& a, double temperature) {
  cola::AttackConfig cfg =
      cola::make_pgd_config(a.budget, a.steps, a.norm == "l2" ? cola::AttackNorm::l2 : cola::AttackNorm::l_inf);
  if (a.step_size) cfg.step_size = *a.step_size;
  cfg.mode = a.mode == "structured" ? cola::AttackMode::structured : cola::AttackMode::pgd_cosine;
  cfg.temperature = temperature;
  if (cfg.mode == cola::AttackMode::pgd_cosine) cfg.validate();
  return cfg;
}

cola::EmbeddingBundle run_attack(const cola::EmbeddingBundle& bundle, const AttackOptions& a,
                                 const cola::TextBank& bank, const cola::SubspaceProjector& projector,
                                 double temperature, unsigned threads) {
  const cola::AttackConfig cfg = attack_config(a, temperature);
  std::optional<cola::StructuredNoiseSpec> spec;
  if (cfg.mode == cola::AttackMode::structured) spec = cola::StructuredNoiseSpec{a.parallel_scale, a.orthogonal_scale};
  return cola::attack_bundle(bundle, cfg, bank, &projector, spec, a.seed, threads);
}

json attack_json(const cola::EmbeddingBundle& attacked) { return attacked.manifest.metadata.at("attack"); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust zero-shot classification with subspace projection and optimal transport"};
  app.require_subcommand(1);
  app.allow_extras(false);

  // gen-synthetic
  cola::SyntheticParams syn;
  std::string syn_out;
  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic embedding bundle");
  gen->add_option("--out", syn_out, "Output bundle directory")->required();
  gen->add_option("--seed", syn.seed);
  gen->add_option("--dim", syn.dim)->check(CLI::PositiveNumber);
  gen->add_option("--classes", syn.num_classes)->check(CLI::PositiveNumber);
  gen->add_option("--descriptions", syn.descriptions_per_class)->check(CLI::PositiveNumber);
  gen->add_option("--views", syn.views_per_sample)->check(CLI::PositiveNumber);
  gen->add_option("--samples", syn.num_samples)->check(CLI::PositiveNumber);
  gen->add_option("--noise-scale", syn.noise_scale)->check(CLI::NonNegativeNumber);
  gen->add_option("--subspace-dim", syn.subspace_dim)->check(CLI::PositiveNumber);
  gen->add_option("--class-similarity", syn.class_similarity);

  // build-subspace
  std::string bs_bundle, bs_out;
  long bs_components = 256;
  bool bs_center = false;
  auto* build = app.add_subcommand("build-subspace", "Fit the text subspace and write proj.bin");
  build->add_option("--bundle", bs_bundle)->required();
  build->add_option("--components", bs_components)->check(CLI::PositiveNumber);
  build->add_flag("--center", bs_center, "Subtract the text mean before the SVD");
  build->add_option("--out", bs_out, "Projector file (default <bundle>/proj.bin)");

  // classify
  SharedOptions cl_opts;
  std::string cl_bundle, cl_projector, cl_out, cl_method = "ot_projected";
  auto* classify = app.add_subcommand("classify", "Predict labels for every sample of a bundle");
  classify->add_option("--bundle", cl_bundle)->required();
  classify->add_option("--method", cl_method)->check(CLI::IsMember({"cosine", "mean_text", "ot_raw", "ot_projected"}));
  classify->add_option("--projector", cl_projector, "proj.bin to use instead of fitting one");
  classify->add_option("--out", cl_out, "Predictions JSON");
  add_shared(classify, cl_opts);

  // simulate-attack
  SharedOptions sa_opts;
  AttackOptions sa_attack;
  std::string sa_bundle, sa_out, sa_projector;
  auto* attack = app.add_subcommand("simulate-attack", "Write an attacked copy of a bundle");
  attack->add_option("--bundle", sa_bundle)->required();
  attack->add_option("--out", sa_out, "Attacked bundle directory")->required();
  attack->add_option("--projector", sa_projector);
  add_attack(attack, sa_attack, false);
  add_shared(attack, sa_opts);

  // verify
  std::vector<std::string> vf_suites;
  std::uint64_t vf_trials = 1000, vf_seed = 0;
  std::string vf_out;
  auto* verify = app.add_subcommand("verify", "Run property suites and emit a JSON report");
  std::vector<std::string> suite_choices = cola::suite_names();
  suite_choices.push_back("all");
  verify->add_option("--suite", vf_suites, "Suite name (repeatable)")->required()->check(CLI::IsMember(suite_choices));
  verify->add_option("--trials", vf_trials)->check(CLI::PositiveNumber);
  verify->add_option("--seed", vf_seed);
  verify->add_option("--out", vf_out, "Also write the report to this file");

  // benchmark
  SharedOptions bm_opts;
  AttackOptions bm_attack;
  std::string bm_bundle, bm_projector, bm_json, bm_csv;
  std::vector<std::string> bm_methods;
  auto* bench = app.add_subcommand("benchmark", "Evaluate all methods on clean and attacked samples");
  bench->add_option("--bundle", bm_bundle)->required();
  bench->add_option("--projector", bm_projector);
  bench->add_option("--methods", bm_methods)->check(CLI::IsMember({"cosine", "mean_text", "ot_raw", "ot_projected"}));
  bench->add_option("--json", bm_json, "JSON report path");
  bench->add_option("--csv", bm_csv, "CSV report path");
  add_attack(bench, bm_attack, true);
  add_shared(bench, bm_opts);

  // pca-export
  std::string pca_bundle, pca_projector, pca_out;
  long pca_components = 256;
  auto* pca = app.add_subcommand("pca-export", "Write 2-D subspace coordinates of text and views as CSV");
  pca->add_option("--bundle", pca_bundle)->required();
  pca->add_option("--projector", pca_projector);
  pca->add_option("--components", pca_components)->check(CLI::PositiveNumber);
  pca->add_option("--out", pca_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", {{"kind", "usage"}, {"module", kModule}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }

  try {
    if (*gen) {
      const auto bundle = cola::generate_synthetic(syn);
      track(syn_out);
      cola::write_bundle(bundle, syn_out);
      std::cout << "wrote " << syn.num_samples << " samples, " << syn.num_classes << " classes to " << syn_out << "\n";
    } else if (*build) {
      const auto bundle = cola::load_bundle(bs_bundle);
      const auto projector = obtain_projector(bundle, "", bs_components, bs_center);
      const fs::path out = bs_out.empty() ? fs::path(bs_bundle) / "proj.bin" : fs::path(bs_out);
      track(out);
      cola::save_projector(projector, out);
      std::cout << "wrote " << out.string() << " (d=" << projector.dim() << ", C=" << projector.components()
                << ", top singular value " << projector.singular_values()[0] << ")\n";
    } else if (*classify) {
      const auto cfg_base = cl_opts.classifier();
      const auto bundle = cola::load_bundle(cl_bundle);
      const auto bank = cola::make_text_bank(bundle, cfg_base.weighting);
      const cola::Method method = cola::parse_method(cl_method);
      std::optional<cola::SubspaceProjector> projector;
      if (method == cola::Method::ot_projected) projector = obtain_projector(bundle, cl_projector, cfg_base.components);
      const auto report = cola::evaluate(bundle, bank, {method}, cfg_base, projector ? &*projector : nullptr,
                                         cl_opts.threads);
      const auto& r = report.methods.front();
      std::cout << cl_method << " accuracy " << r.accuracy << " over " << r.samples << " samples\n";
      if (!cl_out.empty()) {
        json j = {{"config", resolved_config(cl_opts, cfg_base)}, {"result", cola::to_json(r)}};
        j["config"]["method"] = cl_method;
        j["predictions"] = r.predictions;
        write_text(cl_out, j.dump(2) + "\n");
      }
    } else if (*attack) {
      const auto cfg = sa_opts.classifier();
      const auto bundle = cola::load_bundle(sa_bundle);
      const auto bank = cola::make_text_bank(bundle, cfg.weighting);
      const auto projector = obtain_projector(bundle, sa_projector, cfg.components);
      const auto attacked =
          run_attack(bundle, sa_attack, bank, projector, cfg.weighting.temperature_logit, sa_opts.threads);
      track(sa_out);
      cola::write_bundle(attacked, sa_out);
      std::cout << "wrote attacked bundle to " << sa_out << " " << attack_json(attacked).dump() << "\n";
    } else if (*verify) {
      std::vector<std::string> names;
      for (const auto& s : vf_suites) {
        if (s == "all") {
          names = cola::suite_names();
          break;
        }
        names.push_back(s);
      }
      json suites = json::array();
      bool all_pass = true;
      for (const auto& name : names) {
        const auto r = cola::run_suite(name, vf_trials, vf_seed);
        all_pass = all_pass && r.pass;
        suites.push_back(cola::to_json(r));
        std::cerr << (r.pass ? "PASS " : "FAIL ") << name << "\n";
      }
      const json report = {{"pass", all_pass}, {"trials", vf_trials}, {"seed", vf_seed}, {"suites", suites}};
      std::cout << report.dump(2) << "\n";
      if (!vf_out.empty()) write_text(vf_out, report.dump(2) + "\n");
      return all_pass ? 0 : 3;
    } else if (*bench) {
      const auto cfg = bm_opts.classifier();
      const auto methods = parse_methods(bm_methods);
      const auto bundle = cola::load_bundle(bm_bundle);
      const auto bank = cola::make_text_bank(bundle, cfg.weighting);
      const auto projector = obtain_projector(bundle, bm_projector, cfg.components);

      cola::BenchmarkReport report;
      report.config = resolved_config(bm_opts, cfg);
      report.config["bundle"] = manifest_to_json(bundle.manifest);
      report.config["projector"] = bm_projector.empty() ? json("fitted") : json(bm_projector);
      report.config["components"] = projector.components();
      report.clean = cola::evaluate(bundle, bank, methods, cfg, &projector, bm_opts.threads);
      if (bm_attack.mode != "none") {
        const auto attacked =
            run_attack(bundle, bm_attack, bank, projector, cfg.weighting.temperature_logit, bm_opts.threads);
        report.config["attack"] = attack_json(attacked);
        report.robust = cola::evaluate(attacked, bank, methods, cfg, &projector, bm_opts.threads);
      } else {
        report.config["attack"] = nullptr;
      }
      print_table(report);
      if (!bm_json.empty()) write_text(bm_json, cola::to_json(report).dump(2) + "\n");
      if (!bm_csv.empty()) write_text(bm_csv, cola::to_csv(report));
    } else if (*pca) {
      const auto bundle = cola::load_bundle(pca_bundle);
      const auto projector = obtain_projector(bundle, pca_projector, pca_components);
      const auto bank = cola::make_text_bank(bundle, cola::WeightingConfig{});
      std::ostringstream csv;
      csv.precision(9);
      csv << "kind,index,label,pc1,pc2\n";
      const cola::Matrix text = projector.pca_coords(cola::stacked_text(bank));
      for (Eigen::Index i = 0; i < text.rows(); ++i) {
        csv << "text," << i << ',' << i / bank.descriptions() << ',' << text(i, 0) << ',' << text(i, 1) << '\n';
      }
      for (std::uint32_t s = 0; s < bundle.manifest.num_samples; ++s) {
        const cola::Matrix v = projector.pca_coords(cola::bundle_sample_views(bundle, s));
        for (Eigen::Index n = 0; n < v.rows(); ++n) {
          csv << "view," << s * bundle.manifest.views_per_sample + n << ',' << bundle.labels[s] << ',' << v(n, 0)
              << ',' << v(n, 1) << '\n';
        }
      }
      write_text(pca_out, csv.str());
      std::cout << "wrote " << pca_out << "\n";
    }
  } catch (const cola::Error& e) {
    for (const auto& p : g_outputs) {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
    std::cerr << json{{"error", {{"kind", cola::to_string(e.kind())}, {"module", e.module()}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    switch (e.kind()) {
      case cola::ErrorKind::usage: return 1;
      case cola::ErrorKind::data: return 2;
      case cola::ErrorKind::numerical: return 3;
    }
  } catch (const std::exception& e) {
    for (const auto& p : g_outputs) {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
    std::cerr << json{{"error", {{"kind", "data"}, {"module", kModule}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  }
  return 0;
}
