// meq: matching-function equilibrium toolkit command line.
#include "meq/bench.hpp"
#include "meq/counterfactual.hpp"
#include "meq/estimation.hpp"
#include "meq/io.hpp"

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

namespace {

using meq::Json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNoConvergence = 2;

struct CliArgs {
  std::string config_path;
  std::string family;
  std::string matching_path;
  std::string margins_path;
  std::string new_margins_path;
  std::string phi_csv;
  std::string out_path;
  std::string method;  // fit: nested|mpec; counterfactual: parametric|parameter-free
  std::string solver_method;
  std::vector<double> theta;
  std::vector<double> theta_init;
  std::optional<double> tol;
  std::optional<int> max_outer_iter;
  std::optional<bool> parallel;
  std::optional<std::uint64_t> seed;
  // simulate
  std::string which = "system";
  std::vector<int> sizes;
  std::optional<int> replications;
};

Json merged_config(const CliArgs& a) {
  Json cfg = Json::object();
  if (!a.config_path.empty()) cfg = meq::load_result_json(a.config_path);
  if (!cfg.contains("family")) cfg["family"] = Json::object();
  if (!cfg.contains("solver")) cfg["solver"] = Json::object();
  if (!cfg.contains("fit")) cfg["fit"] = Json::object();
  if (!cfg.contains("simulate")) cfg["simulate"] = Json::object();
  if (!a.family.empty()) cfg["family"]["name"] = a.family;
  if (!a.phi_csv.empty()) cfg["family"]["phi_csv"] = a.phi_csv;
  if (!a.theta.empty()) cfg["family"]["theta"] = a.theta;
  if (!a.matching_path.empty()) cfg["matching"] = a.matching_path;
  if (!a.margins_path.empty()) cfg["margins"] = a.margins_path;
  if (!a.new_margins_path.empty()) cfg["new_margins"] = a.new_margins_path;
  if (!a.out_path.empty()) cfg["out"] = a.out_path;
  if (a.tol) cfg["solver"]["tol"] = *a.tol;
  if (a.max_outer_iter) cfg["solver"]["max_outer_iter"] = *a.max_outer_iter;
  if (a.parallel) cfg["solver"]["parallel"] = *a.parallel;
  if (!a.solver_method.empty()) cfg["solver"]["method"] = a.solver_method;
  if (!a.method.empty()) cfg["method"] = a.method;
  if (!a.theta_init.empty()) cfg["fit"]["theta_init"] = a.theta_init;
  if (a.seed) cfg["seed"] = *a.seed;
  if (!a.sizes.empty()) cfg["simulate"]["sizes"] = a.sizes;
  if (a.replications) cfg["simulate"]["replications"] = *a.replications;
  cfg["simulate"]["which"] = a.which;
  return cfg;
}

meq::ObservedData require_matching(const Json& cfg) {
  if (!cfg.contains("matching"))
    throw meq::ConfigError("this command needs --matching <csv>");
  meq::LabeledMatching lm = meq::load_matching_csv(cfg.at("matching").get<std::string>());
  return meq::ObservedData::from_matching(std::move(lm.space), std::move(lm.matching));
}

// Family for solve/counterfactual; choo-siow without an explicit surplus falls
// back to the nonparametric inversion of the observed matching.
meq::FamilyPtr family_for_market(const Json& cfg, const meq::ObservedData& observed,
                                 meq::Vec& theta_out) {
  Json fam_cfg = cfg.at("family");
  if (!fam_cfg.contains("name")) fam_cfg["name"] = "choo-siow";
  const std::string name = fam_cfg.at("name").get<std::string>();
  if (name == "choo-siow" && !fam_cfg.contains("phi") && !fam_cfg.contains("phi_csv") &&
      !fam_cfg.contains("theta")) {
    meq::FamilyPtr family =
        meq::ChooSiowFamily::fixed_surplus(meq::surplus_nonparametric_cs(observed));
    theta_out = meq::Vec();
    return family;
  }
  meq::FamilyPtr family = meq::make_family(fam_cfg, observed.market.space);
  theta_out = meq::family_theta(fam_cfg, *family);
  return family;
}

meq::Vec theta_init_from(const Json& cfg, const meq::MatchingFamily& family) {
  if (cfg.at("fit").contains("theta_init")) {
    meq::Vec init(cfg["fit"]["theta_init"].size());
    for (int i = 0; i < init.size(); ++i) init[i] = cfg["fit"]["theta_init"][i].get<double>();
    if (init.size() != family.theta_dim())
      throw meq::ConfigError("theta_init has the wrong dimension");
    return init;
  }
  return meq::Vec::Zero(family.theta_dim());
}

int emit(const Json& cfg, const Json& result, bool converged) {
  const std::string text = result.dump(2);
  if (cfg.contains("out"))
    meq::save_result_json(result, cfg.at("out").get<std::string>());
  else
    std::cout << text << '\n';
  return converged ? kExitOk : kExitNoConvergence;
}

int cmd_solve(const Json& cfg) {
  meq::ObservedData observed = require_matching(cfg);
  meq::Vec theta;
  meq::FamilyPtr family = family_for_market(cfg, observed, theta);
  meq::SolverOptions opts = meq::solver_options_from_json(cfg.at("solver"));
  meq::Market market = cfg.contains("margins")
                           ? meq::load_margins_csv(cfg.at("margins").get<std::string>(),
                                                   observed.market.space)
                           : observed.market;
  meq::EquilibriumSolution sol = meq::solve_equilibrium(*family, theta, market, opts);
  return emit(cfg, meq::equilibrium_to_json(market.space, sol), sol.converged);
}

int cmd_fit(const Json& cfg, bool with_ci) {
  meq::ObservedData observed = require_matching(cfg);
  const Json& fam_cfg = cfg.at("family");
  if (!fam_cfg.contains("name")) throw meq::ConfigError("fit needs --family <name>");
  meq::FamilyPtr family = meq::make_family(fam_cfg, observed.market.space);
  meq::FitOptions opts = meq::fit_options_from_json(cfg.at("fit"));
  if (cfg.contains("solver")) opts.solver = meq::solver_options_from_json(cfg.at("solver"));
  const meq::Vec init = theta_init_from(cfg, *family);

  const std::string method = cfg.value("method", "nested");
  meq::EstimationResult result;
  if (method == "nested")
    result = meq::fit_nested(*family, observed, init, opts);
  else if (method == "mpec")
    result = meq::fit_mpec(*family, observed, init, opts);
  else
    throw meq::ConfigError("fit method must be nested or mpec, got " + method);

  if (with_ci) {
    auto [cov, se] = meq::covariance_homogeneous(*family, result.theta_hat.values, observed,
                                                 opts.solver);
    result.covariance = std::move(cov);
    result.std_errors = std::move(se);
  }
  return emit(cfg, meq::estimation_to_json(result), result.converged);
}

int cmd_counterfactual(const Json& cfg) {
  meq::ObservedData observed = require_matching(cfg);
  if (!cfg.contains("new_margins"))
    throw meq::ConfigError("counterfactual needs --new-margins <csv>");
  meq::Market new_market =
      meq::load_margins_csv(cfg.at("new_margins").get<std::string>(), observed.market.space);
  meq::SolverOptions opts = meq::solver_options_from_json(cfg.at("solver"));
  const std::string method = cfg.value("method", "parameter-free");

  meq::CounterfactualResult result;
  if (method == "parametric") {
    meq::Vec theta;
    meq::FamilyPtr family = family_for_market(cfg, observed, theta);
    result = meq::counterfactual_parametric(*family, theta, observed.market, new_market, opts);
  } else if (method == "parameter-free") {
    Json fam_cfg = cfg.at("family");
    if (!fam_cfg.contains("name")) fam_cfg["name"] = "choo-siow";
    // only the ratio shape is used; surplus-free construction suffices
    meq::FamilyPtr family = fam_cfg.at("name") == "choo-siow"
                                ? meq::ChooSiowFamily::free_surplus(observed.market.space.nx(),
                                                                    observed.market.space.ny())
                                : meq::make_family(fam_cfg, observed.market.space);
    result = meq::counterfactual_parameter_free(observed.matching, observed.market, new_market,
                                                *family, opts);
  } else {
    throw meq::ConfigError("counterfactual method must be parametric or parameter-free, got " +
                           method);
  }
  return emit(cfg, meq::counterfactual_to_json(observed.market.space, result), result.converged);
}

int cmd_surplus(const Json& cfg) {
  meq::ObservedData observed = require_matching(cfg);
  meq::SurplusTable surplus = meq::surplus_nonparametric_cs(observed);
  return emit(cfg, meq::surplus_to_json(observed.market.space, surplus), true);
}

int cmd_simulate(const Json& cfg) {
  const Json& sim = cfg.at("simulate");
  const std::string which = sim.value("which", "system");
  std::vector<int> sizes = sim.contains("sizes") ? sim.at("sizes").get<std::vector<int>>()
                                                 : std::vector<int>{10};
  const int replications = sim.value("replications", 50);
  const std::uint64_t seed = cfg.value("seed", 42ULL);

  meq::BenchmarkReport report;
  if (which == "system") {
    meq::SolverOptions opts = meq::solver_options_from_json(cfg.at("solver"));
    report = meq::run_benchmark_system(sizes, replications, seed, opts);
  } else if (which == "estimation") {
    meq::FitOptions opts = meq::fit_options_from_json(cfg.at("fit"));
    if (cfg.contains("solver")) opts.solver = meq::solver_options_from_json(cfg.at("solver"));
    report = meq::run_benchmark_estimation(sizes, replications, seed, opts);
  } else {
    throw meq::ConfigError("simulate --which must be system or estimation, got " + which);
  }
  return emit(cfg, meq::benchmark_to_json(report), true);
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("MEQ_THREADS")) {
#ifdef _OPENMP
    const int t = std::atoi(threads);
    if (t > 0) omp_set_num_threads(t);
#else
    (void)threads;
#endif
  }

  CLI::App app{"meq: matching-function equilibrium models with partial assignment"};
  app.require_subcommand(1);
  CliArgs args;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "JSON config file; flags override its fields");
    sub->add_option("--family", args.family, "family name");
    sub->add_option("--matching", args.matching_path, "observed matching CSV");
    sub->add_option("--out", args.out_path, "write the result JSON here instead of stdout");
    sub->add_option("--tol", args.tol, "solver stopping tolerance");
    sub->add_option("--max-outer-iter", args.max_outer_iter, "outer iteration cap");
    sub->add_option("--parallel", args.parallel, "parallelize the inner scalar solves");
    sub->add_option("--theta", args.theta, "family parameter vector")->delimiter(',');
    sub->add_option("--phi-csv", args.phi_csv, "choo-siow surplus table CSV");
    sub->add_option("--seed", args.seed, "root seed for all randomness");
  };

  CLI::App* solve = app.add_subcommand("solve", "solve the equilibrium matching");
  add_common(solve);
  solve->add_option("--margins", args.margins_path, "margins CSV overriding the matching's");
  solve->add_option("--solver", args.solver_method, "ipfp or newton");

  CLI::App* fit = app.add_subcommand("fit", "maximum-likelihood estimation");
  add_common(fit);
  fit->add_option("--method", args.method, "nested or mpec");
  fit->add_option("--theta-init", args.theta_init, "starting parameter vector")->delimiter(',');

  CLI::App* ci = app.add_subcommand("ci", "fit and append closed-form confidence intervals");
  add_common(ci);
  ci->add_option("--method", args.method, "nested or mpec");
  ci->add_option("--theta-init", args.theta_init, "starting parameter vector")->delimiter(',');

  CLI::App* cf = app.add_subcommand("counterfactual", "counterfactual equilibrium under new margins");
  add_common(cf);
  cf->add_option("--method", args.method, "parametric or parameter-free");
  cf->add_option("--new-margins", args.new_margins_path, "counterfactual margins CSV")
      ->required();

  CLI::App* surplus = app.add_subcommand("surplus", "nonparametric Choo-Siow surplus inversion");
  add_common(surplus);

  CLI::App* simulate = app.add_subcommand("simulate", "benchmark harness");
  add_common(simulate);
  simulate->add_option("--which", args.which, "system or estimation");
  simulate->add_option("--sizes", args.sizes, "market sizes |X|")->delimiter(',');
  simulate->add_option("--replications", args.replications, "replications per size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    const Json cfg = merged_config(args);
    if (solve->parsed()) return cmd_solve(cfg);
    if (fit->parsed()) return cmd_fit(cfg, false);
    if (ci->parsed()) return cmd_fit(cfg, true);
    if (cf->parsed()) return cmd_counterfactual(cfg);
    if (surplus->parsed()) return cmd_surplus(cfg);
    if (simulate->parsed()) return cmd_simulate(cfg);
    std::cerr << "error: no subcommand\n";
    return kExitConfig;
  } catch (const meq::SolverError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNoConvergence;
  } catch (const meq::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}
