#include "meq/bench.hpp"

#include <chrono>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace meq {

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct Sample {
  double sum = 0.0, sumsq = 0.0;
  int n = 0;
  void add(double v) {
    sum += v;
    sumsq += v * v;
    ++n;
  }
  double mean() const { return n ? sum / n : 0.0; }
  double sd() const {
    if (n < 2) return 0.0;
    const double m = mean();
    return std::sqrt(std::max(0.0, (sumsq - n * m * m) / (n - 1)));
  }
};

double solution_gap(const Matching& a, const Matching& b) {
  double gap = (a.mu_x0 - b.mu_x0).cwiseAbs().maxCoeff();
  gap = std::max(gap, (a.mu_0y - b.mu_0y).cwiseAbs().maxCoeff());
  gap = std::max(gap, (a.mu - b.mu).cwiseAbs().maxCoeff());
  return gap;
}

}  // namespace

std::pair<FamilyPtr, Market> make_etu_experiment(int size_x, Rng& rng) {
  const int nx = size_x;
  const int ny = static_cast<int>(std::ceil(1.5 * size_x));
  Vec xv(nx), yv(ny);
  for (int x = 0; x < nx; ++x) xv[x] = rng.uniform();
  for (int y = 0; y < ny; ++y) yv[y] = rng.uniform();
  Mat w = xv * yv.transpose();
  auto family = std::make_shared<EtuGkwFamily>(Mat::Constant(nx, ny, 1.0), w, w);
  Market market(TypeSpace::indexed(nx, ny), Vec::Ones(nx), Vec::Ones(ny));
  return {std::move(family), std::move(market)};
}

BenchmarkReport run_benchmark_system(const std::vector<int>& sizes, int replications,
                                     std::uint64_t seed, const SolverOptions& opts) {
  if (replications <= 0) throw ConfigError("replications must be positive");
  BenchmarkReport report;
  report.which = "system";
  report.seed = seed;
  report.replications = replications;

  Vec theta = Vec::Ones(2);
  std::uint64_t stream_index = 0;
  for (int size : sizes) {
    Sample it_serial, t_serial, it_par, t_par, it_newton, t_newton;
    int fail_serial = 0, fail_par = 0, fail_newton = 0;
    bool agreement = true;
    for (int rep = 0; rep < replications; ++rep) {
      Rng rng = Rng::stream(seed, stream_index++);
      auto [family, market] = make_etu_experiment(size, rng);

      SolverOptions serial = opts;
      serial.parallel = false;
      double t0 = now_s();
      EquilibriumSolution sol_serial = solve_ipfp(*family, theta, market, serial);
      t_serial.add(now_s() - t0);
      it_serial.add(sol_serial.outer_iterations);
      if (!sol_serial.converged) ++fail_serial;

      SolverOptions par = opts;
      par.parallel = true;
      t0 = now_s();
      EquilibriumSolution sol_par = solve_ipfp(*family, theta, market, par);
      t_par.add(now_s() - t0);
      it_par.add(sol_par.outer_iterations);
      if (!sol_par.converged) ++fail_par;

      t0 = now_s();
      EquilibriumSolution sol_newton = solve_newton(*family, theta, market, serial);
      t_newton.add(now_s() - t0);
      it_newton.add(sol_newton.outer_iterations);
      if (!sol_newton.converged) ++fail_newton;

      if (sol_serial.converged && sol_newton.converged &&
          solution_gap(sol_serial.matching, sol_newton.matching) > 1e-8)
        agreement = false;
      if (solution_gap(sol_serial.matching, sol_par.matching) > 0.0) agreement = false;
    }
    auto row = [&](const char* method, const Sample& its, const Sample& ts, int fails) {
      report.rows.push_back(BenchmarkRow{size, method, its.mean(), ts.mean(), ts.sd(),
                                         100.0 * fails / replications, agreement,
                                         replications});
    };
    row("ipfp", it_serial, t_serial, fail_serial);
    row("ipfp-parallel", it_par, t_par, fail_par);
    row("newton", it_newton, t_newton, fail_newton);
  }
  return report;
}

BenchmarkReport run_benchmark_estimation(const std::vector<int>& sizes, int replications,
                                         std::uint64_t seed, const FitOptions& opts) {
  if (replications <= 0) throw ConfigError("replications must be positive");
  BenchmarkReport report;
  report.which = "estimation";
  report.seed = seed;
  report.replications = replications;

  Vec theta0(2);
  theta0 << 0.5, 0.3;
  const Vec theta_init = Vec::Zero(2);

  std::uint64_t size_index = 0;
  for (int size : sizes) {
    struct RepResult {
      double nested_iters = 0.0, nested_time = 0.0;
      double mpec_iters = 0.0, mpec_time = 0.0;
      bool nested_fail = true, mpec_fail = true;
      bool both_agree = true;
    };
    std::vector<RepResult> results(replications);
    const std::uint64_t base = size_index++ * static_cast<std::uint64_t>(replications);

#pragma omp parallel for schedule(dynamic) if (opts.solver.parallel)
    for (int rep = 0; rep < replications; ++rep) {
      Rng rng = Rng::stream(seed ^ 0x62656e6368ULL, base + rep);
      auto [family, market] = make_etu_experiment(size, rng);
      RepResult& r = results[rep];

      SolverOptions gen = opts.solver;
      gen.parallel = false;
      EquilibriumSolution truth = solve_ipfp(*family, theta0, market, gen);
      if (!truth.converged) continue;
      ObservedData observed = ObservedData::from_matching(market.space, truth.matching);

      FitOptions fit_opts = opts;
      fit_opts.solver.parallel = false;
      double t0 = now_s();
      EstimationResult nested = fit_nested(*family, observed, theta_init, fit_opts);
      r.nested_time = now_s() - t0;
      r.nested_iters = nested.iterations;
      r.nested_fail = !nested.converged ||
                      (nested.theta_hat.values - theta0).cwiseAbs().maxCoeff() > 1e-3;

      t0 = now_s();
      EstimationResult mpec = fit_mpec(*family, observed, theta_init, fit_opts);
      r.mpec_time = now_s() - t0;
      r.mpec_iters = mpec.iterations;
      r.mpec_fail =
          !mpec.converged || (mpec.theta_hat.values - theta0).cwiseAbs().maxCoeff() > 1e-3;

      if (nested.converged && mpec.converged)
        r.both_agree =
            (nested.theta_hat.values - mpec.theta_hat.values).cwiseAbs().maxCoeff() <= 1e-5;
    }

    Sample nested_it, nested_t, mpec_it, mpec_t;
    int nested_fail = 0, mpec_fail = 0;
    bool agreement = true;
    for (const RepResult& r : results) {
      nested_it.add(r.nested_iters);
      nested_t.add(r.nested_time);
      mpec_it.add(r.mpec_iters);
      mpec_t.add(r.mpec_time);
      if (r.nested_fail) ++nested_fail;
      if (r.mpec_fail) ++mpec_fail;
      if (!r.both_agree) agreement = false;
    }
    report.rows.push_back(BenchmarkRow{size, "nested", nested_it.mean(), nested_t.mean(),
                                       nested_t.sd(), 100.0 * nested_fail / replications,
                                       agreement, replications});
    report.rows.push_back(BenchmarkRow{size, "mpec", mpec_it.mean(), mpec_t.mean(), mpec_t.sd(),
                                       100.0 * mpec_fail / replications, agreement,
                                       replications});
  }
  return report;
}

Json benchmark_to_json(const BenchmarkReport& report) {
  Json rows = Json::array();
  for (const BenchmarkRow& r : report.rows) {
    rows.push_back(Json{{"size", r.size},
                        {"method", r.method},
                        {"iterations_mean", json_number(r.iterations_mean)},
                        {"time_mean_s", json_number(r.time_mean_s)},
                        {"time_sd_s", json_number(r.time_sd_s)},
                        {"failure_rate_pct", json_number(r.failure_rate_pct)},
                        {"agreement_ok", r.agreement_ok},
                        {"replications", r.replications}});
  }
  return Json{{"type", "benchmark"},
              {"which", report.which},
              {"seed", report.seed},
              {"replications", report.replications},
              {"rows", std::move(rows)}};
}

Json benchmark_numeric_view(const BenchmarkReport& report) {
  Json j = benchmark_to_json(report);
  for (auto& row : j["rows"]) {
    row.erase("time_mean_s");
    row.erase("time_sd_s");
  }
  return j;
}

}  // namespace meq
