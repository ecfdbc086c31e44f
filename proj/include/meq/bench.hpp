#pragma once

#include "meq/estimation.hpp"
#include "meq/io.hpp"
#include "meq/rng.hpp"

#include <cstdint>

namespace meq {

struct BenchmarkRow {
  int size = 0;
  std::string method;
  double iterations_mean = 0.0;
  double time_mean_s = 0.0;
  double time_sd_s = 0.0;
  double failure_rate_pct = 0.0;
  bool agreement_ok = true;  // cross-method solution agreement within 1e-8
  int replications = 0;
};

struct BenchmarkReport {
  std::string which;  // "system" or "estimation"
  std::uint64_t seed = 0;
  int replications = 0;
  std::vector<BenchmarkRow> rows;
};

// ETU experiment instance: type values drawn uniformly on (0, 1),
// alpha_xy = gamma_xy = x*y, tau = 1, |Y| = ceil(1.5 |X|), n = m = 1.
// theta scales (alpha, gamma); theta = (1, 1) reproduces the fixed design.
std::pair<FamilyPtr, Market> make_etu_experiment(int size_x, Rng& rng);

// Times solve_ipfp (serial and parallel) and solve_newton on the ETU design
// and records iteration counts, wall times and cross-method agreement.
BenchmarkReport run_benchmark_system(const std::vector<int>& sizes, int replications,
                                     std::uint64_t seed, const SolverOptions& opts);

// Generates mu_hat = mu^{theta0} at theta0 = (0.5, 0.3), then fits by the
// nested and MPEC routes from theta_init = (0, 0). A replication fails when
// the fit does not converge or misses theta0 by more than 1e-3 in sup norm.
BenchmarkReport run_benchmark_estimation(const std::vector<int>& sizes, int replications,
                                         std::uint64_t seed, const FitOptions& opts);

Json benchmark_to_json(const BenchmarkReport& report);
// The same report with wall times removed; fixed-seed runs are bit-identical
// on this view.
Json benchmark_numeric_view(const BenchmarkReport& report);

}  // namespace meq
