#pragma once

#include "meq/families.hpp"
#include "meq/types.hpp"

namespace meq {

enum class SolveMethod { kIpfp, kNewton };

struct SolverOptions {
  // Sup-norm threshold for the movement of the mu_0y iterates and for the
  // accounting residual at exit. Interpreted on masses normalized so that
  // sum(n) + sum(m) = O(1); degree-1 homogeneous families are solved on that
  // scale internally and the residual bound is enforced on the raw masses too.
  double tol = 1e-9;
  int max_outer_iter = 10000;
  // Bracket width for the one-dimensional sub-solves; 0 means
  // min(tol * 1e-2, 1e-12).
  double inner_tol = 0.0;
  SolveMethod method = SolveMethod::kIpfp;
  bool parallel = false;

  double effective_inner_tol() const {
    return inner_tol > 0.0 ? inner_tol : std::min(tol * 1e-2, 1e-12);
  }
  void validate() const {
    if (!(tol > 0.0)) throw ConfigError("tol must be strictly positive");
    if (inner_tol < 0.0 || (inner_tol > 0.0 && inner_tol > tol))
      throw ConfigError("inner_tol must satisfy 0 < inner_tol <= tol");
    if (max_outer_iter <= 0) throw ConfigError("max_outer_iter must be positive");
  }
};

struct EquilibriumSolution {
  Matching matching;
  int outer_iterations = 0;
  double residual_sup_norm = 0.0;
  bool converged = false;
};

// Accounting residuals at (mu_x0, mu_0y):
// entry x is n_x - mu_x0 - sum_y M, entry y is m_y - mu_0y - sum_x M.
Vec residuals(const MatchingFamily& family, const Vec& theta, const Market& market,
              const Vec& mu_x0, const Vec& mu_0y);

// Jacobian Delta of the map (mu_x0, mu_0y) -> (mu_x0 + sum_y M, mu_0y + sum_x M),
// blockwise [diag(1 + sum_y dM/da), (dM/db)_xy; (dM/da)_yx, diag(1 + sum_x dM/db)].
Mat system_jacobian(const MatchingFamily& family, const Vec& theta, const Vec& mu_x0,
                    const Vec& mu_0y);

// Alternating per-type scalar solves starting from mu_0y = m_y. Non-convergence
// is reported through the flag, carrying the last iterate.
EquilibriumSolution solve_ipfp(const MatchingFamily& family, const Vec& theta,
                               const Market& market, const SolverOptions& opts,
                               const Vec* warm_mu_0y = nullptr);

// Damped Newton on the full system starting from (n, m); the step is halved
// until all masses stay strictly positive and the residual does not increase.
EquilibriumSolution solve_newton(const MatchingFamily& family, const Vec& theta,
                                 const Market& market, const SolverOptions& opts,
                                 const Vec* warm = nullptr);

EquilibriumSolution solve_equilibrium(const MatchingFamily& family, const Vec& theta,
                                      const Market& market, const SolverOptions& opts);

}  // namespace meq
