#pragma once

#include "meq/equilibrium.hpp"

#include <optional>

namespace meq {

// Observed matching with margins derived from it (n_x = mu_x0 + sum_y mu_xy
// and the y-side analogue hold by construction).
struct ObservedData {
  Matching matching;
  Market market;
  HouseholdFrequencies pi;
  double household_count = 0.0;

  static ObservedData from_matching(TypeSpace space, Matching matching);
};

struct FitOptions {
  SolverOptions solver;
  int max_iter = 200;
  // Convergence threshold on the sup-norm of the likelihood gradient on the
  // frequencies scale (observed weights normalized to sum to one).
  double grad_tol = 1e-6;
  // The ascent keeps polishing below grad_tol until the gradient falls under
  // this bound (0 means grad_tol * 1e-4); the converged flag tests grad_tol.
  double grad_stop_tol = 0.0;

  double effective_grad_stop() const {
    return grad_stop_tol > 0.0 ? grad_stop_tol : grad_tol * 1e-4;
  }
};

struct EstimationResult {
  ParamVector theta_hat;
  double loglik = 0.0;        // sum over XY0 of mu_hat * log Pi at theta_hat
  double gradient_norm = 0.0; // frequencies scale (MPEC: sup-norm of Z)
  int iterations = 0;
  bool converged = false;
  std::optional<Mat> covariance;
  std::optional<Vec> std_errors;
};

// Equilibrium frequencies Pi(theta, n, m); throws SolverError when the
// equilibrium solve does not converge.
HouseholdFrequencies predicted_frequencies(const MatchingFamily& family, const Vec& theta,
                                           const Market& market, const SolverOptions& opts);

// sum over XY0 of mu_hat * log Pi with the 0 * log(.) = 0 convention; returns
// -infinity when a positively observed cell has zero predicted frequency.
double log_likelihood(const ObservedData& observed, const HouseholdFrequencies& pi);

// Analytic gradient d l / d theta_k via the equilibrium implicit-function
// system Delta (d mu_x0, d mu_0y) = (c^k, d^k).
Vec loglik_gradient(const MatchingFamily& family, const Vec& theta, const ObservedData& observed,
                    const SolverOptions& opts);

// Quasi-Newton ascent on the frequency-scale log-likelihood with the analytic
// gradient; the equilibrium is re-solved per evaluation, warm-started from the
// previous iterate.
EstimationResult fit_nested(const MatchingFamily& family, const ObservedData& observed,
                            const Vec& theta_init, const FitOptions& opts);

// Newton root-finding on the first-order-condition map Z(theta, u, v, lambda)
// with u = -log mu_x0, v = -log mu_0y, using the analytic blockwise Jacobian.
EstimationResult fit_mpec(const MatchingFamily& family, const ObservedData& observed,
                          const Vec& theta_init, const FitOptions& opts);

// Closed-form covariance for degree-1 homogeneous families:
// V = J^-1 + J^-1 K A V_pi A' K' J^-1 with J the Fisher information in theta,
// K the theta-margin cross information, V_pi = diag(pi) - pi pi'.
// std_errors = sqrt(diag(V) / N_h).
std::pair<Mat, Vec> covariance_homogeneous(const MatchingFamily& family, const Vec& theta_hat,
                                           const ObservedData& observed,
                                           const SolverOptions& opts);

// Nonparametric Choo-Siow inversion: Phi = 2 log mu_xy - log mu_x0 - log mu_0y;
// zero couple cells are marked prohibited. Requires positive singles masses.
SurplusTable surplus_nonparametric_cs(const ObservedData& observed);

}  // namespace meq
