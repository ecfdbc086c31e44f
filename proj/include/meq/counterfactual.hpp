#pragma once

#include "meq/equilibrium.hpp"

namespace meq {

enum class CounterfactualMethod { kParametric, kParameterFree };

struct CounterfactualResult {
  // ratios of counterfactual to baseline quantities, z_tilde = z' / z
  Matching ratios;          // mu_tilde_xy, mu_tilde_x0, mu_tilde_0y
  Vec n_tilde, m_tilde;
  Matching new_matching;    // mu' = ratios (elementwise) baseline
  CounterfactualMethod method = CounterfactualMethod::kParametric;
  int iterations = 0;
  bool converged = false;
};

// Two-step parametric counterfactual: re-solve the equilibrium at
// (theta_hat, n', m') and report ratios against the baseline equilibrium at
// (theta_hat, n, m). Zero baseline cells carry a unit ratio and mu' = 0.
CounterfactualResult counterfactual_parametric(const MatchingFamily& family,
                                               const Vec& theta_hat,
                                               const Market& baseline_market,
                                               const Market& new_market,
                                               const SolverOptions& opts);

// Parameter-free counterfactual through the ratio system
//   n_tilde_x = p_x0 mu_tilde_x0 + sum_y p_xy g(mu_tilde_x0, mu_tilde_0y)
//   m_tilde_y = q_0y mu_tilde_0y + sum_x q_xy g(mu_tilde_x0, mu_tilde_0y)
// solved by the revised alternating procedure initialized at
// mu_tilde_0y = m_tilde_y / q_0y and mu_tilde_x0 = n_tilde_x / p_x0.
// ratio_family supplies the theta-free g; baseline singles must be positive.
// Zero baseline couple cells drop out of the system and stay at mu' = 0.
CounterfactualResult counterfactual_parameter_free(const Matching& baseline,
                                                   const Market& baseline_market,
                                                   const Market& new_market,
                                                   const MatchingFamily& ratio_family,
                                                   const SolverOptions& opts);

}  // namespace meq
