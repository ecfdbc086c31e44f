#include "meq/counterfactual.hpp"

#include <cmath>

namespace meq {

namespace {

void check_same_space(const Market& baseline, const Market& cf) {
  if (!(baseline.space == cf.space))
    throw ConfigError("counterfactual market must share the baseline type space");
}

// Root of h(t) = p0 * t + sum_other p_j g(t, .) - target on (0, target/p0],
// same safeguarded bisection as the equilibrium inner solves.
template <typename H>
double solve_ratio_scalar(const H& h, double hi, double inner_tol) {
  if (h(hi) <= 0.0) return hi;
  double lo = 0.0, up = hi;
  while (up - lo > inner_tol) {
    const double mid = 0.5 * (lo + up);
    if (mid <= lo || mid >= up) break;
    if (h(mid) < 0.0)
      lo = mid;
    else
      up = mid;
  }
  return 0.5 * (lo + up);
}

}  // namespace

CounterfactualResult counterfactual_parametric(const MatchingFamily& family,
                                               const Vec& theta_hat,
                                               const Market& baseline_market,
                                               const Market& new_market,
                                               const SolverOptions& opts) {
  check_same_space(baseline_market, new_market);
  EquilibriumSolution base = solve_equilibrium(family, theta_hat, baseline_market, opts);
  if (!base.converged) throw SolverError("baseline equilibrium did not converge");
  EquilibriumSolution cf = solve_equilibrium(family, theta_hat, new_market, opts);

  const int nx = baseline_market.nx(), ny = baseline_market.ny();
  CounterfactualResult out;
  out.method = CounterfactualMethod::kParametric;
  out.iterations = cf.outer_iterations;
  out.converged = cf.converged;
  out.n_tilde = new_market.n.cwiseQuotient(baseline_market.n);
  out.m_tilde = new_market.m.cwiseQuotient(baseline_market.m);

  Mat ratio_xy(nx, ny);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y) {
      const double mb = base.matching.mu(x, y);
      ratio_xy(x, y) = mb > 0.0 ? cf.matching.mu(x, y) / mb : 1.0;
    }
  out.ratios = Matching(std::move(ratio_xy),
                        cf.matching.mu_x0.cwiseQuotient(base.matching.mu_x0),
                        cf.matching.mu_0y.cwiseQuotient(base.matching.mu_0y));
  out.new_matching = cf.matching;
  return out;
}

CounterfactualResult counterfactual_parameter_free(const Matching& baseline,
                                                   const Market& baseline_market,
                                                   const Market& new_market,
                                                   const MatchingFamily& ratio_family,
                                                   const SolverOptions& opts) {
  check_same_space(baseline_market, new_market);
  opts.validate();
  if (!ratio_family.descriptor().has_theta_free_ratio)
    throw CapabilityError(ratio_family.descriptor().name +
                          " has no parameter-free ratio form");
  const int nx = baseline.nx(), ny = baseline.ny();
  if (nx != baseline_market.nx() || ny != baseline_market.ny() || nx != ratio_family.nx() ||
      ny != ratio_family.ny())
    throw ConfigError("baseline matching, market and ratio family dimensions disagree");
  if ((baseline.mu_x0.array() <= 0.0).any() || (baseline.mu_0y.array() <= 0.0).any())
    throw DomainError("ratios undefined: baseline singles masses must be strictly positive");

  // the baseline must satisfy its own accounting equations
  const double scale = std::max(baseline_market.n.maxCoeff(), baseline_market.m.maxCoeff());
  if (baseline.accounting_gap(baseline_market) > 1e-6 * scale)
    throw DomainError("baseline matching is not feasible for the baseline market");

  const Vec n_tilde = new_market.n.cwiseQuotient(baseline_market.n);
  const Vec m_tilde = new_market.m.cwiseQuotient(baseline_market.m);
  Mat p_xy(nx, ny), q_xy(nx, ny);
  Vec p_x0(nx), q_0y(ny);
  for (int x = 0; x < nx; ++x) {
    p_x0[x] = baseline.mu_x0[x] / baseline_market.n[x];
    for (int y = 0; y < ny; ++y) p_xy(x, y) = baseline.mu(x, y) / baseline_market.n[x];
  }
  for (int y = 0; y < ny; ++y) {
    q_0y[y] = baseline.mu_0y[y] / baseline_market.m[y];
    for (int x = 0; x < nx; ++x) q_xy(x, y) = baseline.mu(x, y) / baseline_market.m[y];
  }

  const double inner_tol = opts.effective_inner_tol();
  Vec at(nx), bt(ny);
  for (int x = 0; x < nx; ++x) at[x] = n_tilde[x] / p_x0[x];
  for (int y = 0; y < ny; ++y) bt[y] = m_tilde[y] / q_0y[y];

  Vec bt_next(ny);
  bool converged = false;
  double res = std::numeric_limits<double>::infinity();
  int iter = 0;
  while (iter < opts.max_outer_iter) {
    ++iter;
#pragma omp parallel for schedule(static) if (opts.parallel)
    for (int x = 0; x < nx; ++x) {
      auto h = [&](double t) {
        double s = p_x0[x] * t;
        for (int y = 0; y < ny; ++y)
          if (p_xy(x, y) > 0.0) s += p_xy(x, y) * ratio_family.ratio_form(x, y, t, bt[y]);
        return s - n_tilde[x];
      };
      at[x] = solve_ratio_scalar(h, n_tilde[x] / p_x0[x], inner_tol);
    }
#pragma omp parallel for schedule(static) if (opts.parallel)
    for (int y = 0; y < ny; ++y) {
      auto h = [&](double t) {
        double s = q_0y[y] * t;
        for (int x = 0; x < nx; ++x)
          if (q_xy(x, y) > 0.0) s += q_xy(x, y) * ratio_family.ratio_form(x, y, at[x], t);
        return s - m_tilde[y];
      };
      bt_next[y] = solve_ratio_scalar(h, m_tilde[y] / q_0y[y], inner_tol);
    }
    const double move = (bt_next - bt).cwiseAbs().maxCoeff();
    bt = bt_next;
    if (move < opts.tol) {
      res = 0.0;
      for (int x = 0; x < nx; ++x) {
        double s = p_x0[x] * at[x];
        for (int y = 0; y < ny; ++y)
          if (p_xy(x, y) > 0.0) s += p_xy(x, y) * ratio_family.ratio_form(x, y, at[x], bt[y]);
        res = std::max(res, std::abs(s - n_tilde[x]));
      }
      for (int y = 0; y < ny; ++y) {
        double s = q_0y[y] * bt[y];
        for (int x = 0; x < nx; ++x)
          if (q_xy(x, y) > 0.0) s += q_xy(x, y) * ratio_family.ratio_form(x, y, at[x], bt[y]);
        res = std::max(res, std::abs(s - m_tilde[y]));
      }
      if (res <= opts.tol) {
        converged = true;
        break;
      }
    }
  }

  CounterfactualResult out;
  out.method = CounterfactualMethod::kParameterFree;
  out.iterations = iter;
  out.converged = converged;
  out.n_tilde = n_tilde;
  out.m_tilde = m_tilde;

  Mat ratio_xy(nx, ny);
  Mat mu_new(nx, ny);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y) {
      ratio_xy(x, y) = ratio_family.ratio_form(x, y, at[x], bt[y]);
      mu_new(x, y) = baseline.mu(x, y) > 0.0 ? ratio_xy(x, y) * baseline.mu(x, y) : 0.0;
    }
  out.ratios = Matching(std::move(ratio_xy), at, bt);
  out.new_matching = Matching(std::move(mu_new), at.cwiseProduct(baseline.mu_x0),
                              bt.cwiseProduct(baseline.mu_0y));
  return out;
}

}  // namespace meq
