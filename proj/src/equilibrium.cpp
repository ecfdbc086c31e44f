#include "meq/equilibrium.hpp"

#include <Eigen/LU>

#include <cmath>

namespace meq {

namespace {

void check_market(const MatchingFamily& family, const Market& market) {
  if (family.nx() != market.nx() || family.ny() != market.ny())
    throw ConfigError("family and market dimensions disagree");
}

// Degree-1 homogeneous families are solved on margins rescaled to sum to one.
double working_scale(const MatchingFamily& family, const Market& market) {
  if (!family.descriptor().homogeneous_degree_one) return 1.0;
  return market.n.sum() + market.m.sum();
}

double residual_sup(const MatchingFamily& f, const Vec& theta, const Vec& n, const Vec& m,
                    const Vec& a, const Vec& b) {
  const int nx = static_cast<int>(n.size()), ny = static_cast<int>(m.size());
  double sup = 0.0;
  Vec col_sum = Vec::Zero(ny);
  for (int x = 0; x < nx; ++x) {
    double row = 0.0;
    for (int y = 0; y < ny; ++y) {
      const double v = f.value(theta, x, y, a[x], b[y]);
      row += v;
      col_sum[y] += v;
    }
    sup = std::max(sup, std::abs(n[x] - a[x] - row));
  }
  for (int y = 0; y < ny; ++y) sup = std::max(sup, std::abs(m[y] - b[y] - col_sum[y]));
  return sup;
}

// Root of g(t) = t + sum_other M(t, .) - target on (0, hi], with g increasing,
// g(0+) = -target < 0 and g(hi) >= 0. Bracketed bisection to width inner_tol,
// then one Newton polish kept only if it stays in the bracket and reduces |g|.
template <typename G, typename GWithDeriv>
double solve_scalar(const G& g, const GWithDeriv& g_with_deriv, double hi, double inner_tol) {
  const double ghi = g(hi);
  if (ghi <= 0.0) return hi;
  double lo = 0.0, up = hi;
  while (up - lo > inner_tol) {
    const double mid = 0.5 * (lo + up);
    if (mid <= lo || mid >= up) break;  // bracket at floating-point resolution
    if (g(mid) < 0.0)
      lo = mid;
    else
      up = mid;
  }
  double t = 0.5 * (lo + up);
  auto [gt, dgt] = g_with_deriv(t);
  if (dgt > 0.0) {
    const double t2 = t - gt / dgt;
    if (t2 > lo && t2 < up && std::abs(g(t2)) <= std::abs(gt)) t = t2;
  }
  return t;
}

Matching assemble_matching(const MatchingFamily& f, const Vec& theta, const Vec& a,
                           const Vec& b, double scale) {
  const int nx = static_cast<int>(a.size()), ny = static_cast<int>(b.size());
  Mat mu(nx, ny);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y) mu(x, y) = scale * f.value(theta, x, y, a[x], b[y]);
  return Matching(std::move(mu), scale * a, scale * b);
}

}  // namespace

Vec residuals(const MatchingFamily& family, const Vec& theta, const Market& market,
              const Vec& mu_x0, const Vec& mu_0y) {
  check_market(family, market);
  if (mu_x0.size() != market.nx() || mu_0y.size() != market.ny())
    throw ConfigError("unmatched-mass vectors do not match the market dimensions");
  if ((mu_x0.array() <= 0.0).any() || (mu_0y.array() <= 0.0).any())
    throw DomainError("unmatched masses must be strictly positive");
  const int nx = market.nx(), ny = market.ny();
  Vec r(nx + ny);
  Vec col_sum = Vec::Zero(ny);
  for (int x = 0; x < nx; ++x) {
    double row = 0.0;
    for (int y = 0; y < ny; ++y) {
      const double v = family.value(theta, x, y, mu_x0[x], mu_0y[y]);
      row += v;
      col_sum[y] += v;
    }
    r[x] = market.n[x] - mu_x0[x] - row;
  }
  for (int y = 0; y < ny; ++y) r[nx + y] = market.m[y] - mu_0y[y] - col_sum[y];
  return r;
}

Mat system_jacobian(const MatchingFamily& family, const Vec& theta, const Vec& mu_x0,
                    const Vec& mu_0y) {
  const int nx = static_cast<int>(mu_x0.size()), ny = static_cast<int>(mu_0y.size());
  if (nx != family.nx() || ny != family.ny())
    throw ConfigError("unmatched-mass vectors do not match the family dimensions");
  if ((mu_x0.array() <= 0.0).any() || (mu_0y.array() <= 0.0).any())
    throw DomainError("unmatched masses must be strictly positive");
  Mat delta = Mat::Zero(nx + ny, nx + ny);
  for (int x = 0; x < nx; ++x) {
    double row_da = 0.0;
    for (int y = 0; y < ny; ++y) {
      double da, db;
      family.grad_unmatched(theta, x, y, mu_x0[x], mu_0y[y], da, db);
      row_da += da;
      delta(x, nx + y) = db;
      delta(nx + y, x) = da;
      delta(nx + y, nx + y) += db;
    }
    delta(x, x) = 1.0 + row_da;
  }
  for (int y = 0; y < ny; ++y) delta(nx + y, nx + y) += 1.0;
  return delta;
}

EquilibriumSolution solve_ipfp(const MatchingFamily& family, const Vec& theta,
                               const Market& market, const SolverOptions& opts,
                               const Vec* warm_mu_0y) {
  check_market(family, market);
  opts.validate();
  const int nx = market.nx(), ny = market.ny();
  const double scale = working_scale(family, market);
  const Vec n = market.n / scale, m = market.m / scale;
  const double inner_tol = opts.effective_inner_tol();

  Vec b = warm_mu_0y ? Vec(*warm_mu_0y / scale) : m;
  for (int y = 0; y < ny; ++y) b[y] = std::min(std::max(b[y], 1e-300), m[y]);
  Vec a(nx), b_next(ny);

  EquilibriumSolution out;
  bool converged = false;
  double res = std::numeric_limits<double>::infinity();
  double best_res = res;
  int stalled = 0;
  int iter = 0;
  while (iter < opts.max_outer_iter) {
    ++iter;
#pragma omp parallel for schedule(static) if (opts.parallel)
    for (int x = 0; x < nx; ++x) {
      auto g = [&](double t) {
        double s = t;
        for (int y = 0; y < ny; ++y) s += family.value(theta, x, y, t, b[y]);
        return s - n[x];
      };
      auto gd = [&](double t) {
        double s = t, ds = 1.0;
        for (int y = 0; y < ny; ++y) {
          double da, db;
          family.grad_unmatched(theta, x, y, t, b[y], da, db);
          s += family.value(theta, x, y, t, b[y]);
          ds += da;
        }
        return std::make_pair(s - n[x], ds);
      };
      a[x] = solve_scalar(g, gd, n[x], inner_tol);
    }
#pragma omp parallel for schedule(static) if (opts.parallel)
    for (int y = 0; y < ny; ++y) {
      auto g = [&](double t) {
        double s = t;
        for (int x = 0; x < nx; ++x) s += family.value(theta, x, y, a[x], t);
        return s - m[y];
      };
      auto gd = [&](double t) {
        double s = t, ds = 1.0;
        for (int x = 0; x < nx; ++x) {
          double da, db;
          family.grad_unmatched(theta, x, y, a[x], t, da, db);
          s += family.value(theta, x, y, a[x], t);
          ds += db;
        }
        return std::make_pair(s - m[y], ds);
      };
      b_next[y] = solve_scalar(g, gd, m[y], inner_tol);
    }
    const double move = (b_next - b).cwiseAbs().maxCoeff();
    b = b_next;
    if (move < opts.tol) {
      res = scale * residual_sup(family, theta, n, m, a, b);
      if (res <= opts.tol) {
        converged = true;
        break;
      }
      // Movement has converged but the residual floor sits above tol; stop
      // once further sweeps no longer improve it.
      if (res < 0.999 * best_res) {
        best_res = res;
        stalled = 0;
      } else if (++stalled >= 10) {
        break;
      }
    }
  }
  if (!converged && !std::isfinite(res))
    res = scale * residual_sup(family, theta, n, m, a, b);
  out.matching = assemble_matching(family, theta, a, b, scale);
  out.outer_iterations = iter;
  out.residual_sup_norm = res;
  out.converged = converged;
  return out;
}

EquilibriumSolution solve_newton(const MatchingFamily& family, const Vec& theta,
                                 const Market& market, const SolverOptions& opts,
                                 const Vec* warm) {
  check_market(family, market);
  opts.validate();
  const int nx = market.nx(), ny = market.ny();
  const double scale = working_scale(family, market);
  const Vec n = market.n / scale, m = market.m / scale;

  Vec mu(nx + ny);
  if (warm) {
    mu = *warm / scale;
  } else {
    mu.head(nx) = n;
    mu.tail(ny) = m;
  }

  Market wm(market.space, n, m);
  Vec r = residuals(family, theta, wm, mu.head(nx), mu.tail(ny));
  double rnorm = r.cwiseAbs().maxCoeff();

  EquilibriumSolution out;
  bool converged = false;
  int iter = 0;
  while (iter < opts.max_outer_iter) {
    ++iter;
    const Mat delta = system_jacobian(family, theta, mu.head(nx), mu.tail(ny));
    // Jsigma delta_step = -sigma with sigma = -r, i.e. Delta step = r.
    Vec step = Eigen::PartialPivLU<Mat>(delta).solve(r);
    if (!step.allFinite()) throw SolverError("singular system Jacobian in Newton solve");

    double s = 1.0;
    bool accepted = false;
    Vec cand;
    double cand_rnorm = 0.0;
    for (int h = 0; h <= 50; ++h) {
      cand = mu + s * step;
      if ((cand.array() > 0.0).all()) {
        const Vec rc = residuals(family, theta, wm, cand.head(nx), cand.tail(ny));
        cand_rnorm = rc.cwiseAbs().maxCoeff();
        if (cand_rnorm <= rnorm) {
          accepted = true;
          break;
        }
      }
      s *= 0.5;
    }
    if (!accepted) break;  // stalled: report non-convergence with the last iterate

    const double move = (s * step).cwiseAbs().maxCoeff();
    mu = cand;
    r = residuals(family, theta, wm, mu.head(nx), mu.tail(ny));
    rnorm = r.cwiseAbs().maxCoeff();
    if (move < opts.tol && scale * rnorm <= opts.tol) {
      converged = true;
      break;
    }
  }
  out.matching = assemble_matching(family, theta, mu.head(nx), mu.tail(ny), scale);
  out.outer_iterations = iter;
  out.residual_sup_norm = scale * rnorm;
  out.converged = converged;
  return out;
}

EquilibriumSolution solve_equilibrium(const MatchingFamily& family, const Vec& theta,
                                      const Market& market, const SolverOptions& opts) {
  return opts.method == SolveMethod::kNewton ? solve_newton(family, theta, market, opts)
                                             : solve_ipfp(family, theta, market, opts);
}

}  // namespace meq
