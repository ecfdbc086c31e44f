#include "meq/estimation.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>
#include <limits>

namespace meq {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

ObservedData ObservedData::from_matching(TypeSpace space, Matching matching) {
  if (matching.nx() != space.nx() || matching.ny() != space.ny())
    throw ConfigError("matching does not match the type space");
  ObservedData out;
  Vec n(matching.nx()), m(matching.ny());
  for (int x = 0; x < matching.nx(); ++x) n[x] = matching.mu_x0[x] + matching.mu.row(x).sum();
  for (int y = 0; y < matching.ny(); ++y) m[y] = matching.mu_0y[y] + matching.mu.col(y).sum();
  out.market = Market(std::move(space), std::move(n), std::move(m));
  auto [pi, nh] = normalize_to_frequencies(matching);
  out.pi = std::move(pi);
  out.household_count = nh;
  out.matching = std::move(matching);
  return out;
}

HouseholdFrequencies predicted_frequencies(const MatchingFamily& family, const Vec& theta,
                                           const Market& market, const SolverOptions& opts) {
  EquilibriumSolution sol = solve_ipfp(family, theta, market, opts);
  if (!sol.converged)
    throw SolverError("equilibrium did not converge while computing predicted frequencies");
  return normalize_to_frequencies(sol.matching).first;
}

double log_likelihood(const ObservedData& observed, const HouseholdFrequencies& pi) {
  const Matching& mu = observed.matching;
  if (mu.nx() != pi.nx() || mu.ny() != pi.ny())
    throw ConfigError("observed matching and frequencies have different shapes");
  double ll = 0.0;
  auto add = [&ll](double weight, double p) {
    if (weight <= 0.0) return;
    if (!(p > 0.0)) {
      ll = kNegInf;
      return;
    }
    ll += weight * std::log(p);
  };
  for (int x = 0; x < mu.nx() && ll > kNegInf; ++x)
    for (int y = 0; y < mu.ny(); ++y) add(mu.mu(x, y), pi.pi_xy(x, y));
  for (int x = 0; x < mu.nx() && ll > kNegInf; ++x) add(mu.mu_x0[x], pi.pi_x0[x]);
  for (int y = 0; y < mu.ny() && ll > kNegInf; ++y) add(mu.mu_0y[y], pi.pi_0y[y]);
  return ll;
}

namespace {

// Gradient of the raw log-likelihood at a solved equilibrium. Per theta
// component: Delta (d mu_x0, d mu_0y) = (c, d) with c_x = -sum_y dM/dtheta,
// then d mu_xy chains through the unmatched-mass partials.
Vec gradient_at_solution(const MatchingFamily& family, const Vec& theta,
                         const ObservedData& observed, const EquilibriumSolution& sol,
                         bool parallel) {
  const int nx = family.nx(), ny = family.ny(), kk = family.theta_dim();
  if (kk == 0) return Vec();
  const Vec& a = sol.matching.mu_x0;
  const Vec& b = sol.matching.mu_0y;

  Mat c = Mat::Zero(nx + ny, kk);
  {
    CellDerivatives cell;
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y) {
        family.eval_cell(theta, x, y, a[x], b[y], 1, cell);
        c.row(x) -= cell.dtheta;
        c.row(nx + y) -= cell.dtheta;
      }
  }
  const Mat delta = system_jacobian(family, theta, a, b);
  const Mat dab = Eigen::PartialPivLU<Mat>(delta).solve(c);  // (nx+ny) x K

  const double nh_hat = observed.household_count;
  const double nh = sol.matching.total();
  const Matching& muhat = observed.matching;

  Vec grad = Vec::Zero(kk);
  Vec ndot = Vec::Zero(kk);
  // couples
#pragma omp parallel if (parallel)
  {
    Vec grad_loc = Vec::Zero(kk), ndot_loc = Vec::Zero(kk);
    CellDerivatives cell;
#pragma omp for schedule(static)
    for (int x = 0; x < nx; ++x) {
      for (int y = 0; y < ny; ++y) {
        family.eval_cell(theta, x, y, a[x], b[y], 1, cell);
        const Vec dmu = cell.da * dab.row(x).transpose() +
                        cell.db * dab.row(nx + y).transpose() + cell.dtheta;
        ndot_loc += dmu;
        const double w = muhat.mu(x, y);
        if (w > 0.0 && cell.value > 0.0) grad_loc += (w / cell.value) * dmu;
      }
    }
#pragma omp critical
    {
      grad += grad_loc;
      ndot += ndot_loc;
    }
  }
  // singles
  for (int x = 0; x < nx; ++x) {
    ndot += dab.row(x).transpose();
    if (muhat.mu_x0[x] > 0.0) grad += (muhat.mu_x0[x] / a[x]) * dab.row(x).transpose();
  }
  for (int y = 0; y < ny; ++y) {
    ndot += dab.row(nx + y).transpose();
    if (muhat.mu_0y[y] > 0.0) grad += (muhat.mu_0y[y] / b[y]) * dab.row(nx + y).transpose();
  }
  grad -= (nh_hat / nh) * ndot;
  return grad;
}

}  // namespace

Vec loglik_gradient(const MatchingFamily& family, const Vec& theta, const ObservedData& observed,
                    const SolverOptions& opts) {
  EquilibriumSolution sol = solve_ipfp(family, theta, observed.market, opts);
  if (!sol.converged)
    throw SolverError("equilibrium did not converge while computing the likelihood gradient");
  return gradient_at_solution(family, theta, observed, sol, opts.parallel);
}

// ---------------------------------------------------------------------------
// Nested maximum likelihood: BFGS with strong Wolfe line search on the
// frequency-scale log-likelihood.

namespace {

struct NestedObjective {
  const MatchingFamily& family;
  const ObservedData& observed;
  SolverOptions solver;
  Vec warm_b;  // last mu_0y, reused as the IPFP starting point

  // Returns (negative mean log-likelihood, its gradient); +inf when the
  // equilibrium fails or theta leaves the family domain.
  std::pair<double, Vec> operator()(const Vec& theta) {
    const double nh = observed.household_count;
    try {
      const Vec* warm = warm_b.size() > 0 ? &warm_b : nullptr;
      EquilibriumSolution sol = solve_ipfp(family, theta, observed.market, solver, warm);
      if (!sol.converged) return {std::numeric_limits<double>::infinity(), Vec()};
      warm_b = sol.matching.mu_0y;
      auto [pi, total] = normalize_to_frequencies(sol.matching);
      (void)total;
      const double ll = log_likelihood(observed, pi);
      if (!std::isfinite(ll)) return {std::numeric_limits<double>::infinity(), Vec()};
      Vec g = gradient_at_solution(family, theta, observed, sol, solver.parallel);
      return {-ll / nh, -g / nh};
    } catch (const DomainError&) {
      return {std::numeric_limits<double>::infinity(), Vec()};
    } catch (const SolverError&) {
      return {std::numeric_limits<double>::infinity(), Vec()};
    }
  }
};

struct LineSearchResult {
  double alpha = 0.0;
  double f = 0.0;
  Vec g;
  bool ok = false;
};

// Strong Wolfe line search (bracket and zoom), c1 = 1e-4, c2 = 0.9.
template <typename F>
LineSearchResult wolfe_search(F& obj, const Vec& x, const Vec& p, double f0, const Vec& g0) {
  constexpr double c1 = 1e-4, c2 = 0.9;
  const double d0 = g0.dot(p);
  LineSearchResult res;
  if (d0 >= 0.0) return res;

  struct Trial {
    double alpha, f, d;
    Vec g;
  };
  auto eval = [&](double alpha) -> Trial {
    auto [f, g] = obj(x + alpha * p);
    const double d = g.size() ? g.dot(p) : std::numeric_limits<double>::quiet_NaN();
    return {alpha, f, d, std::move(g)};
  };
  auto accept = [&](const Trial& t) {
    res.alpha = t.alpha;
    res.f = t.f;
    res.g = t.g;
    res.ok = true;
  };

  auto zoom = [&](Trial lo, Trial hi) {
    for (int i = 0; i < 40; ++i) {
      Trial t = eval(0.5 * (lo.alpha + hi.alpha));
      if (!std::isfinite(t.f) || t.f > f0 + c1 * t.alpha * d0 || t.f >= lo.f) {
        hi = std::move(t);
      } else {
        if (std::abs(t.d) <= -c2 * d0) {
          accept(t);
          return;
        }
        if (t.d * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = std::move(t);
      }
      if (std::abs(hi.alpha - lo.alpha) < 1e-14 * std::max(1.0, std::abs(lo.alpha))) break;
    }
    if (std::isfinite(lo.f) && lo.f < f0 && lo.g.size()) accept(lo);
  };

  Trial prev{0.0, f0, d0, g0};
  double alpha = 1.0;
  constexpr double alpha_max = 1e3;
  for (int i = 0; i < 25; ++i) {
    Trial t = eval(alpha);
    if (!std::isfinite(t.f) || t.f > f0 + c1 * alpha * d0 || (i > 0 && t.f >= prev.f)) {
      zoom(std::move(prev), std::move(t));
      return res;
    }
    if (std::abs(t.d) <= -c2 * d0) {
      accept(t);
      return res;
    }
    if (t.d >= 0.0) {
      zoom(std::move(t), std::move(prev));
      return res;
    }
    if (alpha >= alpha_max) break;
    prev = std::move(t);
    alpha = std::min(2.0 * alpha, alpha_max);
  }
  return res;
}

}  // namespace

EstimationResult fit_nested(const MatchingFamily& family, const ObservedData& observed,
                            const Vec& theta_init, const FitOptions& opts) {
  if (theta_init.size() != family.theta_dim())
    throw ConfigError("theta_init has the wrong dimension");
  // The gradient is only as accurate as the inner equilibrium, so the fit
  // solves tighter than the polishing threshold it chases. The requirement
  // lives on the frequency scale; converting to the raw residual bound keeps
  // it reachable for markets measured in large masses.
  const double mass_scale = std::max(1.0, observed.market.n.sum() + observed.market.m.sum());
  SolverOptions inner = opts.solver;
  inner.tol = std::min(inner.tol, mass_scale * 1e-2 * opts.effective_grad_stop());
  inner.inner_tol = 0.0;
  NestedObjective obj{family, observed, inner, Vec()};

  Vec x = theta_init;
  auto [f, g] = obj(x);
  EstimationResult out;
  out.theta_hat = ParamVector(x, family.param_names());
  if (!std::isfinite(f)) {
    out.loglik = kNegInf;
    out.gradient_norm = std::numeric_limits<double>::infinity();
    return out;
  }

  const int k = family.theta_dim();
  const double stop_tol = opts.effective_grad_stop();
  Mat h = Mat::Identity(k, k);
  int it = 0;
  bool first_update = true;
  while (it < opts.max_iter) {
    if (g.cwiseAbs().maxCoeff() <= stop_tol) break;
    Vec p = -(h * g);
    if (p.dot(g) >= 0.0) {
      h = Mat::Identity(k, k);
      p = -g;
    }
    LineSearchResult ls = wolfe_search(obj, x, p, f, g);
    ++it;
    if (!ls.ok) {
      // terminal phase: objective differences sit at floating-point
      // resolution, so accept on gradient-norm decrease instead
      const double gn = g.cwiseAbs().maxCoeff();
      double s = 1.0;
      for (int half = 0; half < 20 && !ls.ok; ++half, s *= 0.5) {
        auto [fc, gc] = obj(x + s * p);
        if (std::isfinite(fc) && gc.size() > 0 && gc.cwiseAbs().maxCoeff() < gn) {
          ls.alpha = s;
          ls.f = fc;
          ls.g = gc;
          ls.ok = true;
        }
      }
      if (!ls.ok) break;
    }
    const Vec s = ls.alpha * p;
    const Vec yv = ls.g - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      if (first_update) {
        h *= sy / yv.squaredNorm();
        first_update = false;
      }
      const double rho = 1.0 / sy;
      const Vec hy = h * yv;
      h -= rho * (hy * s.transpose() + s * hy.transpose());
      h += (rho * rho * yv.dot(hy) + rho) * (s * s.transpose());
    }
    x += s;
    f = ls.f;
    g = ls.g;
  }

  out.theta_hat = ParamVector(x, family.param_names());
  out.loglik = -f * observed.household_count;
  out.gradient_norm = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
  out.iterations = it;
  out.converged = out.gradient_norm <= opts.grad_tol;
  return out;
}

// ---------------------------------------------------------------------------
// MPEC: Newton on Z(theta, u, v, lambda) with the analytic blockwise Jacobian.

namespace {

struct MpecWorkspace {
  // all on the working (possibly frequency-rescaled) scale
  Vec zeta_n, zeta_m;        // margins
  Mat pihat_xy;              // observed couple weights
  Vec pihat_x0, pihat_0y;
  double scale = 1.0;
};

struct MpecSystem {
  Vec z;      // (Z1; Z2; Z3)
  Mat jz;     // full Jacobian
  double loglik = 0.0;  // mean log-likelihood at (theta, u, v)
  bool finite = false;
};

// Assembles Z and (optionally) JZ at the point (theta, u, v, lambda).
MpecSystem mpec_assemble(const MatchingFamily& family, const MpecWorkspace& w, const Vec& theta,
                         const Vec& u, const Vec& v, const Vec& lambda) {
  const int nx = family.nx(), ny = family.ny(), kk = family.theta_dim();
  const int pp = nx + ny, tt = kk + pp;  // w = (theta, u, v); z adds lambda
  MpecSystem sys;

  const Vec a = (-u.array()).exp().matrix();
  const Vec b = (-v.array()).exp().matrix();
  if (!a.allFinite() || !b.allFinite() || (a.array() <= 0.0).any() || (b.array() <= 0.0).any())
    return sys;

  double sum_f = 0.0;
  Vec gx = Vec::Zero(nx), gy = Vec::Zero(ny);        // row/col sums of F
  Vec nu = Vec::Zero(nx), nv = Vec::Zero(ny);        // dN/du_x, dN/dv_y
  Vec ntheta = Vec::Zero(kk);
  Vec lu = Vec::Zero(nx), lv = Vec::Zero(ny);        // d l / du, dv (log F part)
  Vec ltheta = Vec::Zero(kk);
  double ll_cells = 0.0;

  Mat hww;          // Hessian of l + lambda G over (theta, u, v)
  Mat dg;           // dG/dw, pp x tt
  Mat ntheta_u, ntheta_v;  // d2N/dtheta du_x, d2N/dtheta dv_y
  Mat ntheta2;
  Vec nuu = Vec::Zero(nx), nvv = Vec::Zero(ny);
  Mat nuv;
  {
    hww = Mat::Zero(tt, tt);
    dg = Mat::Zero(pp, tt);
    ntheta2 = Mat::Zero(kk, kk);
    ntheta_u = Mat::Zero(kk, nx);
    ntheta_v = Mat::Zero(kk, ny);
    nuv = Mat::Zero(nx, ny);
  }

  CellDerivatives cell;
  Vec ftheta_u, ftheta_v;
  for (int x = 0; x < nx; ++x) {
    for (int y = 0; y < ny; ++y) {
      family.eval_cell(theta, x, y, a[x], b[y], 2, cell);
      const double f = cell.value;
      const double fu = -a[x] * cell.da;
      const double fv = -b[y] * cell.db;
      sum_f += f;
      gx[x] += f;
      gy[y] += f;
      nu[x] += fu;
      nv[y] += fv;
      ntheta += cell.dtheta;

      const double what = w.pihat_xy(x, y);
      if (what > 0.0) {
        if (!(f > 0.0)) return sys;  // positively observed but prohibited
        ll_cells += what * std::log(f);
        lu[x] += what * fu / f;
        lv[y] += what * fv / f;
        ltheta += (what / f) * cell.dtheta;
      }

      {
        const double fuu = a[x] * cell.da + a[x] * a[x] * cell.daa;
        const double fuv = a[x] * b[y] * cell.dab;
        const double fvv = b[y] * cell.db + b[y] * b[y] * cell.dbb;
        ftheta_u = -a[x] * cell.dtheta_da;
        ftheta_v = -b[y] * cell.dtheta_db;

        nuu[x] += fuu;
        nvv[y] += fvv;
        nuv(x, y) = fuv;
        ntheta2 += cell.dtheta2;
        ntheta_u.col(x) += ftheta_u;
        ntheta_v.col(y) += ftheta_v;

        const int iu = kk + x, iv = kk + nx + y;
        // second derivatives of l from the pihat log F terms
        if (what > 0.0 && f > 0.0) {
          const double r = what / f, r2 = what / (f * f);
          hww.block(0, 0, kk, kk) += r * cell.dtheta2 - r2 * (cell.dtheta * cell.dtheta.transpose());
          hww.block(0, iu, kk, 1) += r * ftheta_u - r2 * fu * cell.dtheta;
          hww.block(0, iv, kk, 1) += r * ftheta_v - r2 * fv * cell.dtheta;
          hww(iu, iu) += r * fuu - r2 * fu * fu;
          hww(iu, iv) += r * fuv - r2 * fu * fv;
          hww(iv, iv) += r * fvv - r2 * fv * fv;
        }
        // lambda-weighted constraint curvature: cell enters G_x and G_{nx+y}
        const double wl = lambda[x] + lambda[nx + y];
        if (wl != 0.0) {
          hww.block(0, 0, kk, kk) += wl * cell.dtheta2;
          hww.block(0, iu, kk, 1) += wl * ftheta_u;
          hww.block(0, iv, kk, 1) += wl * ftheta_v;
          hww(iu, iu) += wl * fuu;
          hww(iu, iv) += wl * fuv;
          hww(iv, iv) += wl * fvv;
        }
        // dG rows: x-row gets (theta block, Nu on u_x, Fv on v_y)
        dg.block(x, 0, 1, kk) += cell.dtheta.transpose();
        dg(x, kk + nx + y) = fv;
        dg.block(nx + y, 0, 1, kk) += cell.dtheta.transpose();
        dg(nx + y, kk + x) = fu;
        // second derivatives of N handled below via accumulators
      }
    }
  }

  const double n_total = sum_f + a.sum() + b.sum();
  if (!(n_total > 0.0) || !std::isfinite(n_total)) return sys;
  for (int x = 0; x < nx; ++x) nu[x] -= a[x];
  for (int y = 0; y < ny; ++y) nv[y] -= b[y];

  // constraint values and the remaining dG entries
  Vec gval(pp);
  for (int x = 0; x < nx; ++x) gval[x] = a[x] + gx[x] - w.zeta_n[x];
  for (int y = 0; y < ny; ++y) gval[nx + y] = b[y] + gy[y] - w.zeta_m[y];

  // mean log-likelihood and its first derivatives
  double ll = ll_cells - std::log(n_total);
  Vec dl_theta = ltheta - ntheta / n_total;
  Vec dl_u(nx), dl_v(ny);
  for (int x = 0; x < nx; ++x) {
    ll -= w.pihat_x0[x] * u[x];
    dl_u[x] = lu[x] - w.pihat_x0[x] - nu[x] / n_total;
  }
  for (int y = 0; y < ny; ++y) {
    ll -= w.pihat_0y[y] * v[y];
    dl_v[y] = lv[y] - w.pihat_0y[y] - nv[y] / n_total;
  }

  sys.loglik = ll;
  sys.z.resize(kk + pp + pp);
  {
    for (int x = 0; x < nx; ++x) dg(x, kk + x) = nu[x];
    for (int y = 0; y < ny; ++y) dg(nx + y, kk + nx + y) = nv[y];

    // -log N block: grad N over w, then -(H_N / N - grad grad' / N^2)
    Vec gn(tt);
    gn.head(kk) = ntheta;
    gn.segment(kk, nx) = nu;
    gn.tail(ny) = nv;
    hww += (gn * gn.transpose()) / (n_total * n_total);
    hww.block(0, 0, kk, kk) -= ntheta2 / n_total;
    for (int x = 0; x < nx; ++x) {
      hww(kk + x, kk + x) -= (nuu[x] + a[x]) / n_total;
      hww.block(0, kk + x, kk, 1) -= ntheta_u.col(x) / n_total;
    }
    for (int y = 0; y < ny; ++y) {
      hww(kk + nx + y, kk + nx + y) -= (nvv[y] + b[y]) / n_total;
      hww.block(0, kk + nx + y, kk, 1) -= ntheta_v.col(y) / n_total;
    }
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y) hww(kk + x, kk + nx + y) -= nuv(x, y) / n_total;
    // singles curvature of G: d2G_x/du_x^2 has the exp(-u) term
    for (int x = 0; x < nx; ++x) hww(kk + x, kk + x) += lambda[x] * a[x];
    for (int y = 0; y < ny; ++y) hww(kk + nx + y, kk + nx + y) += lambda[nx + y] * b[y];

    // symmetrize the upper-triangular accumulation
    for (int i = 0; i < tt; ++i)
      for (int j = 0; j < i; ++j) hww(i, j) = hww(j, i);

    sys.jz = Mat::Zero(kk + pp + pp, kk + pp + pp);
    sys.jz.block(0, 0, tt, tt) = hww;
    sys.jz.block(0, tt, tt, pp) = dg.transpose();
    sys.jz.block(tt, 0, pp, tt) = dg;

    sys.z.head(kk) = dl_theta + dg.block(0, 0, pp, kk).transpose() * lambda;
    sys.z.segment(kk, nx) = dl_u + dg.block(0, kk, pp, nx).transpose() * lambda;
    sys.z.segment(kk + nx, ny) = dl_v + dg.block(0, kk + nx, pp, ny).transpose() * lambda;
  }
  sys.z.tail(pp) = gval;
  sys.finite = sys.z.allFinite();
  return sys;
}

}  // namespace

EstimationResult fit_mpec(const MatchingFamily& family, const ObservedData& observed,
                          const Vec& theta_init, const FitOptions& opts) {
  if (theta_init.size() != family.theta_dim())
    throw ConfigError("theta_init has the wrong dimension");
  const int nx = family.nx(), ny = family.ny(), kk = family.theta_dim();
  const int pp = nx + ny;

  MpecWorkspace w;
  w.scale = family.descriptor().homogeneous_degree_one
                ? observed.market.n.sum() + observed.market.m.sum()
                : 1.0;
  w.zeta_n = observed.market.n / w.scale;
  w.zeta_m = observed.market.m / w.scale;
  const double nh = observed.household_count;
  w.pihat_xy = observed.matching.mu / nh;
  w.pihat_x0 = observed.matching.mu_x0 / nh;
  w.pihat_0y = observed.matching.mu_0y / nh;

  EstimationResult out;
  out.theta_hat = ParamVector(theta_init, family.param_names());
  out.loglik = kNegInf;
  out.gradient_norm = std::numeric_limits<double>::infinity();

  // start at the equilibrium for theta_init with the multiplier solving Z2 = 0
  Vec theta = theta_init, u(nx), v(ny), lambda = Vec::Zero(pp);
  try {
    Market wm(observed.market.space, w.zeta_n, w.zeta_m);
    EquilibriumSolution sol = solve_ipfp(family, theta, wm, opts.solver);
    if (!sol.converged) return out;
    u = -sol.matching.mu_x0.array().log();
    v = -sol.matching.mu_0y.array().log();
  } catch (const Error&) {
    return out;
  }
  {
    MpecSystem sys = mpec_assemble(family, w, theta, u, v, lambda);
    if (!sys.finite) return out;
    // lambda solving dl/d(u,v) + (dG/d(u,v))' lambda = 0
    const Mat dguv = sys.jz.block(kk + pp, kk, pp, pp);
    const Vec rhs = -sys.z.segment(kk, pp);
    lambda = Eigen::PartialPivLU<Mat>(dguv.transpose()).solve(rhs);
    if (!lambda.allFinite()) lambda.setZero();
  }

  const double ztol = std::min(1e-10, 1e-4 * opts.grad_tol);
  int it = 0;
  bool converged = false;
  MpecSystem sys = mpec_assemble(family, w, theta, u, v, lambda);
  if (!sys.finite) return out;
  double znorm = sys.z.cwiseAbs().maxCoeff();
  // the embedded equilibrium must satisfy the raw-scale accounting to tol
  auto at_root = [&] {
    return znorm <= ztol &&
           w.scale * sys.z.tail(pp).cwiseAbs().maxCoeff() <= opts.solver.tol;
  };
  while (it < opts.max_iter) {
    if (at_root()) {
      converged = true;
      break;
    }
    ++it;
    Vec step = Eigen::PartialPivLU<Mat>(sys.jz).solve(-sys.z);
    if (!step.allFinite()) break;

    double s = 1.0;
    bool accepted = false;
    for (int h = 0; h <= 50; ++h, s *= 0.5) {
      const Vec theta_c = theta + s * step.head(kk);
      const Vec u_c = u + s * step.segment(kk, nx);
      const Vec v_c = v + s * step.segment(kk + nx, ny);
      const Vec lambda_c = lambda + s * step.tail(pp);
      // keep the embedded masses inside (0, margin]
      bool in_bounds = true;
      for (int x = 0; x < nx && in_bounds; ++x)
        if (std::exp(-u_c[x]) > w.zeta_n[x] * (1.0 + 1e-12)) in_bounds = false;
      for (int y = 0; y < ny && in_bounds; ++y)
        if (std::exp(-v_c[y]) > w.zeta_m[y] * (1.0 + 1e-12)) in_bounds = false;
      if (!in_bounds) continue;
      MpecSystem cand;
      try {
        cand = mpec_assemble(family, w, theta_c, u_c, v_c, lambda_c);
      } catch (const Error&) {
        continue;
      }
      if (!cand.finite) continue;
      const double cn = cand.z.cwiseAbs().maxCoeff();
      if (cn <= (1.0 - 1e-4 * s) * znorm) {
        theta = theta_c;
        u = u_c;
        v = v_c;
        lambda = lambda_c;
        sys = std::move(cand);
        znorm = cn;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }

  out.theta_hat = ParamVector(theta, family.param_names());
  out.loglik = sys.loglik * nh;
  out.gradient_norm = znorm;
  out.iterations = it;
  out.converged = converged;
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form covariance for degree-1 homogeneous families.

std::pair<Mat, Vec> covariance_homogeneous(const MatchingFamily& family, const Vec& theta_hat,
                                           const ObservedData& observed,
                                           const SolverOptions& opts) {
  if (!family.descriptor().homogeneous_degree_one)
    throw CapabilityError(family.descriptor().name +
                          ": confidence intervals require a degree-1 homogeneous family");
  const int nx = family.nx(), ny = family.ny(), kk = family.theta_dim();
  const int pp = nx + ny, hh = nx * ny + nx + ny;
  if (kk == 0) throw ConfigError("family has no free parameters");

  // frequency-scale margins and equilibrium
  const Vec zeta = aggregate_margins(observed.pi);
  Market fm(observed.market.space, zeta.head(nx), zeta.tail(ny));
  EquilibriumSolution sol = solve_ipfp(family, theta_hat, fm, opts);
  if (!sol.converged) throw SolverError("equilibrium did not converge at theta_hat");
  const Vec& a = sol.matching.mu_x0;
  const Vec& b = sol.matching.mu_0y;
  const double n_total = sol.matching.total();

  // household-stacked predicted frequencies
  const Vec pi_vec = household_vector(sol.matching) / n_total;

  const Mat delta = system_jacobian(family, theta_hat, a, b);
  Eigen::PartialPivLU<Mat> delta_lu(delta);

  // d(mu_x0, mu_0y)/dtheta
  Mat c = Mat::Zero(pp, kk);
  Mat dmu = Mat::Zero(hh, kk);  // couples then singles, derivative of raw masses
  Mat df = Mat::Zero(hh, pp);   // d full-vector map / d (pi_x0, pi_0y)
  {
    CellDerivatives cell;
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y) {
        family.eval_cell(theta_hat, x, y, a[x], b[y], 1, cell);
        c.row(x) -= cell.dtheta;
        c.row(nx + y) -= cell.dtheta;
        df(x * ny + y, x) = cell.da;
        df(x * ny + y, nx + y) = cell.db;
      }
    for (int x = 0; x < nx; ++x) df(nx * ny + x, x) = 1.0;
    for (int y = 0; y < ny; ++y) df(nx * ny + nx + y, nx + y) = 1.0;
  }
  const Mat dab = delta_lu.solve(c);
  {
    CellDerivatives cell;
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y) {
        family.eval_cell(theta_hat, x, y, a[x], b[y], 1, cell);
        dmu.row(x * ny + y) = cell.da * dab.row(x) + cell.db * dab.row(nx + y) +
                              cell.dtheta.transpose();
      }
    dmu.block(nx * ny, 0, nx, kk) = dab.topRows(nx);
    dmu.block(nx * ny + nx, 0, ny, kk) = dab.bottomRows(ny);
  }

  // D_theta log Pi, rows zeroed on prohibited cells
  const Vec ndot = dmu.colwise().sum().transpose();
  Mat dlog_theta = Mat::Zero(hh, kk);
  for (int i = 0; i < hh; ++i) {
    if (pi_vec[i] > 0.0)
      dlog_theta.row(i) =
          dmu.row(i) / (pi_vec[i] * n_total) - ndot.transpose() / n_total;
  }

  // D_zeta Pi = (D_pi0 Pi^theta) Delta^{-1}, with
  // D_pi0 Pi^theta = (DF - Pi * colsum(DF)) / N
  const Eigen::RowVectorXd df_colsum = df.colwise().sum();
  const Mat dpi0 = (df - pi_vec * df_colsum) / n_total;
  // right-multiplication by Delta^{-1}: solve Delta' X' = dpi0'
  Eigen::PartialPivLU<Mat> delta_t_lu(delta.transpose());
  const Mat dzeta_pi = delta_t_lu.solve(dpi0.transpose()).transpose();  // hh x pp

  // Fisher blocks; prohibited cells carry zero weight
  Mat jinfo = Mat::Zero(kk, kk);
  Mat k12 = Mat::Zero(kk, pp);
  for (int i = 0; i < hh; ++i) {
    if (pi_vec[i] <= 0.0) continue;
    jinfo += pi_vec[i] * dlog_theta.row(i).transpose() * dlog_theta.row(i);
    // dlog_zeta row = dzeta_pi row / pi
    k12 += dlog_theta.row(i).transpose() * dzeta_pi.row(i);
  }

  Eigen::LDLT<Mat> ldlt(jinfo);
  {
    const Vec d = ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    if (!(dmax > 0.0) || d.minCoeff() < 1e-12 * dmax) {
      Eigen::SelfAdjointEigenSolver<Mat> es(jinfo);
      int imin;
      es.eigenvalues().minCoeff(&imin);
      int jmax;
      es.eigenvectors().col(imin).cwiseAbs().maxCoeff(&jmax);
      throw RankDeficiencyError("information matrix is rank deficient along " +
                                family.param_names()[jmax]);
    }
  }
  const Mat jinv = ldlt.solve(Mat::Identity(kk, kk));

  // A V_pi A' = [diag(zeta_x), Pi_xy; Pi_yx, diag(zeta_y)] - zeta_model zeta_model'
  Mat avpa = Mat::Zero(pp, pp);
  Vec zeta_model(pp);
  for (int x = 0; x < nx; ++x) {
    double s = pi_vec[nx * ny + x];
    for (int y = 0; y < ny; ++y) s += pi_vec[x * ny + y];
    zeta_model[x] = s;
  }
  for (int y = 0; y < ny; ++y) {
    double s = pi_vec[nx * ny + nx + y];
    for (int x = 0; x < nx; ++x) s += pi_vec[x * ny + y];
    zeta_model[nx + y] = s;
  }
  for (int x = 0; x < nx; ++x) avpa(x, x) = zeta_model[x];
  for (int y = 0; y < ny; ++y) avpa(nx + y, nx + y) = zeta_model[nx + y];
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y) {
      avpa(x, nx + y) = pi_vec[x * ny + y];
      avpa(nx + y, x) = pi_vec[x * ny + y];
    }
  avpa -= zeta_model * zeta_model.transpose();

  Mat v = jinv + jinv * k12 * avpa * k12.transpose() * jinv;
  v = 0.5 * (v + v.transpose());

  Vec se(kk);
  for (int k = 0; k < kk; ++k)
    se[k] = std::sqrt(std::max(v(k, k), 0.0) / observed.household_count);
  return {std::move(v), std::move(se)};
}

SurplusTable surplus_nonparametric_cs(const ObservedData& observed) {
  const Matching& mu = observed.matching;
  const int nx = mu.nx(), ny = mu.ny();
  for (int x = 0; x < nx; ++x)
    if (!(mu.mu_x0[x] > 0.0))
      throw DomainError("inversion undefined: zero mass of single men of type " +
                        observed.market.space.x_labels()[x]);
  for (int y = 0; y < ny; ++y)
    if (!(mu.mu_0y[y] > 0.0))
      throw DomainError("inversion undefined: zero mass of single women of type " +
                        observed.market.space.y_labels()[y]);
  SurplusTable out;
  out.phi = Mat::Zero(nx, ny);
  out.prohibited =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(nx, ny, false);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y) {
      if (mu.mu(x, y) > 0.0) {
        out.phi(x, y) =
            2.0 * std::log(mu.mu(x, y)) - std::log(mu.mu_x0[x]) - std::log(mu.mu_0y[y]);
      } else {
        out.prohibited(x, y) = true;
      }
    }
  return out;
}

}  // namespace meq
