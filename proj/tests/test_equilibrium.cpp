#include "helpers.hpp"
#include "meq/equilibrium.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>

using namespace meq;
using namespace meq::testing;

namespace {
FamilyPtr cs1(double phi) {
  return ChooSiowFamily::fixed_surplus(SurplusTable(Mat::Constant(1, 1, phi)));
}
const Vec kNoTheta;

Market unit_market(int nx, int ny) {
  return Market(TypeSpace::indexed(nx, ny), Vec::Ones(nx), Vec::Ones(ny));
}
}  // namespace

TEST_CASE("residuals") {
  auto cs = cs1(0.0);
  Market mkt = unit_market(1, 1);
  SUBCASE("zero at the known equilibrium") {
    Vec r = residuals(*cs, kNoTheta, mkt, Vec::Constant(1, 0.5), Vec::Constant(1, 0.5));
    CHECK(r[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(r[1] == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("direct arithmetic at (1,1)") {
    Vec r = residuals(*cs, kNoTheta, mkt, Vec::Ones(1), Vec::Ones(1));
    CHECK(r[0] == doctest::Approx(-1.0));
    CHECK(r[1] == doctest::Approx(-1.0));
  }
  SUBCASE("nonpositive masses rejected") {
    CHECK_THROWS_AS(residuals(*cs, kNoTheta, mkt, Vec::Zero(1), Vec::Ones(1)), DomainError);
  }
  SUBCASE("matches the naive double loop on a random 3x4 instance") {
    Rng rng(31);
    auto zoo = family_zoo(3, 4, rng);
    Market m34 = random_market(3, 4, rng);
    for (const auto& inst : zoo) {
      Vec a(3), b(4);
      for (int x = 0; x < 3; ++x) a[x] = rng.uniform(0.1, m34.n[x]);
      for (int y = 0; y < 4; ++y) b[y] = rng.uniform(0.1, m34.m[y]);
      const Vec r = residuals(*inst.family, inst.theta, m34, a, b);
      for (int x = 0; x < 3; ++x) {
        double s = m34.n[x] - a[x];
        for (int y = 0; y < 4; ++y) s -= inst.family->value(inst.theta, x, y, a[x], b[y]);
        CHECK(r[x] == doctest::Approx(s).epsilon(1e-14));
      }
      for (int y = 0; y < 4; ++y) {
        double s = m34.m[y] - b[y];
        for (int x = 0; x < 3; ++x) s -= inst.family->value(inst.theta, x, y, a[x], b[y]);
        CHECK(r[3 + y] == doctest::Approx(s).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("system jacobian") {
  SUBCASE("1x1 choo-siow closed form") {
    auto cs = cs1(0.0);
    Mat d = system_jacobian(*cs, kNoTheta, Vec::Constant(1, 0.25), Vec::Constant(1, 0.25));
    CHECK(d(0, 0) == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(d(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d(1, 1) == doctest::Approx(1.5).epsilon(1e-12));
  }
  SUBCASE("all prohibited gives the identity") {
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> acc =
        Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(2, 2, false);
    SearchMatchingFamily fam(acc);
    Vec theta(2);
    theta << 1.0, 1.0;
    Mat d = system_jacobian(fam, theta, Vec::Ones(2), Vec::Ones(2));
    CHECK((d - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("columnwise strict diagonal dominance at random points") {
    Rng rng(41);
    auto zoo = family_zoo(3, 4, rng);
    for (const auto& inst : zoo) {
      Vec a(3), b(4);
      for (int x = 0; x < 3; ++x) a[x] = rng.uniform(0.05, 2.0);
      for (int y = 0; y < 4; ++y) b[y] = rng.uniform(0.05, 2.0);
      const Mat d = system_jacobian(*inst.family, inst.theta, a, b);
      for (int j = 0; j < d.cols(); ++j) {
        double off = 0.0;
        for (int i = 0; i < d.rows(); ++i)
          if (i != j) off += std::abs(d(i, j));
        CHECK(d(j, j) > off);
      }
    }
  }
}

TEST_CASE("ipfp on closed-form instances") {
  SolverOptions opts;
  SUBCASE("1x1 choo-siow, t + t = 1") {
    auto sol = solve_ipfp(*cs1(0.0), kNoTheta, unit_market(1, 1), opts);
    CHECK(sol.converged);
    CHECK(sol.matching.mu_x0[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(sol.matching.mu_0y[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(sol.matching.mu(0, 0) == doctest::Approx(0.5).epsilon(1e-9));
  }
  SUBCASE("1x1 menzel, t + t^2 = 1 has the golden-ratio root") {
    MenzelFamily fam(Mat::Zero(1, 1), Mat::Zero(1, 1));
    auto sol = solve_ipfp(fam, Vec::Zero(2), unit_market(1, 1), opts);
    CHECK(sol.converged);
    const double t = (std::sqrt(5.0) - 1.0) / 2.0;
    CHECK(sol.matching.mu_x0[0] == doctest::Approx(t).epsilon(1e-9));
    CHECK(sol.matching.mu_0y[0] == doctest::Approx(t).epsilon(1e-9));
    CHECK(sol.matching.mu(0, 0) == doctest::Approx(1.0 - t).epsilon(1e-8));
  }
  SUBCASE("all matches prohibited resolves in one sweep") {
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> acc =
        Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(2, 3, false);
    SearchMatchingFamily fam(acc);
    Vec theta(2);
    theta << 1.0, 1.0;
    Rng rng(3);
    Market mkt = random_market(2, 3, rng);
    auto sol = solve_ipfp(fam, theta, mkt, opts);
    CHECK(sol.converged);
    CHECK(sol.outer_iterations == 1);
    CHECK((sol.matching.mu_x0 - mkt.n).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sol.matching.mu_0y - mkt.m).cwiseAbs().maxCoeff() == 0.0);
    CHECK(sol.matching.mu.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("ipfp feasibility and bounds on random instances") {
  Rng rng(57);
  SolverOptions opts;
  for (int trial = 0; trial < 12; ++trial) {
    const int nx = rng.uniform_int(1, 6), ny = rng.uniform_int(1, 7);
    auto zoo = family_zoo(nx, ny, rng);
    Market mkt = random_market(nx, ny, rng);
    for (const auto& inst : zoo) {
      CAPTURE(inst.name);
      auto sol = solve_ipfp(*inst.family, inst.theta, mkt, opts);
      CHECK(sol.converged);
      CHECK(sol.residual_sup_norm <= opts.tol);
      for (int x = 0; x < nx; ++x) {
        CHECK(sol.matching.mu_x0[x] > 0.0);
        CHECK(sol.matching.mu_x0[x] <= mkt.n[x] * (1.0 + 1e-12));
      }
      for (int y = 0; y < ny; ++y) {
        CHECK(sol.matching.mu_0y[y] > 0.0);
        CHECK(sol.matching.mu_0y[y] <= mkt.m[y] * (1.0 + 1e-12));
      }
    }
  }
}

TEST_CASE("newton agrees with ipfp") {
  SolverOptions opts;
  SUBCASE("1x1 choo-siow") {
    SolverOptions tight;
    tight.tol = 1e-12;
    auto ipfp = solve_ipfp(*cs1(0.0), kNoTheta, unit_market(1, 1), tight);
    auto newton = solve_newton(*cs1(0.0), kNoTheta, unit_market(1, 1), tight);
    CHECK(newton.converged);
    CHECK(std::abs(newton.matching.mu_x0[0] - ipfp.matching.mu_x0[0]) < 1e-10);
  }
  SUBCASE("30x45 ETU benchmark design") {
    Rng rng(77);
    const int nx = 30, ny = 45;
    Vec xv(nx), yv(ny);
    for (int x = 0; x < nx; ++x) xv[x] = rng.uniform();
    for (int y = 0; y < ny; ++y) yv[y] = rng.uniform();
    const Mat w = xv * yv.transpose();
    EtuGkwFamily fam(Mat::Ones(nx, ny), w, w);
    Market mkt = unit_market(nx, ny);
    auto ipfp = solve_ipfp(fam, Vec::Ones(2), mkt, opts);
    auto newton = solve_newton(fam, Vec::Ones(2), mkt, opts);
    CHECK(ipfp.converged);
    CHECK(newton.converged);
    double gap = (ipfp.matching.mu_x0 - newton.matching.mu_x0).cwiseAbs().maxCoeff();
    gap = std::max(gap, (ipfp.matching.mu_0y - newton.matching.mu_0y).cwiseAbs().maxCoeff());
    CHECK(gap < 1e-8);
  }
  SUBCASE("warm start at the ipfp solution converges immediately") {
    Rng rng(78);
    auto zoo = family_zoo(4, 5, rng);
    Market mkt = random_market(4, 5, rng);
    for (const auto& inst : zoo) {
      auto ipfp = solve_ipfp(*inst.family, inst.theta, mkt, opts);
      REQUIRE(ipfp.converged);
      Vec warm(9);
      warm.head(4) = ipfp.matching.mu_x0;
      warm.tail(5) = ipfp.matching.mu_0y;
      auto newton = solve_newton(*inst.family, inst.theta, mkt, opts, &warm);
      CHECK(newton.converged);
      CHECK(newton.outer_iterations <= 2);
    }
  }
}

TEST_CASE("uniqueness: both solvers and both starts agree") {
  Rng rng(91);
  SolverOptions opts;
  for (int trial = 0; trial < 6; ++trial) {
    const int nx = rng.uniform_int(1, 20), ny = rng.uniform_int(1, 30);
    auto zoo = family_zoo(nx, ny, rng);
    Market mkt = random_market(nx, ny, rng);
    for (const auto& inst : zoo) {
      CAPTURE(inst.name);
      auto a = solve_ipfp(*inst.family, inst.theta, mkt, opts);
      auto b = solve_newton(*inst.family, inst.theta, mkt, opts);
      REQUIRE(a.converged);
      REQUIRE(b.converged);
      double gap = (a.matching.mu_x0 - b.matching.mu_x0).cwiseAbs().maxCoeff();
      gap = std::max(gap, (a.matching.mu_0y - b.matching.mu_0y).cwiseAbs().maxCoeff());
      CHECK(gap <= 10.0 * opts.tol);
    }
  }
}

TEST_CASE("inner scalar map is strictly increasing in its own mass") {
  Rng rng(99);
  auto zoo = family_zoo(2, 3, rng);
  for (const auto& inst : zoo) {
    const Vec b = Vec::Constant(3, 0.7);
    double prev = -1.0;
    for (double t : {0.01, 0.1, 0.4, 0.8, 1.0}) {
      double s = t;
      for (int y = 0; y < 3; ++y) s += inst.family->value(inst.theta, 0, y, t, b[y]);
      CHECK(s > prev);
      prev = s;
    }
  }
}

TEST_CASE("determinism: parallel and serial sweeps are bit-identical") {
  Rng rng(111);
  const int nx = 20, ny = 30;
  auto zoo = family_zoo(nx, ny, rng);
  Market mkt = random_market(nx, ny, rng);
  SolverOptions serial;
  SolverOptions parallel;
  parallel.parallel = true;
  for (const auto& inst : zoo) {
    CAPTURE(inst.name);
    auto s = solve_ipfp(*inst.family, inst.theta, mkt, serial);
    auto p = solve_ipfp(*inst.family, inst.theta, mkt, parallel);
    CHECK(s.outer_iterations == p.outer_iterations);
    CHECK(std::memcmp(s.matching.mu_x0.data(), p.matching.mu_x0.data(),
                      sizeof(double) * nx) == 0);
    CHECK(std::memcmp(s.matching.mu_0y.data(), p.matching.mu_0y.data(),
                      sizeof(double) * ny) == 0);
    CHECK(std::memcmp(s.matching.mu.data(), p.matching.mu.data(),
                      sizeof(double) * nx * ny) == 0);
  }
}

TEST_CASE("non-convergence is a report, not an exception") {
  SolverOptions opts;
  opts.max_outer_iter = 1;
  opts.tol = 1e-14;
  Rng rng(121);
  auto zoo = family_zoo(6, 8, rng);
  Market mkt = random_market(6, 8, rng);
  auto sol = solve_ipfp(*zoo[3].family, zoo[3].theta, mkt, opts);  // etu-gkw
  CHECK_FALSE(sol.converged);
  CHECK(sol.matching.mu_x0.size() == 6);
}
