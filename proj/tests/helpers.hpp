#pragma once

#include "meq/families.hpp"
#include "meq/rng.hpp"
#include "meq/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace meq::testing {

struct FamilyInstance {
  FamilyPtr family;
  Vec theta;
  std::string name;
};

inline Mat random_table(int nx, int ny, double lo, double hi, Rng& rng) {
  Mat t(nx, ny);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y) t(x, y) = rng.uniform(lo, hi);
  return t;
}

// One randomized instance of each catalogued family.
inline std::vector<FamilyInstance> family_zoo(int nx, int ny, Rng& rng) {
  std::vector<FamilyInstance> zoo;
  {
    auto cs = ChooSiowFamily::free_surplus(nx, ny);
    Vec theta(nx * ny);
    for (int i = 0; i < theta.size(); ++i) theta[i] = rng.uniform(-1.0, 1.0);
    zoo.push_back({cs, theta, "choo-siow"});
  }
  {
    auto fam = std::make_shared<MenzelFamily>(random_table(nx, ny, 0.0, 1.0, rng),
                                              random_table(nx, ny, 0.0, 1.0, rng));
    Vec theta(2);
    theta << rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5);
    zoo.push_back({fam, theta, "menzel"});
  }
  {
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> acc(nx, ny);
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y) acc(x, y) = rng.bernoulli(0.85);
    auto fam = std::make_shared<SearchMatchingFamily>(acc);
    Vec theta(2);
    theta << rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0);
    zoo.push_back({fam, theta, "search"});
  }
  {
    Vec xv(nx), yv(ny);
    for (int x = 0; x < nx; ++x) xv[x] = rng.uniform();
    for (int y = 0; y < ny; ++y) yv[y] = rng.uniform();
    const Mat w = xv * yv.transpose();
    auto fam = std::make_shared<EtuGkwFamily>(random_table(nx, ny, 0.5, 2.0, rng), w, w);
    Vec theta(2);
    theta << rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0);
    zoo.push_back({fam, theta, "etu-gkw"});
  }
  {
    auto fam = std::make_shared<HarmonicMeanFamily>(random_table(nx, ny, -1.0, 1.0, rng),
                                                    random_table(nx, ny, -1.0, 1.0, rng));
    Vec theta(1);
    theta << rng.uniform(0.5, 2.0);
    zoo.push_back({fam, theta, "harmonic-mean"});
  }
  {
    auto fam = std::make_shared<CobbDouglasFamily>(random_table(nx, ny, 0.3, 0.9, rng),
                                                   random_table(nx, ny, 0.3, 0.9, rng));
    Vec theta(nx * ny);
    for (int i = 0; i < theta.size(); ++i) theta[i] = rng.uniform(-1.0, 1.0);
    zoo.push_back({fam, theta, "cobb-douglas"});
  }
  return zoo;
}

inline Market random_market(int nx, int ny, Rng& rng, double lo = 0.5, double hi = 1.5) {
  Vec n(nx), m(ny);
  for (int x = 0; x < nx; ++x) n[x] = rng.uniform(lo, hi);
  for (int y = 0; y < ny; ++y) m[y] = rng.uniform(lo, hi);
  return Market(TypeSpace::indexed(nx, ny), std::move(n), std::move(m));
}

inline double fd_central(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double got, double want) {
  const double scale = std::max({1.0, std::abs(got), std::abs(want)});
  return std::abs(got - want) / scale;
}

}  // namespace meq::testing
