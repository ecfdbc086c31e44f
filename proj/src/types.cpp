#include "meq/types.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace meq {

TypeSpace::TypeSpace(std::vector<std::string> x_labels, std::vector<std::string> y_labels)
    : x_labels_(std::move(x_labels)), y_labels_(std::move(y_labels)) {
  auto index_side = [](const std::vector<std::string>& labels,
                       std::unordered_map<std::string, int>& index, const char* side) {
    for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
      const std::string& lab = labels[i];
      if (lab.empty()) throw ConfigError(std::string("empty ") + side + " label");
      if (lab == "0") throw ConfigError(std::string("label \"0\" is reserved for singlehood"));
      if (!index.emplace(lab, i).second)
        throw ConfigError(std::string("duplicate ") + side + " label: " + lab);
    }
  };
  index_side(x_labels_, x_index_, "x");
  index_side(y_labels_, y_index_, "y");
}

int TypeSpace::x_index(const std::string& label) const {
  auto it = x_index_.find(label);
  return it == x_index_.end() ? -1 : it->second;
}

int TypeSpace::y_index(const std::string& label) const {
  auto it = y_index_.find(label);
  return it == y_index_.end() ? -1 : it->second;
}

TypeSpace TypeSpace::indexed(int nx, int ny) {
  std::vector<std::string> xs(nx), ys(ny);
  for (int i = 0; i < nx; ++i) xs[i] = "x" + std::to_string(i);
  for (int j = 0; j < ny; ++j) ys[j] = "y" + std::to_string(j);
  return TypeSpace(std::move(xs), std::move(ys));
}

Market::Market(TypeSpace s, Vec n_in, Vec m_in)
    : space(std::move(s)), n(std::move(n_in)), m(std::move(m_in)) {
  if (n.size() != space.nx() || m.size() != space.ny())
    throw ConfigError("market margins do not match the type space");
  for (int x = 0; x < n.size(); ++x)
    if (!(n[x] > 0.0) || !std::isfinite(n[x]))
      throw DomainError("n_x must be strictly positive: " + space.x_labels()[x]);
  for (int y = 0; y < m.size(); ++y)
    if (!(m[y] > 0.0) || !std::isfinite(m[y]))
      throw DomainError("m_y must be strictly positive: " + space.y_labels()[y]);
}

Matching::Matching(Mat couples, Vec singles_x, Vec singles_y)
    : mu(std::move(couples)), mu_x0(std::move(singles_x)), mu_0y(std::move(singles_y)) {
  if (mu.rows() != mu_x0.size() || mu.cols() != mu_0y.size())
    throw ConfigError("matching dimensions are inconsistent");
  if ((mu.array() < 0.0).any() || (mu_x0.array() < 0.0).any() || (mu_0y.array() < 0.0).any())
    throw DomainError("matching masses must be nonnegative");
  if (!mu.allFinite() || !mu_x0.allFinite() || !mu_0y.allFinite())
    throw DomainError("matching masses must be finite");
}

Matching Matching::zeros(int nx, int ny) {
  return Matching(Mat::Zero(nx, ny), Vec::Zero(nx), Vec::Zero(ny));
}

double Matching::accounting_gap(const Market& market) const {
  double gap = 0.0;
  for (int x = 0; x < nx(); ++x)
    gap = std::max(gap, std::abs(market.n[x] - mu_x0[x] - mu.row(x).sum()));
  for (int y = 0; y < ny(); ++y)
    gap = std::max(gap, std::abs(market.m[y] - mu_0y[y] - mu.col(y).sum()));
  return gap;
}

ParamVector::ParamVector(Vec v, std::vector<std::string> n)
    : values(std::move(v)), names(std::move(n)) {
  if (static_cast<std::size_t>(values.size()) != names.size())
    throw ConfigError("parameter values and names have different lengths");
  std::set<std::string> seen(names.begin(), names.end());
  if (seen.size() != names.size()) throw ConfigError("duplicate parameter names");
}

std::pair<HouseholdFrequencies, double> normalize_to_frequencies(const Matching& matching) {
  const double nh = matching.total();
  if (!(nh > 0.0)) throw DomainError("empty matching");
  HouseholdFrequencies pi;
  pi.pi_xy = matching.mu / nh;
  pi.pi_x0 = matching.mu_x0 / nh;
  pi.pi_0y = matching.mu_0y / nh;
  return {std::move(pi), nh};
}

Vec aggregate_margins(const HouseholdFrequencies& pi) {
  const int nx = pi.nx(), ny = pi.ny();
  Vec zeta(nx + ny);
  for (int x = 0; x < nx; ++x) zeta[x] = pi.pi_x0[x] + pi.pi_xy.row(x).sum();
  for (int y = 0; y < ny; ++y) zeta[nx + y] = pi.pi_0y[y] + pi.pi_xy.col(y).sum();
  return zeta;
}

namespace {
template <typename Couples, typename SX, typename SY>
Vec stack_households(const Couples& c, const SX& sx, const SY& sy) {
  const int nx = static_cast<int>(sx.size()), ny = static_cast<int>(sy.size());
  Vec v(nx * ny + nx + ny);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y) v[x * ny + y] = c(x, y);
  v.segment(nx * ny, nx) = sx;
  v.segment(nx * ny + nx, ny) = sy;
  return v;
}
}  // namespace

Vec household_vector(const HouseholdFrequencies& pi) {
  return stack_households(pi.pi_xy, pi.pi_x0, pi.pi_0y);
}

Vec household_vector(const Matching& mu) {
  return stack_households(mu.mu, mu.mu_x0, mu.mu_0y);
}

Mat margin_operator(int nx, int ny) {
  Mat a = Mat::Zero(nx + ny, nx * ny + nx + ny);
  for (int x = 0; x < nx; ++x) {
    for (int y = 0; y < ny; ++y) a(x, x * ny + y) = 1.0;
    a(x, nx * ny + x) = 1.0;
  }
  for (int y = 0; y < ny; ++y) {
    for (int x = 0; x < nx; ++x) a(nx + y, x * ny + y) = 1.0;
    a(nx + y, nx * ny + nx + y) = 1.0;
  }
  return a;
}

}  // namespace meq
