#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace meq {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error taxonomy. Non-convergence of iterative solvers is reported through
// result flags, not exceptions; these cover genuinely invalid inputs/states.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct CapabilityError : Error {
  using Error::Error;
};
struct SolverError : Error {
  using Error::Error;
};
struct RankDeficiencyError : Error {
  using Error::Error;
};
struct ParseError : Error {
  ParseError(const std::string& msg, long line)
      : Error(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
  long line_number;
};

// Ordered label sets for the two sides of the market. "0" is reserved for
// singlehood and may not be used as a type label.
class TypeSpace {
 public:
  TypeSpace() = default;
  TypeSpace(std::vector<std::string> x_labels, std::vector<std::string> y_labels);

  int nx() const { return static_cast<int>(x_labels_.size()); }
  int ny() const { return static_cast<int>(y_labels_.size()); }
  const std::vector<std::string>& x_labels() const { return x_labels_; }
  const std::vector<std::string>& y_labels() const { return y_labels_; }

  int x_index(const std::string& label) const;  // -1 if absent
  int y_index(const std::string& label) const;

  // "x0","x1",... / "y0","y1",... placeholder labels.
  static TypeSpace indexed(int nx, int ny);

  bool operator==(const TypeSpace& o) const {
    return x_labels_ == o.x_labels_ && y_labels_ == o.y_labels_;
  }

 private:
  std::vector<std::string> x_labels_, y_labels_;
  std::unordered_map<std::string, int> x_index_, y_index_;
};

// Market margins: total mass of each type on each side, all strictly positive.
struct Market {
  TypeSpace space;
  Vec n;  // per x
  Vec m;  // per y

  Market() = default;
  Market(TypeSpace s, Vec n_in, Vec m_in);

  int nx() const { return static_cast<int>(n.size()); }
  int ny() const { return static_cast<int>(m.size()); }
};

// Masses over household types XY0: couples mu(x,y), single men mu_x0,
// single women mu_0y. Entries are nonnegative.
struct Matching {
  Mat mu;      // nx x ny
  Vec mu_x0;   // nx
  Vec mu_0y;   // ny

  Matching() = default;
  Matching(Mat couples, Vec singles_x, Vec singles_y);
  static Matching zeros(int nx, int ny);

  int nx() const { return static_cast<int>(mu_x0.size()); }
  int ny() const { return static_cast<int>(mu_0y.size()); }
  double total() const { return mu.sum() + mu_x0.sum() + mu_0y.sum(); }

  // Accounting residual against a market: max |n_x - mu_x0 - sum_y mu_xy|
  // and the y-side analogue.
  double accounting_gap(const Market& market) const;
};

// Named real parameter vector.
struct ParamVector {
  Vec values;
  std::vector<std::string> names;

  ParamVector() = default;
  ParamVector(Vec v, std::vector<std::string> n);
  int size() const { return static_cast<int>(values.size()); }
};

// Frequencies over household types; sums to one when produced by
// normalize_to_frequencies or predicted_frequencies.
struct HouseholdFrequencies {
  Mat pi_xy;
  Vec pi_x0;
  Vec pi_0y;

  int nx() const { return static_cast<int>(pi_x0.size()); }
  int ny() const { return static_cast<int>(pi_0y.size()); }
  double total() const { return pi_xy.sum() + pi_x0.sum() + pi_0y.sum(); }
};

// pi = mu / N_h with N_h the total mass over XY0. Throws DomainError on an
// all-zero matching.
std::pair<HouseholdFrequencies, double> normalize_to_frequencies(const Matching& matching);

// Margins of pi: zeta_x = pi_x0 + sum_y pi_xy, zeta_y = pi_0y + sum_x pi_xy,
// stacked [zeta_x; zeta_y].
Vec aggregate_margins(const HouseholdFrequencies& pi);

// Canonical vectorization over XY0: couples row-major, then singles-x,
// then singles-y. Shared by the covariance machinery and tests.
Vec household_vector(const HouseholdFrequencies& pi);
Vec household_vector(const Matching& mu);

// The (nx+ny) x (nx*ny + nx + ny) margin operator A in the canonical
// household order, so that aggregate_margins(pi) == A * household_vector(pi).
Mat margin_operator(int nx, int ny);

}  // namespace meq
