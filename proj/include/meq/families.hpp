#pragma once

#include "meq/types.hpp"

#include <memory>
#include <string>
#include <vector>

namespace meq {

// Capability record for an aggregate matching function family. The flags gate
// algorithm eligibility (frequency rescaling, closed-form confidence
// intervals, the parameter-free counterfactual) and are fixed per family,
// then verified by the property suite.
struct FamilyDescriptor {
  std::string name;
  int theta_dim = 0;
  // M(la, lb) = l^k M(a, b) for all l > 0 with k = homogeneity_degree.
  bool homogeneous = false;
  double homogeneity_degree = 0.0;
  bool homogeneous_degree_one = false;
  // M^theta_xy = f_xy(theta) * g_xy(a, b) with g free of theta.
  bool separable_in_parameters = false;
  // g_xy is a monomial in (a, b), so M^theta(ta*a, tb*b) / M^theta(a, b)
  // is a theta-free function of (ta, tb) alone.
  bool has_theta_free_ratio = false;
};

// Joint surplus table; prohibited cells force the match mass to zero.
struct SurplusTable {
  Mat phi;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> prohibited;

  SurplusTable() = default;
  explicit SurplusTable(Mat p)
      : phi(std::move(p)),
        prohibited(Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(
            phi.rows(), phi.cols(), false)) {}
  SurplusTable(Mat p, Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask)
      : phi(std::move(p)), prohibited(std::move(mask)) {}
};

// Per-pair parameters of the exponentially transferable utility model.
struct EtuParams {
  Mat tau;    // > 0
  Mat alpha;
  Mat gamma;
};

// D_xy(u, v) = tau * log((exp((u - alpha)/tau) + exp((v - gamma)/tau)) / 2).
// Satisfies D(u + c, v + c) = D(u, v) + c.
double etu_distance(const EtuParams& params, int x, int y, double u, double v);

// Age-education type for the 184-parameter surplus specification.
struct AgeEdu {
  int age;  // 1..60
  int edu;  // 1..3
};

// Phi = theta_0 + theta^ma_{xa} 1{xa>=2} + theta^me_{xe} 1{xe>=2}
//     + theta^wa_{ya} 1{ya>=2} + theta^we_{ye} 1{ye>=2}
//     + theta^mwa_{|xa-ya|} 1{|xa-ya|>=1} + theta^mwe_{|xe-ye|} 1{|xe-ye|>=1}.
// Layout: [0]=theta_0, [1..59]=ma_2..60, [60..61]=me_2..3, [62..120]=wa_2..60,
// [121..122]=we_2..3, [123..181]=mwa_1..59, [182..183]=mwe_1..2.
constexpr int kSurplusParamDim = 184;
double surplus_parametric(const Vec& theta, AgeEdu x, AgeEdu y);
// Indices of the entries of theta that the (x, y) cell loads on (coefficient
// one each; theta_0 always included).
std::vector<int> surplus_parametric_support(AgeEdu x, AgeEdu y);
std::vector<std::string> surplus_parametric_names();

// Value and partial derivatives of one matching-function cell. Order 0 fills
// only value; order 1 adds (da, db, dtheta); order 2 adds the full
// second-order kit used by the MPEC Jacobian.
struct CellDerivatives {
  double value = 0.0;
  double da = 0.0, db = 0.0;
  double daa = 0.0, dab = 0.0, dbb = 0.0;
  Vec dtheta;      // dM/dtheta_k
  Vec dtheta_da;   // d2M/dtheta_k da
  Vec dtheta_db;   // d2M/dtheta_k db
  Mat dtheta2;     // d2M/dtheta_k dtheta_l
};

class MatchingFamily {
 public:
  virtual ~MatchingFamily() = default;

  const FamilyDescriptor& descriptor() const { return desc_; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int theta_dim() const { return desc_.theta_dim; }
  virtual std::vector<std::string> param_names() const;

  // M^theta_xy(a, b), a = mu_x0 > 0, b = mu_0y > 0.
  double value(const Vec& theta, int x, int y, double a, double b) const;
  // (dM/da, dM/db); both nonnegative for catalogued families.
  void grad_unmatched(const Vec& theta, int x, int y, double a, double b,
                      double& da, double& db) const;
  Vec grad_params(const Vec& theta, int x, int y, double a, double b) const;
  void eval_cell(const Vec& theta, int x, int y, double a, double b, int order,
                 CellDerivatives& out) const;

  // g(ta, tb) with M^theta(ta*a, tb*b) = g(ta, tb) * M^theta(a, b).
  // Throws CapabilityError unless has_theta_free_ratio.
  double ratio_form(int x, int y, double a_tilde, double b_tilde) const;

 protected:
  MatchingFamily(FamilyDescriptor desc, int nx, int ny)
      : desc_(std::move(desc)), nx_(nx), ny_(ny) {}
  virtual void eval_impl(const Vec& theta, int x, int y, double a, double b,
                         int order, CellDerivatives& out) const = 0;
  virtual double ratio_impl(int x, int y, double a_tilde, double b_tilde) const;
  void check_inputs(const Vec& theta, int x, int y, double a, double b) const;

  FamilyDescriptor desc_;
  int nx_, ny_;
};

using FamilyPtr = std::shared_ptr<const MatchingFamily>;

// M = sqrt(a b) exp(Phi_xy / 2). Three surplus modes:
//  - fixed: Phi given, theta_dim 0;
//  - free table: theta = vec(Phi) row-major, prohibited mask honored;
//  - parametric: Phi = surplus_parametric(theta, x, y), theta_dim 184.
class ChooSiowFamily : public MatchingFamily {
 public:
  static FamilyPtr fixed_surplus(SurplusTable phi);
  static FamilyPtr free_surplus(int nx, int ny);
  static FamilyPtr free_surplus(int nx, int ny,
                                Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> prohibited);
  static FamilyPtr parametric_surplus(std::vector<AgeEdu> x_types, std::vector<AgeEdu> y_types);

  std::vector<std::string> param_names() const override;

 protected:
  void eval_impl(const Vec& theta, int x, int y, double a, double b, int order,
                 CellDerivatives& out) const override;
  double ratio_impl(int x, int y, double ta, double tb) const override;

 private:
  enum class Mode { kFixed, kFreeTable, kParametric };
  ChooSiowFamily(Mode mode, int nx, int ny);

  Mode mode_;
  SurplusTable fixed_;                       // kFixed
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> prohibited_;  // kFreeTable
  std::vector<AgeEdu> x_types_, y_types_;    // kParametric
  std::vector<std::vector<int>> support_;    // kParametric, per cell (x*ny+y)

  double phi_at(const Vec& theta, int x, int y) const;
  bool is_prohibited(int x, int y) const;
};

// M = a b exp(theta_1 A_xy + theta_2 G_xy); theta = (alpha_scale, gamma_scale).
class MenzelFamily : public MatchingFamily {
 public:
  MenzelFamily(Mat alpha_weight, Mat gamma_weight);
  std::vector<std::string> param_names() const override { return {"alpha_scale", "gamma_scale"}; }

 protected:
  void eval_impl(const Vec& theta, int x, int y, double a, double b, int order,
                 CellDerivatives& out) const override;
  double ratio_impl(int x, int y, double ta, double tb) const override;

 private:
  Mat aw_, gw_;
};

// M = (rho / delta) a b A(x, y); theta = (rho, delta), A a 0/1 acceptance table.
class SearchMatchingFamily : public MatchingFamily {
 public:
  SearchMatchingFamily(Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> acceptance);
  std::vector<std::string> param_names() const override { return {"rho", "delta"}; }

 protected:
  void eval_impl(const Vec& theta, int x, int y, double a, double b, int order,
                 CellDerivatives& out) const override;
  double ratio_impl(int x, int y, double ta, double tb) const override;

 private:
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> acc_;
};

// M = exp(-D_xy(-log a, -log b)) with the ETU distance,
// alpha_xy = theta_1 Aw_xy and gamma_xy = theta_2 Gw_xy, tau fixed.
class EtuGkwFamily : public MatchingFamily {
 public:
  EtuGkwFamily(Mat tau, Mat alpha_weight, Mat gamma_weight);
  std::vector<std::string> param_names() const override { return {"alpha_scale", "gamma_scale"}; }

 protected:
  void eval_impl(const Vec& theta, int x, int y, double a, double b, int order,
                 CellDerivatives& out) const override;

 private:
  Mat tau_, aw_, gw_;
};

// Closed form of the ETU composition with alpha, gamma fixed and tau the free
// parameter: M = [exp(-alpha/tau)/2 a^{-1/tau} + exp(-gamma/tau)/2 b^{-1/tau}]^{-tau}.
class HarmonicMeanFamily : public MatchingFamily {
 public:
  HarmonicMeanFamily(Mat alpha, Mat gamma);
  std::vector<std::string> param_names() const override { return {"tau"}; }

 protected:
  void eval_impl(const Vec& theta, int x, int y, double a, double b, int order,
                 CellDerivatives& out) const override;

 private:
  Mat alpha_, gamma_;
};

// M = exp(sigma_xy) a^{p_xy} b^{q_xy} with p, q > 0 fixed and
// theta = vec(sigma) row-major.
class CobbDouglasFamily : public MatchingFamily {
 public:
  CobbDouglasFamily(Mat p, Mat q);
  std::vector<std::string> param_names() const override;

 protected:
  void eval_impl(const Vec& theta, int x, int y, double a, double b, int order,
                 CellDerivatives& out) const override;

 private:
  Mat p_, q_;
};

}  // namespace meq
