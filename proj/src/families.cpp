#include "meq/families.hpp"

#include <cmath>

namespace meq {

namespace {
constexpr double kLog2 = 0.6931471805599453;

void set_zero_cell(int k, int order, CellDerivatives& out) {
  out.value = out.da = out.db = out.daa = out.dab = out.dbb = 0.0;
  if (order >= 1) {
    out.dtheta.setZero(k);
    if (order >= 2) {
      out.dtheta_da.setZero(k);
      out.dtheta_db.setZero(k);
      out.dtheta2.setZero(k, k);
    }
  }
}
}  // namespace

double etu_distance(const EtuParams& params, int x, int y, double u, double v) {
  const double tau = params.tau(x, y);
  if (!(tau > 0.0)) throw DomainError("tau must be strictly positive");
  const double e1 = (u - params.alpha(x, y)) / tau;
  const double e2 = (v - params.gamma(x, y)) / tau;
  const double mx = std::max(e1, e2);
  return tau * (mx + std::log((std::exp(e1 - mx) + std::exp(e2 - mx)) / 2.0));
}

double surplus_parametric(const Vec& theta, AgeEdu x, AgeEdu y) {
  if (theta.size() != kSurplusParamDim)
    throw ConfigError("surplus_parametric expects 184 parameters");
  double phi = 0.0;
  for (int idx : surplus_parametric_support(x, y)) phi += theta[idx];
  return phi;
}

std::vector<int> surplus_parametric_support(AgeEdu x, AgeEdu y) {
  auto check = [](AgeEdu t, const char* side) {
    if (t.age < 1 || t.age > 60 || t.edu < 1 || t.edu > 3)
      throw DomainError(std::string("age/education index out of range on the ") + side + " side");
  };
  check(x, "men's");
  check(y, "women's");
  std::vector<int> idx;
  idx.reserve(7);
  idx.push_back(0);
  if (x.age >= 2) idx.push_back(1 + (x.age - 2));            // ma_2..60 -> 1..59
  if (x.edu >= 2) idx.push_back(60 + (x.edu - 2));           // me_2..3 -> 60..61
  if (y.age >= 2) idx.push_back(62 + (y.age - 2));           // wa_2..60 -> 62..120
  if (y.edu >= 2) idx.push_back(121 + (y.edu - 2));          // we_2..3 -> 121..122
  const int da = std::abs(x.age - y.age);
  if (da >= 1) idx.push_back(123 + (da - 1));                // mwa_1..59 -> 123..181
  const int de = std::abs(x.edu - y.edu);
  if (de >= 1) idx.push_back(182 + (de - 1));                // mwe_1..2 -> 182..183
  return idx;
}

std::vector<std::string> surplus_parametric_names() {
  std::vector<std::string> names;
  names.reserve(kSurplusParamDim);
  names.push_back("theta0");
  for (int i = 2; i <= 60; ++i) names.push_back("ma_" + std::to_string(i));
  for (int j = 2; j <= 3; ++j) names.push_back("me_" + std::to_string(j));
  for (int i = 2; i <= 60; ++i) names.push_back("wa_" + std::to_string(i));
  for (int j = 2; j <= 3; ++j) names.push_back("we_" + std::to_string(j));
  for (int i = 1; i <= 59; ++i) names.push_back("mwa_" + std::to_string(i));
  for (int j = 1; j <= 2; ++j) names.push_back("mwe_" + std::to_string(j));
  return names;
}

// ---------------------------------------------------------------------------
// MatchingFamily base

std::vector<std::string> MatchingFamily::param_names() const {
  std::vector<std::string> names(theta_dim());
  for (int k = 0; k < theta_dim(); ++k) names[k] = "theta_" + std::to_string(k);
  return names;
}

void MatchingFamily::check_inputs(const Vec& theta, int x, int y, double a, double b) const {
  if (theta.size() != desc_.theta_dim)
    throw ConfigError(desc_.name + ": theta has dimension " + std::to_string(theta.size()) +
                      ", expected " + std::to_string(desc_.theta_dim));
  if (x < 0 || x >= nx_ || y < 0 || y >= ny_)
    throw DomainError(desc_.name + ": type index out of range");
  if (!(a > 0.0) || !(b > 0.0))
    throw DomainError(desc_.name + ": unmatched masses must be strictly positive");
}

double MatchingFamily::value(const Vec& theta, int x, int y, double a, double b) const {
  check_inputs(theta, x, y, a, b);
  CellDerivatives c;
  eval_impl(theta, x, y, a, b, 0, c);
  return c.value;
}

void MatchingFamily::grad_unmatched(const Vec& theta, int x, int y, double a, double b,
                                    double& da, double& db) const {
  check_inputs(theta, x, y, a, b);
  CellDerivatives c;
  eval_impl(theta, x, y, a, b, 1, c);
  da = c.da;
  db = c.db;
}

Vec MatchingFamily::grad_params(const Vec& theta, int x, int y, double a, double b) const {
  check_inputs(theta, x, y, a, b);
  CellDerivatives c;
  eval_impl(theta, x, y, a, b, 1, c);
  return c.dtheta;
}

void MatchingFamily::eval_cell(const Vec& theta, int x, int y, double a, double b, int order,
                               CellDerivatives& out) const {
  check_inputs(theta, x, y, a, b);
  eval_impl(theta, x, y, a, b, order, out);
}

double MatchingFamily::ratio_form(int x, int y, double a_tilde, double b_tilde) const {
  if (!desc_.has_theta_free_ratio)
    throw CapabilityError(desc_.name + " has no parameter-free ratio form");
  if (x < 0 || x >= nx_ || y < 0 || y >= ny_)
    throw DomainError(desc_.name + ": type index out of range");
  if (!(a_tilde > 0.0) || !(b_tilde > 0.0))
    throw DomainError(desc_.name + ": ratios must be strictly positive");
  return ratio_impl(x, y, a_tilde, b_tilde);
}

double MatchingFamily::ratio_impl(int, int, double, double) const {
  throw CapabilityError(desc_.name + " has no parameter-free ratio form");
}

// ---------------------------------------------------------------------------
// Choo-Siow

ChooSiowFamily::ChooSiowFamily(Mode mode, int nx, int ny)
    : MatchingFamily(
          FamilyDescriptor{
              .name = "choo-siow",
              .theta_dim = 0,
              .homogeneous = true,
              .homogeneity_degree = 1.0,
              .homogeneous_degree_one = true,
              .separable_in_parameters = true,
              .has_theta_free_ratio = true,
          },
          nx, ny),
      mode_(mode) {}

FamilyPtr ChooSiowFamily::fixed_surplus(SurplusTable phi) {
  const int nx = static_cast<int>(phi.phi.rows());
  const int ny = static_cast<int>(phi.phi.cols());
  auto fam = std::shared_ptr<ChooSiowFamily>(new ChooSiowFamily(Mode::kFixed, nx, ny));
  fam->fixed_ = std::move(phi);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      if (!fam->fixed_.prohibited(x, y) && !std::isfinite(fam->fixed_.phi(x, y)))
        throw ConfigError("non-finite surplus on a non-prohibited cell");
  return fam;
}

FamilyPtr ChooSiowFamily::free_surplus(int nx, int ny) {
  return free_surplus(nx, ny,
                      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(nx, ny, false));
}

FamilyPtr ChooSiowFamily::free_surplus(
    int nx, int ny, Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> prohibited) {
  auto fam = std::shared_ptr<ChooSiowFamily>(new ChooSiowFamily(Mode::kFreeTable, nx, ny));
  fam->prohibited_ = std::move(prohibited);
  fam->desc_.theta_dim = nx * ny;
  return fam;
}

FamilyPtr ChooSiowFamily::parametric_surplus(std::vector<AgeEdu> x_types,
                                             std::vector<AgeEdu> y_types) {
  const int nx = static_cast<int>(x_types.size());
  const int ny = static_cast<int>(y_types.size());
  auto fam = std::shared_ptr<ChooSiowFamily>(new ChooSiowFamily(Mode::kParametric, nx, ny));
  fam->x_types_ = std::move(x_types);
  fam->y_types_ = std::move(y_types);
  fam->desc_.theta_dim = kSurplusParamDim;
  fam->support_.resize(static_cast<std::size_t>(nx) * ny);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      fam->support_[x * ny + y] = surplus_parametric_support(fam->x_types_[x], fam->y_types_[y]);
  return fam;
}

std::vector<std::string> ChooSiowFamily::param_names() const {
  switch (mode_) {
    case Mode::kFixed:
      return {};
    case Mode::kFreeTable: {
      std::vector<std::string> names;
      names.reserve(static_cast<std::size_t>(nx_) * ny_);
      for (int x = 0; x < nx_; ++x)
        for (int y = 0; y < ny_; ++y)
          names.push_back("phi_" + std::to_string(x) + "_" + std::to_string(y));
      return names;
    }
    case Mode::kParametric:
      return surplus_parametric_names();
  }
  return {};
}

bool ChooSiowFamily::is_prohibited(int x, int y) const {
  switch (mode_) {
    case Mode::kFixed:
      return fixed_.prohibited(x, y);
    case Mode::kFreeTable:
      return prohibited_(x, y);
    case Mode::kParametric:
      return false;
  }
  return false;
}

double ChooSiowFamily::phi_at(const Vec& theta, int x, int y) const {
  switch (mode_) {
    case Mode::kFixed:
      return fixed_.phi(x, y);
    case Mode::kFreeTable:
      return theta[x * ny_ + y];
    case Mode::kParametric: {
      double phi = 0.0;
      for (int idx : support_[x * ny_ + y]) phi += theta[idx];
      return phi;
    }
  }
  return 0.0;
}

void ChooSiowFamily::eval_impl(const Vec& theta, int x, int y, double a, double b, int order,
                               CellDerivatives& out) const {
  const int k = theta_dim();
  if (is_prohibited(x, y)) {
    set_zero_cell(k, order, out);
    return;
  }
  const double phi = phi_at(theta, x, y);
  const double m = std::exp(0.5 * (std::log(a) + std::log(b) + phi));
  out.value = m;
  if (order < 1) return;
  out.da = m / (2.0 * a);
  out.db = m / (2.0 * b);
  out.dtheta.setZero(k);
  const int own = x * ny_ + y;
  std::vector<int> own_support;
  const std::vector<int>* sup = &own_support;
  if (mode_ == Mode::kFreeTable)
    own_support.push_back(own);
  else if (mode_ == Mode::kParametric)
    sup = &support_[own];
  for (int idx : *sup) out.dtheta[idx] = 0.5 * m;
  if (order < 2) return;
  out.daa = -m / (4.0 * a * a);
  out.dab = m / (4.0 * a * b);
  out.dbb = -m / (4.0 * b * b);
  out.dtheta_da.setZero(k);
  out.dtheta_db.setZero(k);
  out.dtheta2.setZero(k, k);
  for (int idx : *sup) {
    out.dtheta_da[idx] = 0.5 * out.da;
    out.dtheta_db[idx] = 0.5 * out.db;
    for (int jdx : *sup) out.dtheta2(idx, jdx) = 0.25 * m;
  }
}

double ChooSiowFamily::ratio_impl(int, int, double ta, double tb) const {
  return std::sqrt(ta * tb);
}

// ---------------------------------------------------------------------------
// Menzel NTU

MenzelFamily::MenzelFamily(Mat alpha_weight, Mat gamma_weight)
    : MatchingFamily(
          FamilyDescriptor{
              .name = "menzel",
              .theta_dim = 2,
              .homogeneous = true,
              .homogeneity_degree = 2.0,
              .homogeneous_degree_one = false,
              .separable_in_parameters = true,
              .has_theta_free_ratio = true,
          },
          static_cast<int>(alpha_weight.rows()), static_cast<int>(alpha_weight.cols())),
      aw_(std::move(alpha_weight)),
      gw_(std::move(gamma_weight)) {
  if (aw_.rows() != gw_.rows() || aw_.cols() != gw_.cols())
    throw ConfigError("menzel: weight tables must have equal shapes");
}

void MenzelFamily::eval_impl(const Vec& theta, int x, int y, double a, double b, int order,
                             CellDerivatives& out) const {
  const double aw = aw_(x, y), gw = gw_(x, y);
  const double e = std::exp(theta[0] * aw + theta[1] * gw);
  const double m = a * b * e;
  out.value = m;
  if (order < 1) return;
  out.da = b * e;
  out.db = a * e;
  out.dtheta.resize(2);
  out.dtheta[0] = m * aw;
  out.dtheta[1] = m * gw;
  if (order < 2) return;
  out.daa = 0.0;
  out.dab = e;
  out.dbb = 0.0;
  out.dtheta_da.resize(2);
  out.dtheta_db.resize(2);
  out.dtheta_da[0] = b * e * aw;
  out.dtheta_da[1] = b * e * gw;
  out.dtheta_db[0] = a * e * aw;
  out.dtheta_db[1] = a * e * gw;
  out.dtheta2.resize(2, 2);
  out.dtheta2(0, 0) = m * aw * aw;
  out.dtheta2(0, 1) = out.dtheta2(1, 0) = m * aw * gw;
  out.dtheta2(1, 1) = m * gw * gw;
}

double MenzelFamily::ratio_impl(int, int, double ta, double tb) const { return ta * tb; }

// ---------------------------------------------------------------------------
// Search and matching

SearchMatchingFamily::SearchMatchingFamily(
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> acceptance)
    : MatchingFamily(
          FamilyDescriptor{
              .name = "search",
              .theta_dim = 2,
              .homogeneous = true,
              .homogeneity_degree = 2.0,
              .homogeneous_degree_one = false,
              .separable_in_parameters = true,
              .has_theta_free_ratio = true,
          },
          static_cast<int>(acceptance.rows()), static_cast<int>(acceptance.cols())),
      acc_(std::move(acceptance)) {}

void SearchMatchingFamily::eval_impl(const Vec& theta, int x, int y, double a, double b,
                                     int order, CellDerivatives& out) const {
  if (!acc_(x, y)) {
    set_zero_cell(2, order, out);
    return;
  }
  const double rho = theta[0], delta = theta[1];
  if (!(rho > 0.0) || !(delta > 0.0))
    throw DomainError("search: meeting and separation rates must be strictly positive");
  const double k = rho / delta;
  out.value = k * a * b;
  if (order < 1) return;
  out.da = k * b;
  out.db = k * a;
  out.dtheta.resize(2);
  out.dtheta[0] = a * b / delta;
  out.dtheta[1] = -k * a * b / delta;
  if (order < 2) return;
  out.daa = 0.0;
  out.dab = k;
  out.dbb = 0.0;
  out.dtheta_da.resize(2);
  out.dtheta_db.resize(2);
  out.dtheta_da[0] = b / delta;
  out.dtheta_da[1] = -k * b / delta;
  out.dtheta_db[0] = a / delta;
  out.dtheta_db[1] = -k * a / delta;
  out.dtheta2.resize(2, 2);
  out.dtheta2(0, 0) = 0.0;
  out.dtheta2(0, 1) = out.dtheta2(1, 0) = -a * b / (delta * delta);
  out.dtheta2(1, 1) = 2.0 * k * a * b / (delta * delta);
}

double SearchMatchingFamily::ratio_impl(int, int, double ta, double tb) const { return ta * tb; }

// ---------------------------------------------------------------------------
// ETU (GKW) and the harmonic-mean closed form

namespace {
// Shared log-space kernel: M = S^{-tau} with
// S = exp(lt1) + exp(lt2), lt1 = (-alpha - log a)/tau - log 2,
// lt2 = (-gamma - log b)/tau - log 2. Returns M and the softmax weights
// w1 = t1/S, w2 = t2/S.
struct EtuKernel {
  double m, w1, w2, logS;
};

EtuKernel etu_kernel(double tau, double alpha, double gamma, double a, double b) {
  const double lt1 = (-alpha - std::log(a)) / tau - kLog2;
  const double lt2 = (-gamma - std::log(b)) / tau - kLog2;
  const double mx = std::max(lt1, lt2);
  const double s = std::exp(lt1 - mx) + std::exp(lt2 - mx);
  EtuKernel k;
  k.logS = mx + std::log(s);
  k.m = std::exp(-tau * k.logS);
  k.w1 = std::exp(lt1 - k.logS);
  k.w2 = std::exp(lt2 - k.logS);
  return k;
}

void etu_ab_derivs(double tau, const EtuKernel& k, double a, double b, CellDerivatives& out) {
  out.value = k.m;
  out.da = k.m * k.w1 / a;
  out.db = k.m * k.w2 / b;
  const double c = (tau + 1.0) / tau * k.m * k.w1 * k.w2;
  out.daa = -c / (a * a);
  out.dab = c / (a * b);
  out.dbb = -c / (b * b);
}
}  // namespace

EtuGkwFamily::EtuGkwFamily(Mat tau, Mat alpha_weight, Mat gamma_weight)
    : MatchingFamily(
          FamilyDescriptor{
              .name = "etu-gkw",
              .theta_dim = 2,
              .homogeneous = true,
              .homogeneity_degree = 1.0,
              .homogeneous_degree_one = true,
              .separable_in_parameters = false,
              .has_theta_free_ratio = false,
          },
          static_cast<int>(tau.rows()), static_cast<int>(tau.cols())),
      tau_(std::move(tau)),
      aw_(std::move(alpha_weight)),
      gw_(std::move(gamma_weight)) {
  if (aw_.rows() != tau_.rows() || aw_.cols() != tau_.cols() || gw_.rows() != tau_.rows() ||
      gw_.cols() != tau_.cols())
    throw ConfigError("etu-gkw: parameter tables must have equal shapes");
  if ((tau_.array() <= 0.0).any()) throw ConfigError("etu-gkw: tau must be strictly positive");
}

void EtuGkwFamily::eval_impl(const Vec& theta, int x, int y, double a, double b, int order,
                             CellDerivatives& out) const {
  const double tau = tau_(x, y);
  const double aw = aw_(x, y), gw = gw_(x, y);
  const double alpha = theta[0] * aw, gamma = theta[1] * gw;
  const EtuKernel k = etu_kernel(tau, alpha, gamma, a, b);
  out.value = k.m;
  if (order < 1) return;
  etu_ab_derivs(tau, k, a, b, out);
  out.dtheta.resize(2);
  out.dtheta[0] = k.m * k.w1 * aw;
  out.dtheta[1] = k.m * k.w2 * gw;
  if (order < 2) return;
  const double q = (tau + 1.0) / tau * k.m * k.w1 * k.w2;
  out.dtheta_da.resize(2);
  out.dtheta_db.resize(2);
  out.dtheta_da[0] = (aw / (tau * a)) * k.m * k.w1 * (tau * k.w1 - k.w2);
  out.dtheta_da[1] = q * gw / a;
  out.dtheta_db[0] = q * aw / b;
  out.dtheta_db[1] = (gw / (tau * b)) * k.m * k.w2 * (tau * k.w2 - k.w1);
  out.dtheta2.resize(2, 2);
  out.dtheta2(0, 0) = (aw * aw / tau) * k.m * k.w1 * (tau * k.w1 - k.w2);
  out.dtheta2(1, 1) = (gw * gw / tau) * k.m * k.w2 * (tau * k.w2 - k.w1);
  out.dtheta2(0, 1) = out.dtheta2(1, 0) = q * aw * gw;
}

HarmonicMeanFamily::HarmonicMeanFamily(Mat alpha, Mat gamma)
    : MatchingFamily(
          FamilyDescriptor{
              .name = "harmonic-mean",
              .theta_dim = 1,
              .homogeneous = true,
              .homogeneity_degree = 1.0,
              .homogeneous_degree_one = true,
              .separable_in_parameters = false,
              .has_theta_free_ratio = false,
          },
          static_cast<int>(alpha.rows()), static_cast<int>(alpha.cols())),
      alpha_(std::move(alpha)),
      gamma_(std::move(gamma)) {
  if (alpha_.rows() != gamma_.rows() || alpha_.cols() != gamma_.cols())
    throw ConfigError("harmonic-mean: parameter tables must have equal shapes");
}

void HarmonicMeanFamily::eval_impl(const Vec& theta, int x, int y, double a, double b,
                                   int order, CellDerivatives& out) const {
  const double tau = theta[0];
  if (!(tau > 0.0)) throw DomainError("harmonic-mean: tau must be strictly positive");
  const double alpha = alpha_(x, y), gamma = gamma_(x, y);
  const EtuKernel k = etu_kernel(tau, alpha, gamma, a, b);
  out.value = k.m;
  if (order < 1) return;
  etu_ab_derivs(tau, k, a, b, out);
  const double c1 = (alpha + std::log(a)) / (tau * tau);
  const double c2 = (gamma + std::log(b)) / (tau * tau);
  const double ltau = k.w1 * c1 + k.w2 * c2;   // d logS / d tau
  const double g = -k.logS - tau * ltau;       // d logM / d tau
  out.dtheta.resize(1);
  out.dtheta[0] = k.m * g;
  if (order < 2) return;
  out.dtheta_da.resize(1);
  out.dtheta_db.resize(1);
  out.dtheta_da[0] = (k.w1 / a) * (out.dtheta[0] + k.m * (c1 - ltau));
  out.dtheta_db[0] = (k.w2 / b) * (out.dtheta[0] + k.m * (c2 - ltau));
  out.dtheta2.resize(1, 1);
  out.dtheta2(0, 0) =
      k.m * (g * g + tau * (ltau * ltau - k.w1 * c1 * c1 - k.w2 * c2 * c2));
}

// ---------------------------------------------------------------------------
// Cobb-Douglas (peer effects)

CobbDouglasFamily::CobbDouglasFamily(Mat p, Mat q)
    : MatchingFamily(
          FamilyDescriptor{
              .name = "cobb-douglas",
              .theta_dim = static_cast<int>(p.rows() * p.cols()),
              .homogeneous = false,
              .homogeneity_degree = 0.0,
              .homogeneous_degree_one = false,
              .separable_in_parameters = true,
              .has_theta_free_ratio = false,
          },
          static_cast<int>(p.rows()), static_cast<int>(p.cols())),
      p_(std::move(p)),
      q_(std::move(q)) {
  if (p_.rows() != q_.rows() || p_.cols() != q_.cols())
    throw ConfigError("cobb-douglas: exponent tables must have equal shapes");
  if ((p_.array() <= 0.0).any() || (q_.array() <= 0.0).any())
    throw ConfigError("cobb-douglas: exponents must be strictly positive");
}

std::vector<std::string> CobbDouglasFamily::param_names() const {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(nx_) * ny_);
  for (int x = 0; x < nx_; ++x)
    for (int y = 0; y < ny_; ++y)
      names.push_back("sigma_" + std::to_string(x) + "_" + std::to_string(y));
  return names;
}

void CobbDouglasFamily::eval_impl(const Vec& theta, int x, int y, double a, double b,
                                  int order, CellDerivatives& out) const {
  const int k = theta_dim();
  const int own = x * ny_ + y;
  const double p = p_(x, y), q = q_(x, y);
  const double m = std::exp(theta[own] + p * std::log(a) + q * std::log(b));
  out.value = m;
  if (order < 1) return;
  out.da = p * m / a;
  out.db = q * m / b;
  out.dtheta.setZero(k);
  out.dtheta[own] = m;
  if (order < 2) return;
  out.daa = p * (p - 1.0) * m / (a * a);
  out.dab = p * q * m / (a * b);
  out.dbb = q * (q - 1.0) * m / (b * b);
  out.dtheta_da.setZero(k);
  out.dtheta_db.setZero(k);
  out.dtheta_da[own] = out.da;
  out.dtheta_db[own] = out.db;
  out.dtheta2.setZero(k, k);
  out.dtheta2(own, own) = m;
}

}  // namespace meq
