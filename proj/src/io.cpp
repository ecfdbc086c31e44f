#include "meq/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>

namespace meq {

namespace {

std::string format_mass(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_mass(const std::string& s, long line) {
  if (s.empty()) throw ParseError("empty mass field", line);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw ParseError("malformed number: " + s, line);
  if (!std::isfinite(v)) throw ParseError("mass must be finite: " + s, line);
  if (v < 0.0) throw ParseError("negative mass: " + s, line);
  return v;
}

struct CsvReader {
  std::ifstream in;
  long line_number = 0;
  explicit CsvReader(const std::string& path) : in(path) {
    if (!in) throw Error("cannot open file: " + path);
  }
  // next non-comment, non-blank line; false at end of file
  bool next(std::string& line) {
    while (std::getline(in, line)) {
      ++line_number;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (line[0] == '#') continue;
      return true;
    }
    return false;
  }
};

}  // namespace

LabeledMatching load_matching_csv(const std::string& path) {
  CsvReader reader(path);
  std::string line;
  if (!reader.next(line)) throw ParseError("missing header", reader.line_number);
  if (line != "x_label,y_label,mass")
    throw ParseError("expected header \"x_label,y_label,mass\", got \"" + line + "\"",
                     reader.line_number);

  std::vector<std::string> x_order, y_order;
  std::map<std::string, int> x_idx, y_idx;
  auto intern = [](const std::string& lab, std::vector<std::string>& order,
                   std::map<std::string, int>& idx) {
    auto it = idx.find(lab);
    if (it != idx.end()) return it->second;
    const int i = static_cast<int>(order.size());
    order.push_back(lab);
    idx.emplace(lab, i);
    return i;
  };

  struct Row {
    int x, y;  // -1 encodes singlehood
    double mass;
    long line;
  };
  std::vector<Row> rows;
  std::set<std::pair<int, int>> seen;
  while (reader.next(line)) {
    const auto fields = split_fields(line);
    if (fields.size() != 3) throw ParseError("expected 3 fields", reader.line_number);
    const std::string& xl = fields[0];
    const std::string& yl = fields[1];
    if (xl.empty() || yl.empty()) throw ParseError("empty label", reader.line_number);
    if (xl == "0" && yl == "0")
      throw ParseError("both labels are \"0\"", reader.line_number);
    const double mass = parse_mass(fields[2], reader.line_number);
    const int xi = xl == "0" ? -1 : intern(xl, x_order, x_idx);
    const int yi = yl == "0" ? -1 : intern(yl, y_order, y_idx);
    if (!seen.emplace(xi, yi).second)
      throw ParseError("duplicate cell " + xl + "," + yl, reader.line_number);
    rows.push_back({xi, yi, mass, reader.line_number});
  }

  TypeSpace space(x_order, y_order);
  Mat mu = Mat::Zero(space.nx(), space.ny());
  Vec mu_x0 = Vec::Zero(space.nx()), mu_0y = Vec::Zero(space.ny());
  for (const Row& r : rows) {
    if (r.x >= 0 && r.y >= 0)
      mu(r.x, r.y) = r.mass;
    else if (r.y < 0)
      mu_x0[r.x] = r.mass;
    else
      mu_0y[r.y] = r.mass;
  }
  return {std::move(space), Matching(std::move(mu), std::move(mu_x0), std::move(mu_0y))};
}

void save_matching_csv(const TypeSpace& space, const Matching& matching,
                       const std::string& path) {
  if (matching.nx() != space.nx() || matching.ny() != space.ny())
    throw ConfigError("matching does not match the type space");
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  out << "x_label,y_label,mass\n";
  for (int x = 0; x < matching.nx(); ++x)
    for (int y = 0; y < matching.ny(); ++y)
      if (matching.mu(x, y) != 0.0)
        out << space.x_labels()[x] << ',' << space.y_labels()[y] << ','
            << format_mass(matching.mu(x, y)) << '\n';
  for (int x = 0; x < matching.nx(); ++x)
    if (matching.mu_x0[x] != 0.0)
      out << space.x_labels()[x] << ",0," << format_mass(matching.mu_x0[x]) << '\n';
  for (int y = 0; y < matching.ny(); ++y)
    if (matching.mu_0y[y] != 0.0)
      out << "0," << space.y_labels()[y] << ',' << format_mass(matching.mu_0y[y]) << '\n';
}

Market load_margins_csv(const std::string& path, const TypeSpace& space) {
  CsvReader reader(path);
  std::string line;
  if (!reader.next(line)) throw ParseError("missing header", reader.line_number);
  if (line != "side,label,mass")
    throw ParseError("expected header \"side,label,mass\", got \"" + line + "\"",
                     reader.line_number);
  Vec n = Vec::Constant(space.nx(), -1.0), m = Vec::Constant(space.ny(), -1.0);
  while (reader.next(line)) {
    const auto fields = split_fields(line);
    if (fields.size() != 3) throw ParseError("expected 3 fields", reader.line_number);
    const double mass = parse_mass(fields[2], reader.line_number);
    if (fields[0] == "M") {
      const int x = space.x_index(fields[1]);
      if (x < 0) throw ParseError("unknown men's label: " + fields[1], reader.line_number);
      if (n[x] >= 0.0) throw ParseError("duplicate margin for " + fields[1], reader.line_number);
      n[x] = mass;
    } else if (fields[0] == "W") {
      const int y = space.y_index(fields[1]);
      if (y < 0) throw ParseError("unknown women's label: " + fields[1], reader.line_number);
      if (m[y] >= 0.0) throw ParseError("duplicate margin for " + fields[1], reader.line_number);
      m[y] = mass;
    } else {
      throw ParseError("side must be M or W, got " + fields[0], reader.line_number);
    }
  }
  for (int x = 0; x < space.nx(); ++x)
    if (n[x] < 0.0) throw Error("missing margin for men's type " + space.x_labels()[x]);
  for (int y = 0; y < space.ny(); ++y)
    if (m[y] < 0.0) throw Error("missing margin for women's type " + space.y_labels()[y]);
  return Market(space, std::move(n), std::move(m));
}

Mat load_table_csv(const std::string& path, const TypeSpace& space, double default_value) {
  CsvReader reader(path);
  std::string line;
  if (!reader.next(line)) throw ParseError("missing header", reader.line_number);
  if (line != "x_label,y_label,value")
    throw ParseError("expected header \"x_label,y_label,value\", got \"" + line + "\"",
                     reader.line_number);
  Mat table = Mat::Constant(space.nx(), space.ny(), default_value);
  std::set<std::pair<int, int>> seen;
  while (reader.next(line)) {
    const auto fields = split_fields(line);
    if (fields.size() != 3) throw ParseError("expected 3 fields", reader.line_number);
    const int x = space.x_index(fields[0]);
    const int y = space.y_index(fields[1]);
    if (x < 0) throw ParseError("unknown men's label: " + fields[0], reader.line_number);
    if (y < 0) throw ParseError("unknown women's label: " + fields[1], reader.line_number);
    if (!seen.emplace(x, y).second)
      throw ParseError("duplicate cell " + fields[0] + "," + fields[1], reader.line_number);
    char* end = nullptr;
    const double v = std::strtod(fields[2].c_str(), &end);
    if (end != fields[2].c_str() + fields[2].size() || !std::isfinite(v))
      throw ParseError("malformed number: " + fields[2], reader.line_number);
    table(x, y) = v;
  }
  return table;
}

// ---------------------------------------------------------------------------
// JSON

Json json_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double json_to_double(const Json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error("not a numeric value: " + s);
  }
  return j.get<double>();
}

namespace {
Json vec_to_json(const Vec& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(json_number(v[i]));
  return a;
}

Json mat_to_json(const Mat& m) {
  Json rows = Json::array();
  for (int i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(json_number(m(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

Vec vec_from_json(const Json& a) {
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = json_to_double(a[i]);
  return v;
}

Mat mat_from_json(const Json& a) {
  const int rows = static_cast<int>(a.size());
  const int cols = rows > 0 ? static_cast<int>(a[0].size()) : 0;
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = json_to_double(a[i][j]);
  return m;
}
}  // namespace

Json matching_to_json(const TypeSpace& space, const Matching& m) {
  return Json{{"x_labels", space.x_labels()},
              {"y_labels", space.y_labels()},
              {"mu_xy", mat_to_json(m.mu)},
              {"mu_x0", vec_to_json(m.mu_x0)},
              {"mu_0y", vec_to_json(m.mu_0y)}};
}

Matching matching_from_json(const Json& j) {
  return Matching(mat_from_json(j.at("mu_xy")), vec_from_json(j.at("mu_x0")),
                  vec_from_json(j.at("mu_0y")));
}

Json equilibrium_to_json(const TypeSpace& space, const EquilibriumSolution& sol) {
  return Json{{"type", "equilibrium"},
              {"converged", sol.converged},
              {"outer_iterations", sol.outer_iterations},
              {"residual_sup_norm", json_number(sol.residual_sup_norm)},
              {"matching", matching_to_json(space, sol.matching)}};
}

EquilibriumSolution equilibrium_from_json(const Json& j) {
  EquilibriumSolution sol;
  sol.converged = j.at("converged").get<bool>();
  sol.outer_iterations = j.at("outer_iterations").get<int>();
  sol.residual_sup_norm = json_to_double(j.at("residual_sup_norm"));
  sol.matching = matching_from_json(j.at("matching"));
  return sol;
}

Json estimation_to_json(const EstimationResult& r) {
  Json j{{"type", "estimation"},
         {"theta_hat", Json{{"names", r.theta_hat.names}, {"values", vec_to_json(r.theta_hat.values)}}},
         {"loglik", json_number(r.loglik)},
         {"gradient_norm", json_number(r.gradient_norm)},
         {"iterations", r.iterations},
         {"converged", r.converged}};
  if (r.covariance) j["covariance"] = mat_to_json(*r.covariance);
  if (r.std_errors) j["std_errors"] = vec_to_json(*r.std_errors);
  return j;
}

EstimationResult estimation_from_json(const Json& j) {
  EstimationResult r;
  r.theta_hat = ParamVector(vec_from_json(j.at("theta_hat").at("values")),
                            j.at("theta_hat").at("names").get<std::vector<std::string>>());
  r.loglik = json_to_double(j.at("loglik"));
  r.gradient_norm = json_to_double(j.at("gradient_norm"));
  r.iterations = j.at("iterations").get<int>();
  r.converged = j.at("converged").get<bool>();
  if (j.contains("covariance")) r.covariance = mat_from_json(j.at("covariance"));
  if (j.contains("std_errors")) r.std_errors = vec_from_json(j.at("std_errors"));
  return r;
}

Json counterfactual_to_json(const TypeSpace& space, const CounterfactualResult& r) {
  return Json{{"type", "counterfactual"},
              {"method",
               r.method == CounterfactualMethod::kParametric ? "parametric" : "parameter_free"},
              {"iterations", r.iterations},
              {"converged", r.converged},
              {"n_tilde", vec_to_json(r.n_tilde)},
              {"m_tilde", vec_to_json(r.m_tilde)},
              {"ratios", matching_to_json(space, r.ratios)},
              {"new_matching", matching_to_json(space, r.new_matching)}};
}

CounterfactualResult counterfactual_from_json(const Json& j) {
  CounterfactualResult r;
  r.method = j.at("method").get<std::string>() == "parametric"
                 ? CounterfactualMethod::kParametric
                 : CounterfactualMethod::kParameterFree;
  r.iterations = j.at("iterations").get<int>();
  r.converged = j.at("converged").get<bool>();
  r.n_tilde = vec_from_json(j.at("n_tilde"));
  r.m_tilde = vec_from_json(j.at("m_tilde"));
  r.ratios = matching_from_json(j.at("ratios"));
  r.new_matching = matching_from_json(j.at("new_matching"));
  return r;
}

Json surplus_to_json(const TypeSpace& space, const SurplusTable& s) {
  Json prohibited = Json::array();
  for (int x = 0; x < s.phi.rows(); ++x) {
    Json row = Json::array();
    for (int y = 0; y < s.phi.cols(); ++y) row.push_back(static_cast<bool>(s.prohibited(x, y)));
    prohibited.push_back(std::move(row));
  }
  return Json{{"type", "surplus"},
              {"x_labels", space.x_labels()},
              {"y_labels", space.y_labels()},
              {"phi", mat_to_json(s.phi)},
              {"prohibited", std::move(prohibited)}};
}

void save_result_json(const Json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed: " + path);
}

Json load_result_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(std::string("invalid JSON in ") + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Family construction from config

namespace {

Mat table_param(const Json& cfg, const std::string& key, const TypeSpace& space,
                double default_value) {
  if (!cfg.contains(key)) return Mat::Constant(space.nx(), space.ny(), default_value);
  const Json& v = cfg.at(key);
  if (v.is_number()) return Mat::Constant(space.nx(), space.ny(), v.get<double>());
  if (v.is_string()) return load_table_csv(v.get<std::string>(), space, default_value);
  throw ConfigError("family parameter " + key + " must be a number or a CSV path");
}

AgeEdu parse_age_edu(const std::string& label) {
  const auto pos = label.find(':');
  if (pos == std::string::npos)
    throw ConfigError("choo-siow-184 labels must look like \"age:edu\", got " + label);
  try {
    return AgeEdu{std::stoi(label.substr(0, pos)), std::stoi(label.substr(pos + 1))};
  } catch (const std::exception&) {
    throw ConfigError("malformed age:edu label: " + label);
  }
}

}  // namespace

FamilyPtr make_family(const Json& family_cfg, const TypeSpace& space) {
  if (!family_cfg.contains("name")) throw ConfigError("family block needs a name");
  const std::string name = family_cfg.at("name").get<std::string>();
  if (name == "choo-siow") {
    if (family_cfg.contains("phi") || family_cfg.contains("phi_csv")) {
      Mat phi = family_cfg.contains("phi")
                    ? table_param(family_cfg, "phi", space, 0.0)
                    : load_table_csv(family_cfg.at("phi_csv").get<std::string>(), space, 0.0);
      return ChooSiowFamily::fixed_surplus(SurplusTable(std::move(phi)));
    }
    return ChooSiowFamily::free_surplus(space.nx(), space.ny());
  }
  if (name == "choo-siow-184") {
    std::vector<AgeEdu> xt, yt;
    for (const auto& lab : space.x_labels()) xt.push_back(parse_age_edu(lab));
    for (const auto& lab : space.y_labels()) yt.push_back(parse_age_edu(lab));
    return ChooSiowFamily::parametric_surplus(std::move(xt), std::move(yt));
  }
  if (name == "menzel") {
    return std::make_shared<MenzelFamily>(table_param(family_cfg, "alpha_weight", space, 0.0),
                                          table_param(family_cfg, "gamma_weight", space, 0.0));
  }
  if (name == "search") {
    Mat acc = table_param(family_cfg, "acceptance", space, 1.0);
    return std::make_shared<SearchMatchingFamily>(acc.array() != 0.0);
  }
  if (name == "etu-gkw") {
    return std::make_shared<EtuGkwFamily>(table_param(family_cfg, "tau", space, 1.0),
                                          table_param(family_cfg, "alpha_weight", space, 0.0),
                                          table_param(family_cfg, "gamma_weight", space, 0.0));
  }
  if (name == "harmonic-mean") {
    return std::make_shared<HarmonicMeanFamily>(table_param(family_cfg, "alpha", space, 0.0),
                                                table_param(family_cfg, "gamma", space, 0.0));
  }
  if (name == "cobb-douglas") {
    return std::make_shared<CobbDouglasFamily>(table_param(family_cfg, "p", space, 0.5),
                                               table_param(family_cfg, "q", space, 0.5));
  }
  throw ConfigError("unknown family: " + name);
}

Vec family_theta(const Json& family_cfg, const MatchingFamily& family) {
  if (family_cfg.contains("theta")) {
    Vec theta = vec_from_json(family_cfg.at("theta"));
    if (theta.size() != family.theta_dim())
      throw ConfigError("theta has dimension " + std::to_string(theta.size()) + ", expected " +
                        std::to_string(family.theta_dim()));
    return theta;
  }
  const std::string name = family_cfg.value("name", "");
  if (name == "menzel" || name == "etu-gkw") return Vec::Ones(2);
  if (name == "search") {
    Vec t(2);
    t << family_cfg.value("rho", 1.0), family_cfg.value("delta", 1.0);
    return t;
  }
  if (name == "harmonic-mean") return Vec::Ones(1);
  return Vec::Zero(family.theta_dim());
}

SolverOptions solver_options_from_json(const Json& cfg) {
  SolverOptions opts;
  if (cfg.is_null()) return opts;
  opts.tol = cfg.value("tol", opts.tol);
  opts.max_outer_iter = cfg.value("max_outer_iter", opts.max_outer_iter);
  opts.inner_tol = cfg.value("inner_tol", opts.inner_tol);
  opts.parallel = cfg.value("parallel", opts.parallel);
  const std::string method = cfg.value("method", "ipfp");
  if (method == "ipfp")
    opts.method = SolveMethod::kIpfp;
  else if (method == "newton")
    opts.method = SolveMethod::kNewton;
  else
    throw ConfigError("solver method must be ipfp or newton, got " + method);
  opts.validate();
  return opts;
}

FitOptions fit_options_from_json(const Json& cfg) {
  FitOptions opts;
  if (cfg.is_null()) return opts;
  if (cfg.contains("solver")) opts.solver = solver_options_from_json(cfg.at("solver"));
  opts.max_iter = cfg.value("max_iter", opts.max_iter);
  opts.grad_tol = cfg.value("grad_tol", opts.grad_tol);
  return opts;
}

}  // namespace meq
