#include "helpers.hpp"
#include "meq/io.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

using namespace meq;
using namespace meq::testing;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/meq_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
  void write(const std::string& content) {
    std::ofstream out(path);
    out << content;
  }
};

std::string fixture(const char* name) { return std::string(MEQ_FIXTURES_DIR) + "/" + name; }

}  // namespace

TEST_CASE("matching csv loader") {
  SUBCASE("education fixture") {
    LabeledMatching lm = load_matching_csv(fixture("edu3x3.csv"));
    CHECK(lm.space.nx() == 3);
    CHECK(lm.space.ny() == 3);
    const int hs = lm.space.x_index("HS");
    CHECK(lm.matching.mu(hs, lm.space.y_index("HS")) == doctest::Approx(573.96));
    CHECK(lm.matching.mu_x0[hs] == doctest::Approx(8036.98));
    // margins reproduce the published totals
    ObservedData data = ObservedData::from_matching(lm.space, lm.matching);
    CHECK(data.market.n[hs] == doctest::Approx(8790.0).epsilon(1e-12));
    CHECK(data.market.m[lm.space.y_index("Col")] == doctest::Approx(4720.0).epsilon(1e-12));
  }
  SUBCASE("singles only") {
    TempFile f("singles.csv");
    f.write("x_label,y_label,mass\na,0,1.5\n0,b,2.5\n");
    LabeledMatching lm = load_matching_csv(f.path);
    CHECK(lm.matching.mu(0, 0) == 0.0);
    CHECK(lm.matching.mu_x0[0] == 1.5);
    CHECK(lm.matching.mu_0y[0] == 2.5);
  }
  SUBCASE("parse errors carry line numbers") {
    TempFile f("bad.csv");
    f.write("x_label,y_label,mass\na,b,1.0\na,b,2.0\n");
    CHECK_THROWS_WITH_AS(load_matching_csv(f.path), "duplicate cell a,b (line 3)", ParseError);
    f.write("x_label,y_label,mass\na,b,-1.0\n");
    CHECK_THROWS_WITH_AS(load_matching_csv(f.path), "negative mass: -1.0 (line 2)", ParseError);
    f.write("x_label,y_label,mass\n0,0,1.0\n");
    CHECK_THROWS_WITH_AS(load_matching_csv(f.path), "both labels are \"0\" (line 2)",
                         ParseError);
    f.write("x_label,y_label,mass\na,b\n");
    CHECK_THROWS_AS(load_matching_csv(f.path), ParseError);
    f.write("wrong,header,here\n");
    CHECK_THROWS_AS(load_matching_csv(f.path), ParseError);
  }
}

TEST_CASE("matching csv round trip is bit exact") {
  Rng rng(3);
  const int nx = 3, ny = 4;
  Mat mu(nx, ny);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y) mu(x, y) = rng.uniform(0.0, 2.0);
  Vec sx(nx), sy(ny);
  for (int x = 0; x < nx; ++x) sx[x] = rng.uniform(0.1, 2.0);
  for (int y = 0; y < ny; ++y) sy[y] = rng.uniform(0.1, 2.0);
  const Matching m(mu, sx, sy);
  const TypeSpace space = TypeSpace::indexed(nx, ny);

  TempFile f("roundtrip.csv");
  save_matching_csv(space, m, f.path);
  LabeledMatching lm = load_matching_csv(f.path);
  REQUIRE(lm.space.nx() == nx);
  REQUIRE(lm.space.ny() == ny);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y) {
      const int xi = lm.space.x_index(space.x_labels()[x]);
      const int yi = lm.space.y_index(space.y_labels()[y]);
      CHECK(lm.matching.mu(xi, yi) == m.mu(x, y));  // exact
    }
  // fixture files round trip too
  LabeledMatching edu = load_matching_csv(fixture("edu3x3.csv"));
  TempFile f2("edu_roundtrip.csv");
  save_matching_csv(edu.space, edu.matching, f2.path);
  LabeledMatching edu2 = load_matching_csv(f2.path);
  CHECK((edu.matching.mu - edu2.matching.mu).cwiseAbs().maxCoeff() == 0.0);
  CHECK((edu.matching.mu_x0 - edu2.matching.mu_x0).cwiseAbs().maxCoeff() == 0.0);
  CHECK((edu.matching.mu_0y - edu2.matching.mu_0y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("margins csv") {
  LabeledMatching edu = load_matching_csv(fixture("edu3x3.csv"));
  SUBCASE("aid fixture") {
    Market aid = load_margins_csv(fixture("edu3x3_aid.csv"), edu.space);
    CHECK(aid.n[edu.space.x_index("Col")] == doctest::Approx(4400.0));
    CHECK(aid.m[edu.space.y_index("HS")] == doctest::Approx(10290.0));
  }
  SUBCASE("unknown label and missing coverage") {
    TempFile f("margins.csv");
    f.write("side,label,mass\nM,NoSuch,1.0\n");
    CHECK_THROWS_WITH_AS(load_margins_csv(f.path, edu.space),
                         "unknown men's label: NoSuch (line 2)", ParseError);
    f.write("side,label,mass\nX,HS,1.0\n");
    CHECK_THROWS_AS(load_margins_csv(f.path, edu.space), ParseError);
    f.write("side,label,mass\nM,HS,1.0\n");
    CHECK_THROWS_AS(load_margins_csv(f.path, edu.space), Error);  // incomplete
  }
}

TEST_CASE("json number convention") {
  CHECK(json_number(1.5).is_number());
  CHECK(json_number(-std::numeric_limits<double>::infinity()) == "-inf");
  CHECK(json_number(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(json_number(std::nan("")) == "nan");
  CHECK(json_to_double(Json("-inf")) == -std::numeric_limits<double>::infinity());
  CHECK(json_to_double(Json(2.25)) == 2.25);
  // a dumped document never contains a bare null from non-finite values
  Json j{{"loglik", json_number(-std::numeric_limits<double>::infinity())}};
  CHECK(j.dump().find("null") == std::string::npos);
  CHECK(j.dump().find("-inf") != std::string::npos);
}

TEST_CASE("result json round trips") {
  Rng rng(5);
  SUBCASE("estimation result") {
    EstimationResult r;
    r.theta_hat = ParamVector((Vec(2) << 0.5123456789012345, -0.25).finished(),
                              {"alpha_scale", "gamma_scale"});
    r.loglik = -1.6479184330021645;
    r.gradient_norm = 3.25e-9;
    r.iterations = 17;
    r.converged = true;
    r.covariance = (Mat(2, 2) << 1.0, 0.25, 0.25, 2.0).finished();
    r.std_errors = (Vec(2) << 0.1, 0.2).finished();
    const Json j = estimation_to_json(r);
    CHECK(j.at("type") == "estimation");
    CHECK(j.contains("theta_hat"));
    CHECK(j.contains("loglik"));
    CHECK(j.contains("converged"));
    TempFile f("est.json");
    save_result_json(j, f.path);
    EstimationResult back = estimation_from_json(load_result_json(f.path));
    CHECK(back.theta_hat.values[0] == r.theta_hat.values[0]);  // bit exact
    CHECK(back.loglik == r.loglik);
    CHECK(back.gradient_norm == r.gradient_norm);
    CHECK((*back.covariance - *r.covariance).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("negative-infinity likelihood sentinel") {
    EstimationResult r;
    r.theta_hat = ParamVector(Vec::Zero(1), {"tau"});
    r.loglik = -std::numeric_limits<double>::infinity();
    TempFile f("inf.json");
    save_result_json(estimation_to_json(r), f.path);
    const std::string text = [&] {
      std::ifstream in(f.path);
      return std::string(std::istreambuf_iterator<char>(in), {});
    }();
    CHECK(text.find("\"-inf\"") != std::string::npos);
    EstimationResult back = estimation_from_json(load_result_json(f.path));
    CHECK(back.loglik == -std::numeric_limits<double>::infinity());
  }
  SUBCASE("counterfactual result carries its method tag") {
    CounterfactualResult r;
    r.method = CounterfactualMethod::kParameterFree;
    r.iterations = 4;
    r.converged = true;
    r.n_tilde = Vec::Ones(1);
    r.m_tilde = Vec::Ones(1);
    r.ratios = Matching(Mat::Ones(1, 1), Vec::Ones(1), Vec::Ones(1));
    r.new_matching = Matching(Mat::Constant(1, 1, 0.5), Vec::Constant(1, 0.5),
                              Vec::Constant(1, 0.5));
    const Json j = counterfactual_to_json(TypeSpace::indexed(1, 1), r);
    CHECK(j.at("method") == "parameter_free");
    TempFile f("cf.json");
    save_result_json(j, f.path);
    CounterfactualResult back = counterfactual_from_json(load_result_json(f.path));
    CHECK(back.method == CounterfactualMethod::kParameterFree);
    CHECK(back.new_matching.mu(0, 0) == 0.5);
  }
  SUBCASE("equilibrium result") {
    EquilibriumSolution sol;
    sol.converged = true;
    sol.outer_iterations = 9;
    sol.residual_sup_norm = 7.125e-13;
    sol.matching = Matching(Mat::Constant(2, 2, 0.125), Vec::Constant(2, 0.75),
                            Vec::Constant(2, 0.75));
    TempFile f("eq.json");
    save_result_json(equilibrium_to_json(TypeSpace::indexed(2, 2), sol), f.path);
    EquilibriumSolution back = equilibrium_from_json(load_result_json(f.path));
    CHECK(back.residual_sup_norm == sol.residual_sup_norm);
    CHECK(back.matching.mu(1, 1) == 0.125);
  }
}

TEST_CASE("family construction from config") {
  const TypeSpace space = TypeSpace::indexed(2, 2);
  SUBCASE("catalogue names") {
    CHECK(make_family(Json{{"name", "choo-siow"}}, space)->descriptor().name == "choo-siow");
    CHECK(make_family(Json{{"name", "menzel"}}, space)->theta_dim() == 2);
    CHECK(make_family(Json{{"name", "search"}}, space)->theta_dim() == 2);
    CHECK(make_family(Json{{"name", "etu-gkw"}}, space)->theta_dim() == 2);
    CHECK(make_family(Json{{"name", "harmonic-mean"}}, space)->theta_dim() == 1);
    CHECK(make_family(Json{{"name", "cobb-douglas"}}, space)->theta_dim() == 4);
    CHECK_THROWS_AS(make_family(Json{{"name", "nope"}}, space), ConfigError);
  }
  SUBCASE("constant tables") {
    auto fam = make_family(Json{{"name", "choo-siow"}, {"phi", 2.0}}, space);
    CHECK(fam->value(Vec(), 0, 0, 4.0, 9.0) == doctest::Approx(6.0 * std::exp(1.0)));
  }
  SUBCASE("age-edu labels for the 184-parameter surplus") {
    TypeSpace ae({"1:1", "6:2"}, {"8:3", "2:1"});
    auto fam = make_family(Json{{"name", "choo-siow-184"}}, ae);
    CHECK(fam->theta_dim() == 184);
    CHECK_THROWS_AS(make_family(Json{{"name", "choo-siow-184"}}, space), ConfigError);
  }
}
