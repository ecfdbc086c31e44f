#pragma once

#include "meq/counterfactual.hpp"
#include "meq/estimation.hpp"

#include <json.hpp>

#include <string>

namespace meq {

using Json = nlohmann::json;

struct LabeledMatching {
  TypeSpace space;
  Matching matching;
};

// Matching CSV, header "x_label,y_label,mass": one row per nonzero cell,
// label "0" encodes singlehood on either side, lines starting with '#' are
// comments. Labels enter the type space in first-appearance order.
LabeledMatching load_matching_csv(const std::string& path);
void save_matching_csv(const TypeSpace& space, const Matching& matching,
                       const std::string& path);

// Margins CSV, header "side,label,mass" with side in {M, W}; every type of
// the given space must be covered exactly once.
Market load_margins_csv(const std::string& path, const TypeSpace& space);

// Per-pair table CSV, header "x_label,y_label,value"; missing cells take the
// default value.
Mat load_table_csv(const std::string& path, const TypeSpace& space, double default_value);

// Doubles serialize as JSON numbers; NaN and infinities as the strings
// "nan", "inf", "-inf" (never as null).
Json json_number(double v);
double json_to_double(const Json& j);

Json matching_to_json(const TypeSpace& space, const Matching& m);
Matching matching_from_json(const Json& j);

Json equilibrium_to_json(const TypeSpace& space, const EquilibriumSolution& sol);
Json estimation_to_json(const EstimationResult& r);
Json counterfactual_to_json(const TypeSpace& space, const CounterfactualResult& r);
Json surplus_to_json(const TypeSpace& space, const SurplusTable& s);

EquilibriumSolution equilibrium_from_json(const Json& j);
EstimationResult estimation_from_json(const Json& j);
CounterfactualResult counterfactual_from_json(const Json& j);

void save_result_json(const Json& j, const std::string& path);
Json load_result_json(const std::string& path);

// Family construction from a config block {"name": ..., family parameters}.
// Table-valued parameters are either a constant (number) or a CSV path.
FamilyPtr make_family(const Json& family_cfg, const TypeSpace& space);
// Default theta for a configured family ({} entries filled from the block).
Vec family_theta(const Json& family_cfg, const MatchingFamily& family);

SolverOptions solver_options_from_json(const Json& cfg);
FitOptions fit_options_from_json(const Json& cfg);

}  // namespace meq
