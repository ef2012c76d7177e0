#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "shapfor/sensitivity.hpp"

namespace shapfor {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string summary;
    nlohmann::json detail;
    double seconds = 0.0;
};

/// A fitted-and-analysed scenario shared by the end-to-end criteria.
struct ScenarioRun {
    std::string name;
    SensitivityReport report;
    double fit_seconds = 0.0;
    double analyze_seconds = 0.0;
};

CriterionResult criterion_oracle_table(std::uint64_t seed);          // 1
CriterionResult criterion_oracle_equivalence(std::uint64_t seed);    // 2
CriterionResult criterion_exact_invariants(std::uint64_t seed);      // 3
CriterionResult criterion_subset_unbiased(std::uint64_t seed);       // 4
CriterionResult criterion_lipschitz(std::uint64_t seed);             // 5
ScenarioRun run_friedman_fit(std::uint64_t seed);
ScenarioRun run_morris_wide(std::uint64_t seed);
CriterionResult criterion_friedman_fit(const ScenarioRun& run);      // 6
CriterionResult criterion_morris_wide(const ScenarioRun& run);       // 7
CriterionResult criterion_nonnegative(const std::vector<const ScenarioRun*>& runs);  // 8
CriterionResult criterion_prior_fidelity(std::uint64_t seed);        // 9
CriterionResult criterion_coefficient_identities();                  // 10

const std::vector<std::string>& benchmark_suites();
/// Runs one named suite; throws ValidationError for an unknown name.
std::vector<CriterionResult> run_suite(const std::string& suite, std::uint64_t seed);

nlohmann::json to_json(const CriterionResult& r);

}  // namespace shapfor
