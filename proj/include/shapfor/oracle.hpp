#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "shapfor/forest.hpp"
#include "shapfor/rng.hpp"
#include "shapfor/sensitivity.hpp"

namespace shapfor {

/// Deterministic function on [0,1]^p.
struct BlackBox {
    std::int32_t p = 0;
    std::function<double(std::span<const double>)> eval;
};

BlackBox as_black_box(const Forest& forest);

struct McEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
};

struct OracleBudget {
    std::int64_t n_outer = 10000;
    std::int64_t n_inner = 16;
    std::int64_t n_subsets = 64;
    std::int64_t n_variance = 1000000;
};

/// Double-loop estimate of Var(E[f | X_P]): variance of the inner means less
/// the average inner-mean sampling variance. Standard error by jackknife over
/// outer samples.
McEstimate mc_cost(const BlackBox& fn, const SubsetMask& P, std::int64_t n_outer, std::int64_t n_inner, Rng& rng);

/// Mean of mc_cost(P ∪ {j}) - mc_cost(P) over coin-flip subsets P of [p] \ {j}.
McEstimate mc_shapley(const BlackBox& fn, std::int32_t j, std::int64_t n_subsets, std::int64_t n_outer,
                      std::int64_t n_inner, Rng& rng);

/// Sample variance over N uniform points; stderr from the fourth central moment.
McEstimate mc_variance(const BlackBox& fn, std::int64_t N, Rng& rng);

/// Runs the oracle for every input and packages it in the shared report layout
/// (method "mc"); intervals are normal approximations at the requested levels.
SensitivityReport oracle_report(const BlackBox& fn, const OracleBudget& budget, std::span<const double> levels,
                                std::uint64_t seed, std::span<const std::string> names = {});

}  // namespace shapfor
