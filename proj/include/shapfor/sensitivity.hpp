#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shapfor/box_table.hpp"
#include "shapfor/forest.hpp"

namespace shapfor {

/// Only the product-uniform measure on [0,1]^p is implemented.
enum class InputMeasure { ProductUniform };

/// Subset P of the inputs {0, ..., p-1}.
class SubsetMask {
public:
    explicit SubsetMask(std::int32_t p) : in_(static_cast<std::size_t>(p), 0) {}
    SubsetMask(std::int32_t p, std::initializer_list<std::int32_t> members);
    SubsetMask(std::int32_t p, std::span<const std::int32_t> members);
    static SubsetMask all(std::int32_t p);
    /// Subset whose members are the set bits of `bits` (p <= 63).
    static SubsetMask from_bits(std::int32_t p, std::uint64_t bits);

    std::int32_t p() const { return static_cast<std::int32_t>(in_.size()); }
    bool contains(std::int32_t j) const { return in_[static_cast<std::size_t>(j)] != 0; }
    std::int32_t size() const;
    std::vector<std::int32_t> members() const;

    void insert(std::int32_t j);
    void erase(std::int32_t j);
    SubsetMask with(std::int32_t j) const;
    SubsetMask without(std::int32_t j) const;
    SubsetMask complement() const;

    bool operator==(const SubsetMask&) const = default;

private:
    std::vector<char> in_;
};

/// c_P = Var(E[f(X) | X_P]) for the forest under the uniform measure, clamped at 0.
double cost(const BoxTable& table, const SubsetMask& P);
double cost(const Forest& forest, const SubsetMask& P);

/// c_{P ∪ {j}} - c_P, summed over leaf pairs that both split on j.
double cost_difference(const BoxTable& table, const SubsetMask& P, std::int32_t j);
double cost_difference(const Forest& forest, const SubsetMask& P, std::int32_t j);

inline constexpr std::int32_t kMaxInteractionOrder = 12;

/// Möbius-inverted interaction variance V_P = sum_{Q ⊆ P} (-1)^{|P|-|Q|} c_Q.
double sobol_interaction(const BoxTable& table, const SubsetMask& P);
double sobol_interaction(const Forest& forest, const SubsetMask& P);

double sobol_main(const BoxTable& table, std::int32_t j);
double sobol_main(const Forest& forest, std::int32_t j);
/// Var f - c_{[p] \ {j}}.
double sobol_total(const BoxTable& table, std::int32_t j);
double sobol_total(const Forest& forest, std::int32_t j);

/// Exact Shapley effect. Each leaf pair sharing axis j contributes its
/// ordering-averaged marginal term, so the cost is linear in p.
double shapley_exact(const BoxTable& table, std::int32_t j);
double shapley_exact(const Forest& forest, std::int32_t j);

/// One coin-flip subset of [p] \ {j}, from the stream of (seed, draw, j, l).
SubsetMask random_subset(std::int32_t p, std::int32_t j, std::uint64_t seed, std::uint64_t draw, std::uint64_t l);

/// Per-draw random-subset Shapley values, averaged over m subsets each.
/// Values are in the ensemble's scaled-response units.
std::vector<double> shapley_sampled(const PosteriorEnsemble& ensemble, std::int32_t j, std::int32_t m,
                                    std::uint64_t seed);
/// Same estimator for a single draw `draw` of a forest.
double shapley_sampled_draw(const BoxTable& table, std::int32_t j, std::int32_t m, std::uint64_t seed,
                            std::uint64_t draw);

struct LipschitzGap {
    double lhs;
    double rhs;
};
/// |c_P(f) - c_P(f0)| against 4 max(B(f), B(f0)) ||f - f0||_2.
LipschitzGap lipschitz_gap(const Forest& f, const Forest& f0, const SubsetMask& P);

// ---------------------------------------------------------------------------
// Posterior summaries

struct IndexEstimate {
    double point = 0.0;
    std::map<double, double> quantiles;
    std::optional<std::vector<double>> draws;

    double lo() const { return quantiles.empty() ? point : quantiles.begin()->second; }
    double hi() const { return quantiles.empty() ? point : quantiles.rbegin()->second; }
};

/// Mean and empirical quantiles (linear interpolation between order statistics).
IndexEstimate summarize(std::span<const double> values, std::span<const double> levels, bool keep_draws = false);
double empirical_quantile(std::vector<double> sorted_values, double level);

struct InputIndices {
    std::int32_t input = 0;
    std::string name;
    IndexEstimate V, T, S;
    IndexEstimate V_norm, T_norm, S_norm;
};

enum class Normalization { Raw, Normalized, Both };

struct ReportOptions {
    std::int32_t m = 1;
    std::vector<double> levels{0.025, 0.975};
    Normalization normalization = Normalization::Both;
    /// Exact Shapley per draw when p <= exact_threshold; random subsets otherwise.
    std::int32_t exact_threshold = 12;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    bool keep_draws = false;
};

struct SensitivityReport {
    std::string method = "bart";
    std::string shapley_mode;
    std::string normalization_convention = "per-draw";
    std::int32_t p = 0;
    std::int32_t m = 1;
    std::size_t n_draw = 0;
    std::uint64_t seed = 0;
    std::vector<double> levels;
    Normalization normalization = Normalization::Both;
    std::vector<InputIndices> inputs;
    IndexEstimate variance;  ///< raw units
    IndexEstimate sigma2;    ///< raw units
    std::map<std::string, std::string> extra;  ///< echoed configuration
};

SensitivityReport assemble_report(const PosteriorEnsemble& ensemble, const ReportOptions& options,
                                  std::span<const std::string> names = {});

}  // namespace shapfor
