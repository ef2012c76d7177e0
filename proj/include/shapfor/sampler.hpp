#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shapfor/forest.hpp"
#include "shapfor/rng.hpp"

namespace shapfor {

/// Raw regression data, row-major X (n x p).
struct Dataset {
    std::size_t n = 0;
    std::int32_t p = 0;
    std::vector<double> X;
    std::vector<double> y;
    std::vector<std::string> names;

    std::span<const double> row(std::size_t i) const {
        return {X.data() + i * static_cast<std::size_t>(p), static_cast<std::size_t>(p)};
    }
    double at(std::size_t i, std::int32_t j) const { return X[i * static_cast<std::size_t>(p) + static_cast<std::size_t>(j)]; }

    /// Throws ValidationError on n < 2, shape mismatch or non-finite entries.
    void validate() const;
};

/// Allowed cut values per input dimension, strictly increasing, inside (0,1).
struct SplitNet {
    std::vector<std::vector<double>> cuts;

    /// Number of cuts c with lo < c < hi on `dim`.
    std::size_t count_inside(std::int32_t dim, Interval iv) const;
    /// The k-th cut strictly inside iv on `dim`.
    double nth_inside(std::int32_t dim, Interval iv, std::size_t k) const;
};

enum class SplitNetMode { UniformGrid, ObservedValues };

struct SamplerConfig {
    std::int32_t num_trees = 200;
    std::int32_t n_burn = 1000;
    std::int32_t n_draw = 1000;
    std::int32_t thin = 1;
    double alpha_split = 0.95;
    double beta_split = 2.0;
    double k = 2.0;
    double nu = 3.0;
    double q = 0.90;
    bool sparsity = false;
    double sparsity_a = 1.0;
    SplitNetMode splitnet_mode = SplitNetMode::UniformGrid;
    std::int32_t grid_size = 100;
    std::int32_t min_leaf_obs = 1;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Dataset after mapping covariates into [0,1]^p and responses to unit range.
struct ScaledData {
    std::size_t n = 0;
    std::int32_t p = 0;
    std::vector<double> X;
    std::vector<double> y;
    std::vector<AffineMap> x_scaling;
    AffineMap y_scaling;

    std::span<const double> row(std::size_t i) const {
        return {X.data() + i * static_cast<std::size_t>(p), static_cast<std::size_t>(p)};
    }
    double at(std::size_t i, std::int32_t j) const { return X[i * static_cast<std::size_t>(p) + static_cast<std::size_t>(j)]; }
};

/// Per-dimension min-max map; constant columns map to 0 with unit scale.
std::pair<std::vector<double>, std::vector<AffineMap>> scale_inputs(const Dataset& data);
/// Centre at midrange, divide by range. Throws on constant y.
std::pair<std::vector<double>, AffineMap> scale_outputs(std::span<const double> y);
ScaledData scale_dataset(const Dataset& data);

SplitNet make_splitnet(const ScaledData& data, const SamplerConfig& config);

/// Per-leaf sufficient statistics of residuals.
struct LeafStats {
    std::size_t n = 0;
    double sum = 0.0;
    double sum_sq = 0.0;
};

/// Residual log-likelihood of one leaf with its mean integrated out, without
/// the constant shared by every tree on the same residuals.
double leaf_log_marginal(const LeafStats& s, double sigma2, double leaf_prior_var);

/// Sum of leaf_log_marginal over the tree's leaves. Returns nullopt when some
/// leaf holds fewer than `min_leaf_obs` residuals.
std::optional<double> log_marginal_likelihood(const Tree& tree, const ScaledData& data,
                                              std::span<const double> residuals, double sigma2,
                                              double leaf_prior_var, std::int32_t min_leaf_obs = 1);

/// Tree-structure prior: a node at depth d splits with probability
/// alpha (1+d)^-beta if it admits any cut, and the rule picks a dimension
/// from s renormalised over admissible dimensions and a cut uniformly.
struct TreePrior {
    double alpha = 0.95;
    double beta = 2.0;

    double split_prob(std::int32_t depth) const;
};

struct MoveProposal {
    enum class Kind { Birth, Death };
    Kind kind = Kind::Birth;
    bool valid = false;
    std::int32_t node = -1;  ///< Leaf to split (birth) or node to collapse (death).
    std::int32_t dim = -1;
    double cut = 0.0;
    double log_forward = 0.0;   ///< log q(x -> y)
    double log_reverse = 0.0;   ///< log q(y -> x)
    double log_prior_ratio = 0.0;  ///< log pi(y) - log pi(x), structure and rule only

    /// log of the Metropolis-Hastings ratio excluding the likelihood.
    double log_ratio_without_likelihood() const { return log_prior_ratio + log_reverse - log_forward; }
};

/// Log probability of the tree's structure and split rules under the prior.
double log_tree_prior(const Tree& tree, const SplitNet& net, std::span<const double> s, const TreePrior& prior);

MoveProposal propose_move(const Tree& tree, const SplitNet& net, std::span<const double> s,
                          const TreePrior& prior, Rng& rng);

/// Applies a valid proposal; new leaves get mu 0.
void apply_move(Tree& tree, const MoveProposal& move);

struct ChainState {
    Forest forest;
    std::vector<std::vector<double>> tree_fits;  ///< T x n fitted values
    std::vector<double> total_fit;
    double sigma2 = 1.0;
    std::vector<double> s;                       ///< split-dimension probabilities
    std::vector<std::int64_t> split_counts;

    /// Max |cached - recomputed| over all trees and training rows.
    double cache_error(const ScaledData& data) const;
};

struct SweepStats {
    std::int64_t proposed = 0;
    std::int64_t accepted = 0;
    std::int64_t births_accepted = 0;
    std::int64_t deaths_accepted = 0;
};

/// Fixed quantities derived from data and config.
struct SamplerContext {
    const ScaledData* data = nullptr;
    SplitNet net;
    TreePrior prior;
    double leaf_prior_var = 0.0;
    double lambda = 0.0;  ///< inverse-chi-square scale of the sigma2 prior
    SamplerConfig config;
};

SamplerContext make_context(const ScaledData& data, const SamplerConfig& config);
ChainState initial_state(const SamplerContext& ctx);
/// sigma2 prior scale so that P(sigma2 < sigma2_hat) = q under nu*lambda/chi2_nu.
double calibrate_lambda(double sigma2_hat, double nu, double q);

/// One backfitting sweep over all trees, then sigma2, then s (if sparsity is on).
/// Setting `structure_moves` false skips the birth/death step.
SweepStats gibbs_sweep(ChainState& state, const SamplerContext& ctx, Rng& rng, bool structure_moves = true);

struct FitDiagnostics {
    double acceptance_rate = 0.0;
    double sigma2_mean_raw = 0.0;
    std::int64_t sweeps = 0;
    double max_cache_error = 0.0;
};

struct FitResult {
    PosteriorEnsemble ensemble;
    FitDiagnostics diagnostics;
};

struct ProgressLine {
    std::int64_t sweep;
    double acceptance_rate;
    double sigma2;
};

FitResult fit_with_diagnostics(const Dataset& data, const SamplerConfig& config,
                               const std::function<void(const ProgressLine&)>& progress = {});
PosteriorEnsemble fit(const Dataset& data, const SamplerConfig& config);

}  // namespace shapfor
