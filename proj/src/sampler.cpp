#include "shapfor/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>

namespace shapfor {

void Dataset::validate() const {
    if (n < 2) throw ValidationError("dataset needs at least 2 rows, got " + std::to_string(n));
    if (p < 1) throw ValidationError("dataset needs at least one input column");
    if (X.size() != n * static_cast<std::size_t>(p) || y.size() != n) {
        throw ValidationError("dataset shape mismatch");
    }
    for (std::size_t i = 0; i < X.size(); ++i) {
        if (!std::isfinite(X[i])) {
            throw ValidationError("non-finite covariate at row " + std::to_string(i / static_cast<std::size_t>(p)) +
                                  ", column " + std::to_string(i % static_cast<std::size_t>(p)));
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(y[i])) throw ValidationError("non-finite response at row " + std::to_string(i));
    }
}

void SamplerConfig::validate() const {
    if (num_trees < 1) throw ValidationError("num_trees must be >= 1");
    if (n_draw < 1) throw ValidationError("n_draw must be >= 1");
    if (n_burn < 0) throw ValidationError("n_burn must be >= 0");
    if (thin < 1) throw ValidationError("thin must be >= 1");
    if (!(alpha_split > 0.0 && alpha_split < 1.0)) throw ValidationError("alpha_split must lie in (0,1)");
    if (!(beta_split >= 0.0)) throw ValidationError("beta_split must be >= 0");
    if (!(k > 0.0)) throw ValidationError("k must be positive");
    if (!(nu > 0.0)) throw ValidationError("nu must be positive");
    if (!(q > 0.0 && q < 1.0)) throw ValidationError("q must lie in (0,1)");
    if (sparsity && !(sparsity_a > 0.0)) throw ValidationError("sparsity concentration must be positive");
    if (splitnet_mode == SplitNetMode::UniformGrid && grid_size < 1) throw ValidationError("grid size must be >= 1");
    if (min_leaf_obs < 1) throw ValidationError("min_leaf_obs must be >= 1");
}

std::size_t SplitNet::count_inside(std::int32_t dim, Interval iv) const {
    const auto& c = cuts[static_cast<std::size_t>(dim)];
    auto first = std::upper_bound(c.begin(), c.end(), iv.lo);
    auto last = std::lower_bound(first, c.end(), iv.hi);
    return static_cast<std::size_t>(last - first);
}

double SplitNet::nth_inside(std::int32_t dim, Interval iv, std::size_t k) const {
    const auto& c = cuts[static_cast<std::size_t>(dim)];
    auto first = std::upper_bound(c.begin(), c.end(), iv.lo);
    return *(first + static_cast<std::ptrdiff_t>(k));
}

std::pair<std::vector<double>, std::vector<AffineMap>> scale_inputs(const Dataset& data) {
    const auto p = static_cast<std::size_t>(data.p);
    std::vector<AffineMap> maps(p);
    for (std::size_t j = 0; j < p; ++j) {
        double lo = data.X[j], hi = data.X[j];
        for (std::size_t i = 1; i < data.n; ++i) {
            lo = std::min(lo, data.X[i * p + j]);
            hi = std::max(hi, data.X[i * p + j]);
        }
        maps[j] = hi > lo ? AffineMap{lo, hi - lo} : AffineMap{lo, 1.0};
    }
    std::vector<double> scaled(data.X.size());
    for (std::size_t i = 0; i < data.n; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            scaled[i * p + j] = std::clamp(maps[j].forward(data.X[i * p + j]), 0.0, 1.0);
        }
    }
    return {std::move(scaled), std::move(maps)};
}

std::pair<std::vector<double>, AffineMap> scale_outputs(std::span<const double> y) {
    if (y.empty()) throw ValidationError("empty response");
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    if (!(*hi > *lo)) throw ValidationError("response is constant; its scale is undefined");
    const AffineMap map{0.5 * (*lo + *hi), *hi - *lo};
    std::vector<double> out(y.size());
    std::transform(y.begin(), y.end(), out.begin(), [&](double v) { return map.forward(v); });
    return {std::move(out), map};
}

ScaledData scale_dataset(const Dataset& data) {
    data.validate();
    ScaledData s;
    s.n = data.n;
    s.p = data.p;
    std::tie(s.X, s.x_scaling) = scale_inputs(data);
    std::tie(s.y, s.y_scaling) = scale_outputs(data.y);
    return s;
}

SplitNet make_splitnet(const ScaledData& data, const SamplerConfig& config) {
    SplitNet net;
    net.cuts.resize(static_cast<std::size_t>(data.p));
    for (std::int32_t j = 0; j < data.p; ++j) {
        auto& c = net.cuts[static_cast<std::size_t>(j)];
        if (config.splitnet_mode == SplitNetMode::UniformGrid) {
            const std::int32_t g = config.grid_size;
            c.reserve(static_cast<std::size_t>(g));
            for (std::int32_t i = 1; i <= g; ++i) c.push_back(static_cast<double>(i) / (g + 1));
        } else {
            for (std::size_t i = 0; i < data.n; ++i) {
                const double v = data.X[i * static_cast<std::size_t>(data.p) + static_cast<std::size_t>(j)];
                if (v > 0.0 && v < 1.0) c.push_back(v);
            }
            std::sort(c.begin(), c.end());
            c.erase(std::unique(c.begin(), c.end()), c.end());
            if (c.empty()) {
                throw ValidationError("input column " + std::to_string(j) +
                                      " has no interior observed value to split on");
            }
        }
    }
    return net;
}

double leaf_log_marginal(const LeafStats& s, double sigma2, double leaf_prior_var) {
    const double nt = static_cast<double>(s.n) * leaf_prior_var;
    const double denom = sigma2 + nt;
    return 0.5 * std::log(sigma2 / denom) + leaf_prior_var * s.sum * s.sum / (2.0 * sigma2 * denom) -
           s.sum_sq / (2.0 * sigma2);
}

namespace {

std::vector<std::int32_t> assign_leaves(const Tree& tree, const ScaledData& data) {
    std::vector<std::int32_t> out(data.n);
    for (std::size_t i = 0; i < data.n; ++i) out[i] = tree.find_leaf(data.row(i));
    return out;
}

}  // namespace

std::optional<double> log_marginal_likelihood(const Tree& tree, const ScaledData& data,
                                              std::span<const double> residuals, double sigma2,
                                              double leaf_prior_var, std::int32_t min_leaf_obs) {
    std::vector<LeafStats> stats(static_cast<std::size_t>(tree.num_nodes()));
    const auto assign = assign_leaves(tree, data);
    for (std::size_t i = 0; i < data.n; ++i) {
        auto& s = stats[static_cast<std::size_t>(assign[i])];
        ++s.n;
        s.sum += residuals[i];
        s.sum_sq += residuals[i] * residuals[i];
    }
    double total = 0.0;
    for (std::int32_t leaf : tree.leaves()) {
        const auto& s = stats[static_cast<std::size_t>(leaf)];
        if (static_cast<std::int64_t>(s.n) < min_leaf_obs) return std::nullopt;
        total += leaf_log_marginal(s, sigma2, leaf_prior_var);
    }
    return total;
}

double TreePrior::split_prob(std::int32_t depth) const { return alpha * std::pow(1.0 + depth, -beta); }

namespace {

std::vector<Interval> node_intervals(const Tree& tree, std::int32_t node, std::int32_t p) {
    std::vector<Interval> ivs(static_cast<std::size_t>(p));
    std::int32_t child = node;
    std::int32_t parent = tree.node(node).parent;
    while (parent >= 0) {
        const TreeNode& n = tree.node(parent);
        auto& iv = ivs[static_cast<std::size_t>(n.dim)];
        if (n.left == child) {
            iv.hi = std::min(iv.hi, n.cut);
        } else {
            iv.lo = std::max(iv.lo, n.cut);
        }
        child = parent;
        parent = n.parent;
    }
    return ivs;
}

bool has_any_cut(const Tree& tree, std::int32_t node, const SplitNet& net) {
    const auto p = static_cast<std::int32_t>(net.cuts.size());
    const auto ivs = node_intervals(tree, node, p);
    for (std::int32_t d = 0; d < p; ++d) {
        if (net.count_inside(d, ivs[static_cast<std::size_t>(d)]) > 0) return true;
    }
    return false;
}

/// Total s-mass over dimensions that admit a cut at `node`.
double admissible_mass(const std::vector<Interval>& ivs, const SplitNet& net, std::span<const double> s) {
    double m = 0.0;
    for (std::size_t d = 0; d < ivs.size(); ++d) {
        if (s[d] > 0.0 && net.count_inside(static_cast<std::int32_t>(d), ivs[d]) > 0) m += s[d];
    }
    return m;
}

/// log prior probability of the split rule (dim, cut) at `node`.
double log_rule_prob(const Tree& tree, std::int32_t node, std::int32_t dim, const SplitNet& net,
                     std::span<const double> s) {
    const auto ivs = node_intervals(tree, node, static_cast<std::int32_t>(net.cuts.size()));
    const double mass = admissible_mass(ivs, net, s);
    const auto ncut = net.count_inside(dim, ivs[static_cast<std::size_t>(dim)]);
    return std::log(s[static_cast<std::size_t>(dim)] / mass) - std::log(static_cast<double>(ncut));
}

double effective_split_prob(const Tree& tree, std::int32_t node, const SplitNet& net, const TreePrior& prior) {
    return has_any_cut(tree, node, net) ? prior.split_prob(tree.depth(node)) : 0.0;
}

struct MoveCounts {
    std::vector<std::int32_t> good_leaves;
    std::vector<std::int32_t> collapsible;
    double birth_prob = 0.0;
};

MoveCounts move_counts(const Tree& tree, const SplitNet& net) {
    MoveCounts mc;
    for (std::int32_t leaf : tree.leaves()) {
        if (has_any_cut(tree, leaf, net)) mc.good_leaves.push_back(leaf);
    }
    mc.collapsible = tree.collapsible_nodes();
    if (mc.good_leaves.empty()) {
        mc.birth_prob = 0.0;
    } else {
        mc.birth_prob = mc.collapsible.empty() ? 1.0 : 0.5;
    }
    return mc;
}

/// log pi(split at node with children as leaves) - log pi(node as leaf).
double log_split_prior_gain(const Tree& split_tree, std::int32_t node, const SplitNet& net, const TreePrior& prior,
                            std::span<const double> s) {
    const TreeNode& n = split_tree.node(node);
    const double pg = prior.split_prob(split_tree.depth(node));
    const double pl = effective_split_prob(split_tree, n.left, net, prior);
    const double pr = effective_split_prob(split_tree, n.right, net, prior);
    return std::log(pg) + std::log1p(-pl) + std::log1p(-pr) + log_rule_prob(split_tree, node, n.dim, net, s) -
           std::log1p(-pg);
}

}  // namespace

double log_tree_prior(const Tree& tree, const SplitNet& net, std::span<const double> s, const TreePrior& prior) {
    double lp = 0.0;
    for (std::int32_t i = 0; i < tree.num_nodes(); ++i) {
        const TreeNode& n = tree.node(i);
        const double pg = effective_split_prob(tree, i, net, prior);
        if (n.is_leaf()) {
            lp += std::log1p(-pg);
        } else {
            lp += std::log(pg) + log_rule_prob(tree, i, n.dim, net, s);
        }
    }
    return lp;
}

MoveProposal propose_move(const Tree& tree, const SplitNet& net, std::span<const double> s,
                          const TreePrior& prior, Rng& rng) {
    const auto p = static_cast<std::int32_t>(net.cuts.size());
    MoveProposal mv;
    const MoveCounts here = move_counts(tree, net);
    if (uniform01(rng) < here.birth_prob) {
        mv.kind = MoveProposal::Kind::Birth;
        const std::int32_t leaf = here.good_leaves[uniform_index(rng, here.good_leaves.size())];
        const auto ivs = node_intervals(tree, leaf, p);
        const double mass = admissible_mass(ivs, net, s);
        if (!(mass > 0.0)) return mv;  // s puts no weight on any admissible dimension
        double u = uniform01(rng) * mass;
        std::int32_t dim = -1;
        for (std::int32_t d = 0; d < p; ++d) {
            const auto du = static_cast<std::size_t>(d);
            if (s[du] > 0.0 && net.count_inside(d, ivs[du]) > 0) {
                dim = d;
                u -= s[du];
                if (u < 0.0) break;
            }
        }
        const auto ncut = net.count_inside(dim, ivs[static_cast<std::size_t>(dim)]);
        mv.node = leaf;
        mv.dim = dim;
        mv.cut = net.nth_inside(dim, ivs[static_cast<std::size_t>(dim)], uniform_index(rng, ncut));

        Tree next = tree;
        next.split(leaf, dim, mv.cut);
        const MoveCounts there = move_counts(next, net);
        mv.log_forward = std::log(here.birth_prob) - std::log(static_cast<double>(here.good_leaves.size())) +
                         log_rule_prob(tree, leaf, dim, net, s);
        mv.log_reverse = std::log1p(-there.birth_prob) - std::log(static_cast<double>(there.collapsible.size()));
        mv.log_prior_ratio = log_split_prior_gain(next, leaf, net, prior, s);
        mv.valid = true;
        return mv;
    }

    mv.kind = MoveProposal::Kind::Death;
    if (here.collapsible.empty()) return mv;
    const std::int32_t node = here.collapsible[uniform_index(rng, here.collapsible.size())];
    mv.node = node;
    mv.dim = tree.node(node).dim;
    mv.cut = tree.node(node).cut;
    Tree next = tree;
    next.collapse(node);
    const MoveCounts there = move_counts(next, net);
    mv.log_forward = std::log1p(-here.birth_prob) - std::log(static_cast<double>(here.collapsible.size()));
    // The collapsed node is a good leaf of `next` because its old cut is admissible there.
    mv.log_reverse = std::log(there.birth_prob) - std::log(static_cast<double>(there.good_leaves.size())) +
                     log_rule_prob(next, node, mv.dim, net, s);
    mv.log_prior_ratio = -log_split_prior_gain(tree, node, net, prior, s);
    mv.valid = true;
    return mv;
}

void apply_move(Tree& tree, const MoveProposal& move) {
    if (!move.valid) return;
    if (move.kind == MoveProposal::Kind::Birth) {
        tree.split(move.node, move.dim, move.cut);
    } else {
        tree.collapse(move.node);
    }
}

double ChainState::cache_error(const ScaledData& data) const {
    double err = 0.0;
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
        for (std::size_t i = 0; i < data.n; ++i) {
            err = std::max(err, std::abs(tree_fits[t][i] - forest.trees[t].evaluate(data.row(i))));
        }
    }
    return err;
}

double calibrate_lambda(double sigma2_hat, double nu, double q) {
    const boost::math::chi_squared chi2(nu);
    return sigma2_hat * boost::math::quantile(chi2, 1.0 - q) / nu;
}

SamplerContext make_context(const ScaledData& data, const SamplerConfig& config) {
    config.validate();
    SamplerContext ctx;
    ctx.data = &data;
    ctx.config = config;
    ctx.net = make_splitnet(data, config);
    ctx.prior = TreePrior{config.alpha_split, config.beta_split};
    const double sigma_mu = 0.5 / (config.k * std::sqrt(static_cast<double>(config.num_trees)));
    ctx.leaf_prior_var = sigma_mu * sigma_mu;
    const double ybar = std::accumulate(data.y.begin(), data.y.end(), 0.0) / static_cast<double>(data.n);
    double ss = 0.0;
    for (double v : data.y) ss += (v - ybar) * (v - ybar);
    ctx.lambda = calibrate_lambda(ss / static_cast<double>(data.n - 1), config.nu, config.q);
    return ctx;
}

ChainState initial_state(const SamplerContext& ctx) {
    const ScaledData& data = *ctx.data;
    const auto T = static_cast<std::size_t>(ctx.config.num_trees);
    const double ybar = std::accumulate(data.y.begin(), data.y.end(), 0.0) / static_cast<double>(data.n);
    const double mu0 = ybar / static_cast<double>(T);
    ChainState st;
    st.forest.p = data.p;
    st.forest.trees.assign(T, Tree(mu0));
    st.tree_fits.assign(T, std::vector<double>(data.n, mu0));
    st.total_fit.assign(data.n, mu0 * static_cast<double>(T));
    double ss = 0.0;
    for (double v : data.y) ss += (v - ybar) * (v - ybar);
    st.sigma2 = ss / static_cast<double>(data.n - 1);
    st.s.assign(static_cast<std::size_t>(data.p), 1.0 / data.p);
    st.split_counts.assign(static_cast<std::size_t>(data.p), 0);
    return st;
}

namespace {

/// Log of a Gamma(shape, 1) draw, stable for small shapes.
double log_gamma_draw(double shape, Rng& rng) {
    if (shape < 1.0) {
        std::gamma_distribution<double> g(shape + 1.0, 1.0);
        double u = uniform01(rng);
        while (u == 0.0) u = uniform01(rng);
        return std::log(g(rng)) + std::log(u) / shape;
    }
    std::gamma_distribution<double> g(shape, 1.0);
    return std::log(g(rng));
}

std::vector<double> draw_dirichlet(std::span<const double> conc, Rng& rng) {
    std::vector<double> logs(conc.size());
    for (std::size_t i = 0; i < conc.size(); ++i) logs[i] = log_gamma_draw(conc[i], rng);
    const double mx = *std::max_element(logs.begin(), logs.end());
    double z = 0.0;
    for (double& v : logs) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double& v : logs) v /= z;
    return logs;
}

void recount_splits(ChainState& st) {
    std::fill(st.split_counts.begin(), st.split_counts.end(), 0);
    for (const auto& t : st.forest.trees) {
        for (const auto& n : t.nodes()) {
            if (!n.is_leaf()) ++st.split_counts[static_cast<std::size_t>(n.dim)];
        }
    }
}

}  // namespace

SweepStats gibbs_sweep(ChainState& st, const SamplerContext& ctx, Rng& rng, bool structure_moves) {
    const ScaledData& data = *ctx.data;
    const std::size_t n = data.n;
    const double tau2 = ctx.leaf_prior_var;
    SweepStats stats;
    std::vector<double> resid(n);
    std::normal_distribution<double> normal(0.0, 1.0);

    for (std::size_t t = 0; t < st.forest.trees.size(); ++t) {
        Tree& tree = st.forest.trees[t];
        auto& fit = st.tree_fits[t];
        for (std::size_t i = 0; i < n; ++i) resid[i] = data.y[i] - st.total_fit[i] + fit[i];

        auto assign = assign_leaves(tree, data);
        if (structure_moves) {
            const MoveProposal mv = propose_move(tree, ctx.net, st.s, ctx.prior, rng);
            ++stats.proposed;
            if (mv.valid) {
                LeafStats parent, left, right;
                const TreeNode& target = tree.node(mv.node);
                for (std::size_t i = 0; i < n; ++i) {
                    const std::int32_t a = assign[i];
                    const bool in_parent = mv.kind == MoveProposal::Kind::Birth
                                               ? a == mv.node
                                               : (a == target.left || a == target.right);
                    if (!in_parent) continue;
                    const double r = resid[i];
                    const bool goes_left = data.at(i, mv.dim) < mv.cut;
                    LeafStats& side = goes_left ? left : right;
                    ++side.n;
                    side.sum += r;
                    side.sum_sq += r * r;
                    ++parent.n;
                    parent.sum += r;
                    parent.sum_sq += r * r;
                }
                const auto min_obs = static_cast<std::size_t>(ctx.config.min_leaf_obs);
                const bool occupancy_ok = left.n >= min_obs && right.n >= min_obs;
                if (mv.kind == MoveProposal::Kind::Death || occupancy_ok) {
                    double loglik = leaf_log_marginal(left, st.sigma2, tau2) +
                                    leaf_log_marginal(right, st.sigma2, tau2) -
                                    leaf_log_marginal(parent, st.sigma2, tau2);
                    if (mv.kind == MoveProposal::Kind::Death) loglik = -loglik;
                    const double log_accept = loglik + mv.log_ratio_without_likelihood();
                    if (std::log(uniform01(rng)) < log_accept) {
                        apply_move(tree, mv);
                        ++stats.accepted;
                        if (mv.kind == MoveProposal::Kind::Birth) {
                            ++stats.births_accepted;
                        } else {
                            ++stats.deaths_accepted;
                        }
                        assign = assign_leaves(tree, data);
                    }
                }
            }
        }

        std::vector<LeafStats> leaf(static_cast<std::size_t>(tree.num_nodes()));
        for (std::size_t i = 0; i < n; ++i) {
            auto& s = leaf[static_cast<std::size_t>(assign[i])];
            ++s.n;
            s.sum += resid[i];
        }
        for (std::int32_t l : tree.leaves()) {
            const auto& s = leaf[static_cast<std::size_t>(l)];
            const double denom = st.sigma2 + static_cast<double>(s.n) * tau2;
            const double m = tau2 * s.sum / denom;
            const double sd = std::sqrt(st.sigma2 * tau2 / denom);
            tree.set_mu(l, m + sd * normal(rng));
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double f = tree.node(assign[i]).mu;
            st.total_fit[i] += f - fit[i];
            fit[i] = f;
        }
    }

    double ssr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = data.y[i] - st.total_fit[i];
        ssr += e * e;
    }
    const double shape = 0.5 * (ctx.config.nu + static_cast<double>(n));
    const double rate = 0.5 * (ctx.config.nu * ctx.lambda + ssr);
    std::gamma_distribution<double> gamma(shape, 1.0);
    st.sigma2 = rate / gamma(rng);

    recount_splits(st);
    if (ctx.config.sparsity) {
        std::vector<double> conc(st.s.size());
        const double base = ctx.config.sparsity_a / static_cast<double>(st.s.size());
        for (std::size_t j = 0; j < conc.size(); ++j) conc[j] = base + static_cast<double>(st.split_counts[j]);
        st.s = draw_dirichlet(conc, rng);
    }
    return stats;
}

FitResult fit_with_diagnostics(const Dataset& raw, const SamplerConfig& config,
                               const std::function<void(const ProgressLine&)>& progress) {
    const ScaledData data = scale_dataset(raw);
    const SamplerContext ctx = make_context(data, config);
    ChainState st = initial_state(ctx);
    Rng rng(derive_seed(config.seed, {0x5a3d1e}));

    FitResult out;
    out.ensemble.p = data.p;
    out.ensemble.x_scaling = data.x_scaling;
    out.ensemble.y_scaling = data.y_scaling;
    out.ensemble.draws.reserve(static_cast<std::size_t>(config.n_draw));

    const std::int64_t total =
        static_cast<std::int64_t>(config.n_burn) + static_cast<std::int64_t>(config.n_draw) * config.thin;
    std::int64_t proposed = 0, accepted = 0;
    double sigma2_sum = 0.0;
    for (std::int64_t sweep = 1; sweep <= total; ++sweep) {
        const SweepStats s = gibbs_sweep(st, ctx, rng);
        proposed += s.proposed;
        accepted += s.accepted;
        if (sweep % 100 == 0) {
            out.diagnostics.max_cache_error = std::max(out.diagnostics.max_cache_error, st.cache_error(data));
            // Refresh the running total to stop roundoff drift.
            std::fill(st.total_fit.begin(), st.total_fit.end(), 0.0);
            for (const auto& f : st.tree_fits) {
                for (std::size_t i = 0; i < data.n; ++i) st.total_fit[i] += f[i];
            }
            if (progress) {
                progress({sweep, proposed > 0 ? static_cast<double>(accepted) / proposed : 0.0,
                          st.sigma2 * data.y_scaling.scale * data.y_scaling.scale});
            }
        }
        const std::int64_t after = sweep - config.n_burn;
        if (after > 0 && after % config.thin == 0) {
            out.ensemble.draws.push_back({st.forest, st.sigma2});
            sigma2_sum += st.sigma2;
        }
    }
    out.diagnostics.sweeps = total;
    out.diagnostics.acceptance_rate = proposed > 0 ? static_cast<double>(accepted) / proposed : 0.0;
    out.diagnostics.sigma2_mean_raw =
        sigma2_sum / static_cast<double>(out.ensemble.draws.size()) * data.y_scaling.scale * data.y_scaling.scale;
    return out;
}

PosteriorEnsemble fit(const Dataset& data, const SamplerConfig& config) {
    return fit_with_diagnostics(data, config).ensemble;
}

}  // namespace shapfor
