#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "shapfor/sampler.hpp"
#include "shapfor/testbed.hpp"

using namespace shapfor;

namespace {

ScaledData scaled_1d(std::vector<double> x, std::vector<double> y) {
    ScaledData d;
    d.n = x.size();
    d.p = 1;
    d.X = std::move(x);
    d.y = std::move(y);
    d.x_scaling = {AffineMap{0.0, 1.0}};
    d.y_scaling = AffineMap{0.0, 1.0};
    return d;
}

Dataset from_columns(const std::vector<std::vector<double>>& cols, const std::vector<double>& y) {
    Dataset d;
    d.n = y.size();
    d.p = static_cast<std::int32_t>(cols.size());
    for (std::size_t i = 0; i < d.n; ++i) {
        for (const auto& c : cols) d.X.push_back(c[i]);
    }
    d.y = y;
    return d;
}

/// Mean and batch-means standard error of a per-iteration series.
std::pair<double, double> batch_mean_se(const std::vector<double>& series, std::size_t batches) {
    const std::size_t len = series.size() / batches;
    std::vector<double> means(batches);
    for (std::size_t b = 0; b < batches; ++b) {
        means[b] = std::accumulate(series.begin() + static_cast<std::ptrdiff_t>(b * len),
                                   series.begin() + static_cast<std::ptrdiff_t>((b + 1) * len), 0.0) /
                   static_cast<double>(len);
    }
    const double m = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(batches);
    double ss = 0.0;
    for (double v : means) ss += (v - m) * (v - m);
    return {m, std::sqrt(ss / static_cast<double>(batches - 1) / static_cast<double>(batches))};
}

/// Prior-only Metropolis-Hastings step (likelihood switched off).
void prior_step(Tree& tree, const SplitNet& net, std::span<const double> s, const TreePrior& prior, Rng& rng) {
    const MoveProposal mv = propose_move(tree, net, s, prior, rng);
    if (!mv.valid) return;
    if (std::log(uniform01(rng)) < mv.log_ratio_without_likelihood()) apply_move(tree, mv);
}

}  // namespace

TEST_CASE("splitnet construction") {
    ScaledData d = scaled_1d({0.0, 0.2, 0.2, 1.0}, {0, 1, 2, 3});
    SamplerConfig cfg;
    cfg.grid_size = 3;
    const SplitNet grid = make_splitnet(d, cfg);
    CHECK(grid.cuts[0] == std::vector<double>{0.25, 0.5, 0.75});

    cfg.splitnet_mode = SplitNetMode::ObservedValues;
    CHECK(make_splitnet(d, cfg).cuts[0] == std::vector<double>{0.2});

    cfg.splitnet_mode = SplitNetMode::UniformGrid;
    cfg.grid_size = 100;
    const SplitNet big = make_splitnet(d, cfg);
    const auto& c = big.cuts[0];
    CHECK(c.size() == 100);
    CHECK(std::adjacent_find(c.begin(), c.end(), std::greater_equal<>()) == c.end());

    SUBCASE("constant column has no observed cut") {
        ScaledData k = scaled_1d({0.0, 0.0, 0.0}, {0, 1, 2});
        cfg.splitnet_mode = SplitNetMode::ObservedValues;
        CHECK_THROWS_AS(make_splitnet(k, cfg), ValidationError);
    }
    SUBCASE("strictly-inside counting") {
        CHECK(grid.count_inside(0, {0.25, 0.75}) == 1);
        CHECK(grid.nth_inside(0, {0.25, 0.75}, 0) == 0.5);
        CHECK(grid.count_inside(0, {0.0, 1.0}) == 3);
        CHECK(grid.count_inside(0, {0.5, 0.75}) == 0);
    }
}

TEST_CASE("input and output scaling") {
    const Dataset d = from_columns({{2.0, 4.0}, {0.0, 1.0}}, {0.0, 10.0});
    const ScaledData s = scale_dataset(d);
    CHECK(s.at(0, 0) == 0.0);
    CHECK(s.at(1, 0) == 1.0);
    CHECK(s.x_scaling[0].offset == 2.0);
    CHECK(s.x_scaling[0].scale == 2.0);
    CHECK(s.x_scaling[1].forward(0.3) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(s.y[0] == -0.5);
    CHECK(s.y[1] == 0.5);
    CHECK(s.y_scaling.inverse(s.y[1]) == doctest::Approx(10.0));
    CHECK_THROWS_AS(scale_outputs(std::vector<double>{1.0, 1.0, 1.0}), ValidationError);
}

TEST_CASE("dataset validation") {
    Dataset d = from_columns({{0.0, 1.0}}, {0.0, 1.0});
    CHECK_NOTHROW(d.validate());
    d.y[1] = std::nan("");
    CHECK_THROWS_AS(d.validate(), ValidationError);
    const Dataset one = from_columns({{0.0}}, {0.0});
    CHECK_THROWS_AS(one.validate(), ValidationError);
}

TEST_CASE("leaf log marginal") {
    const double s2 = 0.7, tau2 = 0.2;
    LeafStats zero{5, 0.0, 0.0};
    CHECK(leaf_log_marginal(zero, s2, tau2) == doctest::Approx(0.5 * std::log(s2 / (s2 + 5 * tau2))));

    SUBCASE("separable over leaves") {
        const ScaledData d = scaled_1d({0.1, 0.3, 0.6, 0.9}, {0, 0, 0, 0});
        Tree t;
        t.split(0, 0, 0.5);
        const std::vector<double> r1{0.3, -0.2, 0.5, 0.1};
        std::vector<double> r2 = r1;
        r2[1] = 0.0;
        const auto a = log_marginal_likelihood(t, d, r1, s2, tau2).value();
        const auto b = log_marginal_likelihood(t, d, r2, s2, tau2).value();
        const double left_a = leaf_log_marginal({2, 0.1, 0.13}, s2, tau2);
        const double left_b = leaf_log_marginal({2, 0.3, 0.09}, s2, tau2);
        CHECK(a - b == doctest::Approx(left_a - left_b).epsilon(1e-12));
    }
    SUBCASE("min_leaf_obs rejects") {
        const ScaledData d = scaled_1d({0.1, 0.3, 0.6}, {0, 0, 0});
        Tree t;
        t.split(0, 0, 0.5);
        const std::vector<double> r{0.0, 0.0, 0.0};
        CHECK(log_marginal_likelihood(t, d, r, s2, tau2, 1).has_value());
        CHECK_FALSE(log_marginal_likelihood(t, d, r, s2, tau2, 2).has_value());
    }
}

TEST_CASE("marginal likelihood ratio matches quadrature") {
    // Two observations at x = 0.2 and 0.8; tree A one leaf, tree B split at 0.5.
    const double s2 = 0.3, tau2 = 0.5;
    const std::vector<double> r{0.7, -0.4};
    const ScaledData d = scaled_1d({0.2, 0.8}, {0, 0});
    Tree a;
    Tree b;
    b.split(0, 0, 0.5);
    const double lm = log_marginal_likelihood(b, d, r, s2, tau2).value() -
                      log_marginal_likelihood(a, d, r, s2, tau2).value();

    auto npdf = [](double x, double v) { return std::exp(-x * x / (2 * v)) / std::sqrt(2 * M_PI * v); };
    auto simpson = [](auto f) {
        const int n = 40000;
        const double lo = -12, hi = 12, h = (hi - lo) / n;
        double s = f(lo) + f(hi);
        for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
        return s * h / 3;
    };
    const double la = simpson([&](double mu) { return npdf(r[0] - mu, s2) * npdf(r[1] - mu, s2) * npdf(mu, tau2); });
    const double lb = simpson([&](double mu) { return npdf(r[0] - mu, s2) * npdf(mu, tau2); }) *
                      simpson([&](double mu) { return npdf(r[1] - mu, s2) * npdf(mu, tau2); });
    CHECK(std::exp(lm) == doctest::Approx(lb / la).epsilon(1e-10));
}

TEST_CASE("proposal boundary cases") {
    SplitNet net{{{1.0 / 3, 2.0 / 3}}};
    const std::vector<double> s{1.0};
    const TreePrior prior;
    Rng rng(1);

    SUBCASE("single leaf proposes birth with probability 1") {
        const Tree t;
        for (int i = 0; i < 200; ++i) {
            const auto mv = propose_move(t, net, s, prior, rng);
            REQUIRE(mv.valid);
            REQUIRE(mv.kind == MoveProposal::Kind::Birth);
            CHECK(mv.log_forward == doctest::Approx(std::log(0.5)));  // birth 1, leaf 1, cut 1/2
        }
    }
    SUBCASE("exhausted grid makes birth impossible") {
        SplitNet one{{{0.5}}};
        Tree t;
        t.split(0, 0, 0.5);
        for (int i = 0; i < 200; ++i) {
            const auto mv = propose_move(t, one, s, prior, rng);
            REQUIRE(mv.kind == MoveProposal::Kind::Death);
            CHECK(mv.valid);
        }
        // Both children hold no admissible cut, so the split tree's prior only
        // carries the root split term.
        CHECK(log_tree_prior(t, one, s, prior) == doctest::Approx(std::log(0.95)));
    }
}

TEST_CASE("prior-only chain visits trees with their prior probabilities") {
    // 1-dim splitnet {1/3, 2/3}: five reachable trees.
    const SplitNet net{{{1.0 / 3, 2.0 / 3}}};
    const std::vector<double> s{1.0};
    const TreePrior prior{0.95, 2.0};
    const double a = prior.alpha, g1 = prior.split_prob(1);
    std::map<std::string, double> expected{{"L", 1 - a},
                                           {"c1", a * 0.5 * (1 - g1)},
                                           {"c1c2", a * 0.5 * g1},
                                           {"c2", a * 0.5 * (1 - g1)},
                                           {"c2c1", a * 0.5 * g1}};
    double total = 0.0;
    for (const auto& [k, v] : expected) total += v;
    CHECK(total == doctest::Approx(1.0));

    auto key = [](const Tree& t) {
        if (t.num_nodes() == 1) return std::string("L");
        const std::string root = t.node(0).cut < 0.5 ? "c1" : "c2";
        if (t.num_nodes() == 3) return root;
        return root + (root == "c1" ? "c2" : "c1");
    };
    // Log prior agrees with the hand enumeration.
    Tree c1c2;
    auto [l, r] = c1c2.split(0, 0, 1.0 / 3);
    (void)l;
    c1c2.split(r, 0, 2.0 / 3);
    CHECK(std::exp(log_tree_prior(c1c2, net, s, prior)) == doctest::Approx(expected["c1c2"]));

    Rng rng(2718);
    Tree t;
    const int iters = 100000;
    std::map<std::string, std::vector<double>> series;
    for (const auto& [k, v] : expected) series[k].assign(iters, 0.0);
    for (int i = 0; i < iters; ++i) {
        prior_step(t, net, s, prior, rng);
        series[key(t)][static_cast<std::size_t>(i)] = 1.0;
    }
    for (const auto& [k, v] : expected) {
        const auto [m, se] = batch_mean_se(series[k], 100);
        INFO(k, " empirical ", m, " expected ", v, " se ", se);
        CHECK(std::abs(m - v) <= 3.0 * se);
    }
}

TEST_CASE("prior-only chain reproduces the depth-wise split probability") {
    // Among nodes at depth d that admit a cut, the internal fraction is alpha (1+d)^-beta.
    const std::int32_t p = 3;
    SplitNet net;
    for (int j = 0; j < p; ++j) {
        std::vector<double> c;
        for (int g = 1; g <= 100; ++g) c.push_back(g / 101.0);
        net.cuts.push_back(c);
    }
    const std::vector<double> s(p, 1.0 / p);
    const TreePrior prior{0.95, 2.0};
    Rng rng(161803);
    Tree t;
    const int iters = 100000;
    std::vector<std::vector<double>> internal(3, std::vector<double>(iters)), present(3, std::vector<double>(iters));
    for (int i = 0; i < iters; ++i) {
        prior_step(t, net, s, prior, rng);
        for (std::int32_t n = 0; n < t.num_nodes(); ++n) {
            const std::int32_t d = t.depth(n);
            if (d > 2) continue;
            bool has_cut = false;
            for (std::int32_t j = 0; j < p; ++j) has_cut = has_cut || net.count_inside(j, t.interval_of(n, j)) > 0;
            if (!has_cut) continue;
            present[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)] += 1;
            if (!t.node(n).is_leaf()) internal[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)] += 1;
        }
    }
    for (std::size_t d = 0; d < 3; ++d) {
        // Ratio estimator, with its standard error from batch ratios.
        const std::size_t B = 100, len = iters / B;
        std::vector<double> ratios;
        double num = 0, den = 0;
        for (std::size_t b = 0; b < B; ++b) {
            double nb = 0, db = 0;
            for (std::size_t i = b * len; i < (b + 1) * len; ++i) {
                nb += internal[d][i];
                db += present[d][i];
            }
            num += nb;
            den += db;
            if (db > 0) ratios.push_back(nb / db);
        }
        const double est = num / den;
        double ss = 0.0;
        for (double v : ratios) ss += (v - est) * (v - est);
        const double se = std::sqrt(ss / static_cast<double>(ratios.size() - 1) / static_cast<double>(ratios.size()));
        const double want = prior.split_prob(static_cast<std::int32_t>(d));
        INFO("depth ", d, " empirical ", est, " expected ", want, " se ", se);
        CHECK(std::abs(est - want) <= 3.0 * se);
    }
}

TEST_CASE("sigma2 prior calibration") {
    // P(nu lambda / chi2_nu < sigma2_hat) = q
    const double lambda = calibrate_lambda(2.0, 3.0, 0.9);
    // chi2_3 0.1-quantile = 0.5843744...
    CHECK(lambda == doctest::Approx(2.0 * 0.58437437415518312 / 3.0).epsilon(1e-10));
}

TEST_CASE("constant zero-noise data: fit concentrates on the constant") {
    const std::size_t n = 60;
    std::vector<double> x(n), y(n, 0.3);
    Rng xr(4);
    for (auto& v : x) v = uniform01(xr);
    const ScaledData d = scaled_1d(x, y);
    SamplerConfig cfg;
    cfg.num_trees = 10;
    SamplerContext ctx = make_context(d, cfg);
    ChainState st = initial_state(ctx);
    st.sigma2 = 0.05;
    Rng rng(5);
    double first_sigma2 = 0;
    for (int sweep = 0; sweep < 400; ++sweep) {
        gibbs_sweep(st, ctx, rng);
        if (sweep == 0) first_sigma2 = st.sigma2;
        REQUIRE(st.sigma2 > 0.0);
    }
    const double m = std::accumulate(st.total_fit.begin(), st.total_fit.end(), 0.0) / static_cast<double>(n);
    CHECK(m == doctest::Approx(0.3).epsilon(1e-3));
    CHECK(st.sigma2 < 1e-4);
    CHECK(st.sigma2 <= first_sigma2);
    CHECK(st.cache_error(d) < 1e-10);
}

TEST_CASE("leaf and sigma2 updates alone keep the cache coherent") {
    TestFunction fn = TestFunction::make(TestFunctionKind::Friedman, 5, 5);
    const Dataset raw = generate(fn, {100, 0.25, 3});
    const ScaledData d = scale_dataset(raw);
    SamplerConfig cfg;
    cfg.num_trees = 1;
    const SamplerContext ctx = make_context(d, cfg);
    ChainState st = initial_state(ctx);
    Rng rng(6);
    for (int sweep = 0; sweep < 50; ++sweep) {
        const auto stats = gibbs_sweep(st, ctx, rng, false);
        CHECK(stats.proposed == 0);
        CHECK(st.cache_error(d) < 1e-12);
    }
    CHECK(st.forest.trees[0].num_nodes() == 1);
}

TEST_CASE("chain invariants during a sweep run") {
    TestFunction fn = TestFunction::make(TestFunctionKind::Friedman, 5, 5);
    const Dataset raw = generate(fn, {150, 0.25, 8});
    const ScaledData d = scale_dataset(raw);
    SamplerConfig cfg;
    cfg.num_trees = 20;
    cfg.sparsity = true;
    cfg.min_leaf_obs = 5;
    const SamplerContext ctx = make_context(d, cfg);
    ChainState st = initial_state(ctx);
    Rng rng(9);
    for (int sweep = 0; sweep < 150; ++sweep) {
        gibbs_sweep(st, ctx, rng);
        REQUIRE(st.sigma2 > 0.0);
        CHECK(std::accumulate(st.s.begin(), st.s.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(*std::min_element(st.s.begin(), st.s.end()) >= 0.0);
    }
    CHECK(st.cache_error(d) < 1e-10);
    for (const auto& t : st.forest.trees) {
        t.validate(d.p);
        for (const auto& nd : t.nodes()) {
            if (nd.is_leaf()) continue;
            const auto& cuts = ctx.net.cuts[static_cast<std::size_t>(nd.dim)];
            CHECK(std::binary_search(cuts.begin(), cuts.end(), nd.cut));
        }
        std::vector<int> counts(static_cast<std::size_t>(t.num_nodes()), 0);
        for (std::size_t i = 0; i < d.n; ++i) ++counts[static_cast<std::size_t>(t.find_leaf(d.row(i)))];
        for (std::int32_t leaf : t.leaves()) CHECK(counts[static_cast<std::size_t>(leaf)] >= 5);
    }
}

TEST_CASE("sparsity concentrates s on the only relevant input") {
    const std::size_t n = 200;
    Rng xr(12);
    std::vector<std::vector<double>> cols(5, std::vector<double>(n));
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& c : cols) c[i] = uniform01(xr);
        y[i] = cols[0][i] < 0.5 ? 0.0 : 1.0;
    }
    const ScaledData d = scale_dataset(from_columns(cols, y));
    SamplerConfig cfg;
    cfg.num_trees = 20;
    cfg.sparsity = true;
    const SamplerContext ctx = make_context(d, cfg);
    ChainState st = initial_state(ctx);
    Rng rng(13);
    std::vector<double> s_mean(5, 0.0);
    for (int sweep = 0; sweep < 400; ++sweep) {
        gibbs_sweep(st, ctx, rng);
        if (sweep >= 200) {
            for (std::size_t j = 0; j < 5; ++j) s_mean[j] += st.s[j] / 200.0;
        }
    }
    CHECK(std::max_element(s_mean.begin(), s_mean.end()) == s_mean.begin());
}

TEST_CASE("fit contracts") {
    TestFunction fn = TestFunction::make(TestFunctionKind::Friedman, 5, 5);
    const Dataset raw = generate(fn, {120, 0.25, 21});
    SamplerConfig cfg;
    cfg.num_trees = 20;
    cfg.n_burn = 30;
    cfg.n_draw = 10;
    cfg.thin = 2;
    cfg.seed = 5;

    SUBCASE("determinism") {
        const auto a = fit(raw, cfg);
        const auto b = fit(raw, cfg);
        CHECK(serialize(a) == serialize(b));
        CHECK(a.draws.size() == 10);
        cfg.seed = 6;
        CHECK(serialize(fit(raw, cfg)) != serialize(a));
    }
    SUBCASE("single draw, no burn-in") {
        cfg.n_burn = 0;
        cfg.n_draw = 1;
        const auto e = fit(raw, cfg);
        CHECK(e.draws.size() == 1);
        CHECK_NOTHROW(e.validate());
        CHECK(deserialize(serialize(e)) == e);
    }
    SUBCASE("constant response rejected") {
        Dataset k = raw;
        std::fill(k.y.begin(), k.y.end(), 2.0);
        CHECK_THROWS_AS(fit(k, cfg), ValidationError);
    }
    SUBCASE("invalid config rejected") {
        cfg.alpha_split = 1.0;
        CHECK_THROWS_AS(fit(raw, cfg), ValidationError);
    }
    SUBCASE("progress lines and diagnostics") {
        cfg.n_burn = 150;
        int lines = 0;
        const auto res = fit_with_diagnostics(raw, cfg, [&](const ProgressLine&) { ++lines; });
        CHECK(lines >= 1);
        CHECK(res.diagnostics.max_cache_error < 1e-10);
        CHECK(res.diagnostics.acceptance_rate > 0.0);
        CHECK(res.diagnostics.acceptance_rate < 1.0);
    }
}

TEST_CASE("short Friedman fit recovers the variance within 30%") {
    TestFunction fn = TestFunction::make(TestFunctionKind::Friedman, 5, 5);
    const Dataset raw = generate(fn, {250, 0.25, 1});
    SamplerConfig cfg;
    cfg.num_trees = 50;
    cfg.n_burn = 300;
    cfg.n_draw = 200;
    cfg.seed = 1;
    const auto e = fit(raw, cfg);
    double v = 0.0;
    for (const auto& dr : e.draws) v += variance(dr.forest);
    v *= e.y_scaling.scale * e.y_scaling.scale / static_cast<double>(e.draws.size());
    INFO("posterior mean variance ", v);
    CHECK(std::abs(v - 23.8) <= 0.3 * 23.8);
}
