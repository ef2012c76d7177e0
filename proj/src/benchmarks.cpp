#include "shapfor/benchmarks.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <map>

#include <boost/rational.hpp>

#include "shapfor/oracle.hpp"
#include "shapfor/sampler.hpp"
#include "shapfor/testbed.hpp"

namespace shapfor {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace

CriterionResult criterion_oracle_table(std::uint64_t seed) {
    CriterionResult r{1, "oracle reproduction of the d=5 reference table", true, "", nlohmann::json::object(), 0.0};
    const auto t0 = Clock::now();
    // Budget per input: 1024 subsets x 2 costs x 4000 x 8 evaluations.
    const std::int64_t n_subsets = 1024, n_outer = 4000, n_inner = 8, n_var = 1000000;
    std::string worst;
    for (auto kind : {TestFunctionKind::Friedman, TestFunctionKind::Morris, TestFunctionKind::Bratley,
                      TestFunctionKind::GFunction}) {
        const TestFunction fn = TestFunction::make(kind, 5, 5);
        const ReferenceTable ref = reference_values(fn);
        const BlackBox box = as_black_box(fn);
        const auto k = static_cast<std::uint64_t>(kind);
        Rng vr(derive_seed(seed, {1, k}));
        const McEstimate var = mc_variance(box, n_var, vr);
        const double var_rel = std::abs(var.estimate - ref.variance) / ref.variance;
        const bool var_ok = var_rel <= 0.01;
        const double tol = kind == TestFunctionKind::Bratley ? 0.015 : 0.01;
        double max_err = 0.0;
        nlohmann::json shap = nlohmann::json::array();
        for (std::int32_t j = 0; j < 5; ++j) {
            Rng sr(derive_seed(seed, {2, k, static_cast<std::uint64_t>(j)}));
            const McEstimate s = mc_shapley(box, j, n_subsets, n_outer, n_inner, sr);
            const double norm = s.estimate / var.estimate;
            const double err = std::abs(norm - ref.S[static_cast<std::size_t>(j)]);
            max_err = std::max(max_err, err);
            shap.push_back({{"input", j + 1},
                            {"normalized", norm},
                            {"stderr", s.stderr_ / var.estimate},
                            {"reference", ref.S[static_cast<std::size_t>(j)]},
                            {"abs_error", err}});
        }
        const bool s_ok = max_err <= tol;
        r.pass = r.pass && var_ok && s_ok;
        r.detail[fn.name()] = {{"variance", var.estimate},
                               {"variance_stderr", var.stderr_},
                               {"reference_variance", ref.variance},
                               {"variance_rel_error", var_rel},
                               {"variance_ok", var_ok},
                               {"shapley", shap},
                               {"max_abs_error", max_err},
                               {"tolerance", tol},
                               {"shapley_ok", s_ok}};
        worst += fn.name() + " maxerr=" + fmt("%.4f", max_err) + " var=" + fmt("%.4g", var.estimate) + "/" +
                 fmt("%.4g", ref.variance) + (var_ok ? "" : "(off)") + "; ";
    }
    r.seconds = seconds_since(t0);
    const bool fast = r.seconds < 300.0;
    r.pass = r.pass && fast;
    r.detail["runtime_ok"] = fast;
    r.summary = worst + "runtime " + fmt("%.1f", r.seconds) + "s";
    return r;
}

CriterionResult criterion_oracle_equivalence(std::uint64_t seed) {
    CriterionResult r{2, "closed-form cost vs Monte-Carlo oracle", false, "", nlohmann::json::object(), 0.0};
    const auto t0 = Clock::now();
    Rng rng(derive_seed(seed, {20}));
    int failures = 0;
    double worst_z = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const auto p = static_cast<std::int32_t>(1 + uniform_index(rng, 6));
        const Forest f = random_forest(p, 1 + static_cast<std::int32_t>(uniform_index(rng, 5)), 3, rng);
        SubsetMask P(p);
        for (std::int32_t j = 0; j < p; ++j) {
            if (coin(rng)) P.insert(j);
        }
        Rng mc(derive_seed(seed, {21, static_cast<std::uint64_t>(rep)}));
        const McEstimate est = mc_cost(as_black_box(f), P, 10000, 4, mc);
        const double exact = cost(f, P);
        const double diff = std::abs(est.estimate - exact);
        const double z = est.stderr_ > 0.0 ? diff / est.stderr_ : (diff == 0.0 ? 0.0 : INFINITY);
        worst_z = std::max(worst_z, z);
        if (z > 3.0) ++failures;
    }
    // 0.3 failures expected; 3 or more has probability 0.4% under the null.
    r.pass = failures <= 2;
    r.detail = {{"cases", 100}, {"failures_3sigma", failures}, {"max_z", worst_z}, {"allowed", 2}};
    r.seconds = seconds_since(t0);
    r.summary = std::to_string(failures) + "/100 beyond 3 sigma (max z " + fmt("%.2f", worst_z) + ")";
    return r;
}

CriterionResult criterion_exact_invariants(std::uint64_t seed) {
    CriterionResult r{3, "exact Shapley sum and sandwich invariants", false, "", nlohmann::json::object(), 0.0};
    const auto t0 = Clock::now();
    Rng rng(derive_seed(seed, {30}));
    int sum_viol = 0, sandwich_viol = 0, neg_viol = 0;
    double max_sum_err = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        const auto p = static_cast<std::int32_t>(1 + uniform_index(rng, 6));
        const Forest f = random_forest(p, 1 + static_cast<std::int32_t>(uniform_index(rng, 5)), 3, rng);
        const BoxTable table(f);
        const double var = variance(f);
        double sum = 0.0;
        for (std::int32_t j = 0; j < p; ++j) {
            const double v = sobol_main(table, j), s = shapley_exact(table, j), t = sobol_total(table, j);
            sum += s;
            if (v > s + 1e-10 || s > t + 1e-10) ++sandwich_viol;
            if (s < -1e-10) ++neg_viol;
        }
        max_sum_err = std::max(max_sum_err, std::abs(sum - var));
        if (std::abs(sum - var) > 1e-10) ++sum_viol;
    }
    r.pass = sum_viol == 0 && sandwich_viol == 0 && neg_viol == 0;
    r.detail = {{"forests", 200},
                {"sum_violations", sum_viol},
                {"sandwich_violations", sandwich_viol},
                {"negative_violations", neg_viol},
                {"max_sum_error", max_sum_err}};
    r.seconds = seconds_since(t0);
    r.summary = "sum/sandwich/negative violations " + std::to_string(sum_viol) + "/" + std::to_string(sandwich_viol) +
                "/" + std::to_string(neg_viol) + ", max |sum-var| " + fmt("%.2e", max_sum_err);
    return r;
}

CriterionResult criterion_subset_unbiased(std::uint64_t seed) {
    CriterionResult r{4, "random-subset Shapley estimator is unbiased", true, "", nlohmann::json::array(), 0.0};
    const auto t0 = Clock::now();
    Rng rng(derive_seed(seed, {40}));
    Forest f;
    // Skip constant forests.
    do {
        f = random_forest(5, 5, 3, rng);
    } while (variance(f) <= 0.0);
    const BoxTable table(f);
    const int m = 10000;
    double worst_z = 0.0;
    for (std::int32_t j = 0; j < 5; ++j) {
        const double exact = shapley_exact(table, j);
        double s1 = 0.0, s2 = 0.0;
        for (int l = 0; l < m; ++l) {
            const double v = shapley_sampled_draw(table, j, 1, seed, static_cast<std::uint64_t>(l));
            s1 += v;
            s2 += v * v;
        }
        const double mean = s1 / m;
        const double sd = std::sqrt(std::max(0.0, (s2 - m * mean * mean) / (m - 1)));
        const double se = sd / std::sqrt(static_cast<double>(m));
        const double z = se > 0.0 ? std::abs(mean - exact) / se : (mean == exact ? 0.0 : INFINITY);
        worst_z = std::max(worst_z, z);
        r.pass = r.pass && z <= 3.0;
        r.detail.push_back({{"input", j + 1}, {"exact", exact}, {"mean", mean}, {"stderr", se}, {"z", z}});
    }
    r.seconds = seconds_since(t0);
    r.summary = "max |mean-exact|/se = " + fmt("%.2f", worst_z) + " over 5 inputs, m=10^4";
    return r;
}

CriterionResult criterion_lipschitz(std::uint64_t seed) {
    CriterionResult r{5, "Lipschitz bound on the cost functional", false, "", nlohmann::json::object(), 0.0};
    const auto t0 = Clock::now();
    Rng rng(derive_seed(seed, {50}));
    int violations = 0;
    double max_ratio = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const auto p = static_cast<std::int32_t>(1 + uniform_index(rng, 6));
        const Forest f = random_forest(p, 1 + static_cast<std::int32_t>(uniform_index(rng, 5)), 3, rng);
        const Forest g = random_forest(p, 1 + static_cast<std::int32_t>(uniform_index(rng, 5)), 3, rng);
        SubsetMask P(p);
        for (std::int32_t j = 0; j < p; ++j) {
            if (coin(rng)) P.insert(j);
        }
        const LipschitzGap gap = lipschitz_gap(f, g, P);
        if (gap.lhs > gap.rhs) ++violations;
        if (gap.rhs > 0.0) max_ratio = std::max(max_ratio, gap.lhs / gap.rhs);
    }
    r.pass = violations == 0;
    r.detail = {{"pairs", 1000}, {"violations", violations}, {"max_lhs_over_rhs", max_ratio}};
    r.seconds = seconds_since(t0);
    r.summary = std::to_string(violations) + " violations in 1000 pairs, max lhs/rhs " + fmt("%.3f", max_ratio);
    return r;
}

namespace {

ScenarioRun run_scenario(const std::string& name, const TestFunction& fn, std::int64_t n, const SamplerConfig& cfg,
                         std::uint64_t seed) {
    ScenarioRun run;
    run.name = name;
    const Dataset data = generate(fn, {n, 0.25, seed});
    auto t0 = Clock::now();
    const PosteriorEnsemble e = fit(data, cfg);
    run.fit_seconds = seconds_since(t0);
    t0 = Clock::now();
    ReportOptions opt;
    opt.seed = seed;
    run.report = assemble_report(e, opt, data.names);
    run.analyze_seconds = seconds_since(t0);
    return run;
}

}  // namespace

ScenarioRun run_friedman_fit(std::uint64_t seed) {
    SamplerConfig cfg;
    cfg.num_trees = 200;
    cfg.n_draw = 1000;
    cfg.seed = seed;
    return run_scenario("friedman-fit", TestFunction::make(TestFunctionKind::Friedman, 5, 5), 250, cfg, seed);
}

ScenarioRun run_morris_wide(std::uint64_t seed) {
    SamplerConfig cfg;
    cfg.num_trees = 200;
    cfg.n_draw = 300;
    cfg.seed = seed;
    return run_scenario("morris-wide", TestFunction::make(TestFunctionKind::Morris, 5, 50), 2500, cfg, seed);
}

CriterionResult criterion_friedman_fit(const ScenarioRun& run) {
    CriterionResult r{6, "end-to-end Friedman fit", false, "", nlohmann::json::object(), 0.0};
    const ReferenceTable ref = reference_values(TestFunction::make(TestFunctionKind::Friedman, 5, 5));
    double max_err = 0.0;
    int covered = 0;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& in : run.report.inputs) {
        const double truth = ref.S[static_cast<std::size_t>(in.input)];
        const double err = std::abs(in.S_norm.point - truth);
        const bool cov = in.S_norm.lo() <= truth && truth <= in.S_norm.hi();
        max_err = std::max(max_err, err);
        covered += cov ? 1 : 0;
        rows.push_back({{"input", in.name},
                        {"point", in.S_norm.point},
                        {"lo", in.S_norm.lo()},
                        {"hi", in.S_norm.hi()},
                        {"reference", truth},
                        {"covered", cov}});
    }
    r.seconds = run.fit_seconds + run.analyze_seconds;
    r.pass = max_err <= 0.10 && covered >= 4 && r.seconds < 600.0;
    r.detail = {{"inputs", rows},
                {"max_abs_error", max_err},
                {"covered", covered},
                {"variance_raw", run.report.variance.point},
                {"fit_seconds", run.fit_seconds},
                {"analyze_seconds", run.analyze_seconds}};
    r.summary = "max |S-S*| " + fmt("%.3f", max_err) + ", covered " + std::to_string(covered) + "/5, posterior Var " +
                fmt("%.2f", run.report.variance.point) + ", " + fmt("%.1f", r.seconds) + "s";
    return r;
}

CriterionResult criterion_morris_wide(const ScenarioRun& run) {
    CriterionResult r{7, "wide-input separation (Morris, p=50)", false, "", nlohmann::json::object(), 0.0};
    double min_active = INFINITY, max_inert = -INFINITY;
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& in : run.report.inputs) {
        const double v = in.S_norm.point;
        if (in.input < 5) {
            min_active = std::min(min_active, v);
        } else {
            max_inert = std::max(max_inert, v);
        }
        pts.push_back(v);
    }
    r.seconds = run.fit_seconds + run.analyze_seconds;
    r.pass = min_active > max_inert && max_inert < 0.02;
    r.detail = {{"normalized_shapley", pts},
                {"min_active", min_active},
                {"max_inert", max_inert},
                {"fit_seconds", run.fit_seconds},
                {"analyze_seconds", run.analyze_seconds}};
    r.summary = "min active " + fmt("%.4f", min_active) + ", max inert " + fmt("%.4f", max_inert) + ", " +
                fmt("%.1f", r.seconds) + "s";
    return r;
}

CriterionResult criterion_nonnegative(const std::vector<const ScenarioRun*>& runs) {
    CriterionResult r{8, "Shapley credible intervals are nonnegative", true, "", nlohmann::json::object(), 0.0};
    double min_lo = INFINITY;
    for (const ScenarioRun* run : runs) {
        double lo = INFINITY;
        for (const auto& in : run->report.inputs) {
            lo = std::min({lo, in.S.lo(), in.S_norm.lo(), in.S.point, in.S_norm.point});
        }
        r.detail[run->name] = {{"min_endpoint", lo}};
        min_lo = std::min(min_lo, lo);
    }
    r.pass = min_lo >= 0.0;
    r.summary = "min endpoint " + fmt("%.3g", min_lo) + " across " + std::to_string(runs.size()) + " scenarios";
    return r;
}

CriterionResult criterion_prior_fidelity(std::uint64_t seed) {
    CriterionResult r{9, "prior-only simulation matches the depth prior", true, "", nlohmann::json::array(), 0.0};
    const auto t0 = Clock::now();
    const std::int32_t p = 3;
    SplitNet net;
    for (std::int32_t j = 0; j < p; ++j) {
        std::vector<double> c;
        for (int g = 1; g <= 100; ++g) c.push_back(g / 101.0);
        net.cuts.push_back(std::move(c));
    }
    const std::vector<double> s(static_cast<std::size_t>(p), 1.0 / p);
    const TreePrior prior{0.95, 2.0};
    Rng rng(derive_seed(seed, {90}));
    Tree tree;
    const std::size_t iters = 100000, batches = 100, len = iters / batches;
    constexpr std::size_t kDepths = 3;
    // Per batch: nodes at depth d admitting a cut, and how many of them split.
    std::vector<std::array<double, kDepths>> present(batches), internal(batches);
    for (std::size_t it = 0; it < iters; ++it) {
        const MoveProposal mv = propose_move(tree, net, s, prior, rng);
        if (mv.valid && std::log(uniform01(rng)) < mv.log_ratio_without_likelihood()) apply_move(tree, mv);
        const std::size_t b = it / len;
        for (std::int32_t n = 0; n < tree.num_nodes(); ++n) {
            const auto d = static_cast<std::size_t>(tree.depth(n));
            if (d >= kDepths) continue;
            bool has_cut = false;
            for (std::int32_t j = 0; j < p && !has_cut; ++j) has_cut = net.count_inside(j, tree.interval_of(n, j)) > 0;
            if (!has_cut) continue;
            present[b][d] += 1;
            if (!tree.node(n).is_leaf()) internal[b][d] += 1;
        }
    }
    std::string summary;
    for (std::size_t d = 0; d < kDepths; ++d) {
        double num = 0, den = 0;
        for (std::size_t b = 0; b < batches; ++b) {
            num += internal[b][d];
            den += present[b][d];
        }
        const double est = num / den;
        double ss = 0.0;
        std::size_t used = 0;
        for (std::size_t b = 0; b < batches; ++b) {
            if (present[b][d] > 0) {
                const double v = internal[b][d] / present[b][d];
                ss += (v - est) * (v - est);
                ++used;
            }
        }
        const double se = std::sqrt(ss / static_cast<double>(used - 1) / static_cast<double>(used));
        const double want = prior.split_prob(static_cast<std::int32_t>(d));
        const double z = std::abs(est - want) / se;
        r.pass = r.pass && z <= 3.0;
        r.detail.push_back({{"depth", d}, {"empirical", est}, {"expected", want}, {"stderr", se}, {"z", z}});
        summary += "d" + std::to_string(d) + " " + fmt("%.4f", est) + " vs " + fmt("%.4f", want) + " (z " +
                   fmt("%.2f", z) + ") ";
    }
    r.seconds = seconds_since(t0);
    r.summary = summary;
    return r;
}

CriterionResult criterion_coefficient_identities() {
    CriterionResult r{10, "total-effect coefficient sum and Shapley weight identity", true, "",
                      nlohmann::json::array(), 0.0};
    const auto t0 = Clock::now();
    using Q = boost::rational<std::int64_t>;
    for (std::int32_t p = 1; p <= 8; ++p) {
        // Expand T_1 = sum_{P ⊆ [p]\{1}} V_{P ∪ {1}} with V_S = sum_{R ⊆ S} (-1)^{|S|-|R|} c_R,
        // keeping every term; c_∅ = 0 is dropped.
        std::map<std::uint64_t, std::int64_t> coef;
        std::int64_t abs_terms = 0;
        for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << (p - 1)); ++bits) {
            const std::uint64_t S = (bits << 1) | 1U;
            const int s_size = __builtin_popcountll(S);
            for (std::uint64_t R = S;; R = (R - 1) & S) {
                if (R != 0) {
                    const int sign = ((s_size - __builtin_popcountll(R)) % 2 == 0) ? 1 : -1;
                    coef[R] += sign;
                    ++abs_terms;
                }
                if (R == 0) break;
            }
        }
        std::int64_t formula = 0;
        for (std::int32_t i = 0; i < p; ++i) {
            std::int64_t binom = 1;
            for (std::int32_t k = 0; k < i; ++k) binom = binom * (p - 1 - k) / (k + 1);
            formula += binom * ((std::int64_t{1} << (i + 1)) - 1);
        }
        // After cancellation only T_1 = c_[p] - c_{[p]\{1}} should survive.
        std::int64_t survivors = 0;
        for (const auto& [R, c] : coef) survivors += c != 0 ? 1 : 0;
        const std::uint64_t full = (std::uint64_t{1} << p) - 1;
        const bool collapse_ok = coef[full] == 1 && (p == 1 || coef[full & ~std::uint64_t{1}] == -1) &&
                                 survivors == (p == 1 ? 1 : 2);

        Q weight_sum(0);
        for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << (p - 1)); ++bits) {
            const int k = __builtin_popcountll(bits);
            std::int64_t binom = 1;
            for (int t = 0; t < k; ++t) binom = binom * (p - 1 - t) / (t + 1);
            weight_sum += Q(1, binom);
        }
        weight_sum /= p;
        const bool ok = abs_terms == formula && weight_sum == Q(1) && collapse_ok;
        r.pass = r.pass && ok;
        r.detail.push_back({{"p", p},
                            {"expanded_abs_sum", abs_terms},
                            {"formula", formula},
                            {"weight_identity", std::to_string(weight_sum.numerator()) + "/" +
                                                    std::to_string(weight_sum.denominator())},
                            {"collapses_to_complement", collapse_ok}});
    }
    r.seconds = seconds_since(t0);
    r.summary = "p = 1..8 expansions match the closed-form count; weight identity exact";
    return r;
}

const std::vector<std::string>& benchmark_suites() {
    static const std::vector<std::string> names{"table-va1-oracle", "friedman-fit", "morris-wide",
                                                "invariant-sweep"};
    return names;
}

std::vector<CriterionResult> run_suite(const std::string& suite, std::uint64_t seed) {
    if (suite == "table-va1-oracle") return {criterion_oracle_table(seed)};
    if (suite == "friedman-fit") {
        const ScenarioRun run = run_friedman_fit(seed);
        return {criterion_friedman_fit(run), criterion_nonnegative({&run})};
    }
    if (suite == "morris-wide") {
        const ScenarioRun run = run_morris_wide(seed);
        return {criterion_morris_wide(run), criterion_nonnegative({&run})};
    }
    if (suite == "invariant-sweep") {
        return {criterion_oracle_equivalence(seed), criterion_exact_invariants(seed), criterion_subset_unbiased(seed),
                criterion_lipschitz(seed), criterion_prior_fidelity(seed), criterion_coefficient_identities()};
    }
    std::string known;
    for (const auto& s : benchmark_suites()) known += (known.empty() ? "" : ", ") + s;
    throw ValidationError("unknown benchmark suite '" + suite + "' (expected one of: " + known + ")");
}

nlohmann::json to_json(const CriterionResult& r) {
    return {{"criterion", r.id}, {"name", r.name},       {"pass", r.pass},
            {"summary", r.summary}, {"seconds", r.seconds}, {"detail", r.detail}};
}

}  // namespace shapfor
