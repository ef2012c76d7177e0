#include "shapfor/oracle.hpp"

#include <cmath>
#include <vector>

#include <boost/math/distributions/normal.hpp>

namespace shapfor {

BlackBox as_black_box(const Forest& forest) {
    return {forest.p, [forest](std::span<const double> x) { return forest.evaluate(x); }};
}

McEstimate mc_cost(const BlackBox& fn, const SubsetMask& P, std::int64_t n_outer, std::int64_t n_inner, Rng& rng) {
    if (n_outer < 3 || n_inner < 2) throw ValidationError("mc_cost needs n_outer >= 3 and n_inner >= 2");
    if (P.p() != fn.p) throw ValidationError("subset mask dimension does not match black box arity");
    const auto p = static_cast<std::size_t>(fn.p);
    std::vector<double> x(p);
    std::vector<double> means(static_cast<std::size_t>(n_outer));
    std::vector<double> vars(static_cast<std::size_t>(n_outer));
    const auto members = P.members();
    const auto rest = P.complement().members();
    for (std::int64_t o = 0; o < n_outer; ++o) {
        for (std::int32_t d : members) x[static_cast<std::size_t>(d)] = uniform01(rng);
        // Welford over the inner sample.
        double m = 0.0, m2 = 0.0;
        for (std::int64_t i = 0; i < n_inner; ++i) {
            for (std::int32_t d : rest) x[static_cast<std::size_t>(d)] = uniform01(rng);
            const double v = fn.eval(x);
            const double delta = v - m;
            m += delta / static_cast<double>(i + 1);
            m2 += delta * (v - m);
        }
        means[static_cast<std::size_t>(o)] = m;
        vars[static_cast<std::size_t>(o)] = m2 / static_cast<double>(n_inner - 1);
    }

    const auto n = static_cast<double>(n_outer);
    const auto ni = static_cast<double>(n_inner);
    // Centre on the first mean for numerical stability.
    const double c = means[0];
    double s1 = 0.0, s2 = 0.0, sv = 0.0;
    for (std::size_t o = 0; o < means.size(); ++o) {
        const double d = means[o] - c;
        s1 += d;
        s2 += d * d;
        sv += vars[o];
    }
    const double full = (s2 - s1 * s1 / n) / (n - 1.0) - sv / (n * ni);
    std::vector<double> loo(means.size());
    double loo_mean = 0.0;
    for (std::size_t o = 0; o < means.size(); ++o) {
        const double d = means[o] - c;
        const double a1 = s1 - d;
        const double a2 = s2 - d * d;
        loo[o] = (a2 - a1 * a1 / (n - 1.0)) / (n - 2.0) - (sv - vars[o]) / ((n - 1.0) * ni);
        loo_mean += loo[o];
    }
    loo_mean /= n;
    double ss = 0.0;
    for (double v : loo) ss += (v - loo_mean) * (v - loo_mean);
    return {full, std::sqrt((n - 1.0) / n * ss)};
}

McEstimate mc_shapley(const BlackBox& fn, std::int32_t j, std::int64_t n_subsets, std::int64_t n_outer,
                      std::int64_t n_inner, Rng& rng) {
    if (j < 0 || j >= fn.p) throw ValidationError("input index out of range");
    if (n_subsets < 2) throw ValidationError("mc_shapley needs n_subsets >= 2");
    std::vector<double> diffs;
    diffs.reserve(static_cast<std::size_t>(n_subsets));
    for (std::int64_t l = 0; l < n_subsets; ++l) {
        SubsetMask P(fn.p);
        for (std::int32_t d = 0; d < fn.p; ++d) {
            if (d != j && coin(rng)) P.insert(d);
        }
        const double with = mc_cost(fn, P.with(j), n_outer, n_inner, rng).estimate;
        const double without = P.size() == 0 ? 0.0 : mc_cost(fn, P, n_outer, n_inner, rng).estimate;
        diffs.push_back(with - without);
    }
    double mean = 0.0;
    for (double d : diffs) mean += d;
    mean /= static_cast<double>(diffs.size());
    double ss = 0.0;
    for (double d : diffs) ss += (d - mean) * (d - mean);
    const double sd = std::sqrt(ss / static_cast<double>(diffs.size() - 1));
    return {mean, sd / std::sqrt(static_cast<double>(diffs.size()))};
}

McEstimate mc_variance(const BlackBox& fn, std::int64_t N, Rng& rng) {
    if (N < 2) throw ValidationError("mc_variance needs N >= 2");
    std::vector<double> x(static_cast<std::size_t>(fn.p));
    std::vector<double> vals(static_cast<std::size_t>(N));
    double mean = 0.0;
    for (std::int64_t i = 0; i < N; ++i) {
        for (double& v : x) v = uniform01(rng);
        vals[static_cast<std::size_t>(i)] = fn.eval(x);
        mean += vals[static_cast<std::size_t>(i)];
    }
    const auto n = static_cast<double>(N);
    mean /= n;
    double m2 = 0.0, m4 = 0.0;
    for (double v : vals) {
        const double d = (v - mean) * (v - mean);
        m2 += d;
        m4 += d * d;
    }
    const double var = m2 / (n - 1.0);
    const double mu2 = m2 / n;
    const double mu4 = m4 / n;
    return {var, std::sqrt(std::max(0.0, mu4 - mu2 * mu2) / n)};
}

namespace {

IndexEstimate normal_interval(double point, double se, std::span<const double> levels) {
    IndexEstimate e;
    e.point = point;
    const boost::math::normal_distribution<double> z(0.0, 1.0);
    for (double lv : levels) {
        if (!(lv > 0.0 && lv < 1.0)) throw ValidationError("quantile levels must lie in (0,1)");
        e.quantiles[lv] = point + boost::math::quantile(z, lv) * se;
    }
    return e;
}

}  // namespace

SensitivityReport oracle_report(const BlackBox& fn, const OracleBudget& budget, std::span<const double> levels,
                                std::uint64_t seed, std::span<const std::string> names) {
    SensitivityReport rep;
    rep.method = "mc";
    rep.shapley_mode = "random-subset-mc";
    rep.normalization_convention = "estimated-variance";
    rep.p = fn.p;
    rep.n_draw = 0;
    rep.seed = seed;
    rep.levels.assign(levels.begin(), levels.end());

    Rng vrng(derive_seed(seed, {0}));
    const McEstimate var = mc_variance(fn, budget.n_variance, vrng);
    rep.variance = normal_interval(var.estimate, var.stderr_, levels);
    rep.sigma2 = normal_interval(0.0, 0.0, levels);
    const double denom = var.estimate > 0.0 ? var.estimate : 1.0;

    for (std::int32_t j = 0; j < fn.p; ++j) {
        const auto uj = static_cast<std::uint64_t>(j);
        Rng r1(derive_seed(seed, {1, uj}));
        Rng r2(derive_seed(seed, {2, uj}));
        Rng r3(derive_seed(seed, {3, uj}));
        const McEstimate main = mc_cost(fn, SubsetMask(fn.p, {j}), budget.n_outer, budget.n_inner, r1);
        const McEstimate rest = mc_cost(fn, SubsetMask::all(fn.p).without(j), budget.n_outer, budget.n_inner, r2);
        const McEstimate shap = mc_shapley(fn, j, budget.n_subsets, budget.n_outer, budget.n_inner, r3);
        const double total = var.estimate - rest.estimate;
        const double total_se = std::hypot(var.stderr_, rest.stderr_);

        InputIndices in;
        in.input = j;
        in.name = static_cast<std::size_t>(j) < names.size() ? names[static_cast<std::size_t>(j)]
                                                              : "x" + std::to_string(j + 1);
        in.V = normal_interval(main.estimate, main.stderr_, levels);
        in.T = normal_interval(total, total_se, levels);
        in.S = normal_interval(shap.estimate, shap.stderr_, levels);
        in.V_norm = normal_interval(main.estimate / denom, main.stderr_ / denom, levels);
        in.T_norm = normal_interval(total / denom, total_se / denom, levels);
        in.S_norm = normal_interval(shap.estimate / denom, shap.stderr_ / denom, levels);
        rep.inputs.push_back(std::move(in));
    }
    rep.extra["n_outer"] = std::to_string(budget.n_outer);
    rep.extra["n_inner"] = std::to_string(budget.n_inner);
    rep.extra["n_subsets"] = std::to_string(budget.n_subsets);
    rep.extra["n_variance"] = std::to_string(budget.n_variance);
    return rep;
}

}  // namespace shapfor
