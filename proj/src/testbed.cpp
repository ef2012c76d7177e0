#include "shapfor/testbed.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace shapfor {

TestFunction TestFunction::make(TestFunctionKind kind, std::int32_t d, std::int32_t p) {
    if (d < 1) throw ValidationError("active dimension must be >= 1");
    if (p < d) throw ValidationError("ambient dimension p must be >= d");
    if (kind == TestFunctionKind::Friedman && d != 5) throw ValidationError("friedman has exactly 5 active inputs");
    if (kind == TestFunctionKind::Morris && d < 2) throw ValidationError("morris needs d >= 2");
    return {kind, d, p};
}

TestFunction TestFunction::parse(const std::string& name, std::int32_t d, std::int32_t p) {
    static const std::map<std::string, TestFunctionKind> kinds{{"friedman", TestFunctionKind::Friedman},
                                                               {"morris", TestFunctionKind::Morris},
                                                               {"bratley", TestFunctionKind::Bratley},
                                                               {"gfunction", TestFunctionKind::GFunction}};
    auto it = kinds.find(name);
    if (it == kinds.end()) {
        throw ValidationError("unknown test function '" + name + "' (expected friedman, morris, bratley, gfunction)");
    }
    return make(it->second, d, p);
}

std::string TestFunction::name() const {
    switch (kind) {
        case TestFunctionKind::Friedman: return "friedman";
        case TestFunctionKind::Morris: return "morris";
        case TestFunctionKind::Bratley: return "bratley";
        case TestFunctionKind::GFunction: return "gfunction";
    }
    return "unknown";
}

double morris_alpha(std::int32_t d) { return std::sqrt(12.0) - 6.0 * std::sqrt(0.1 * (d - 1)); }
double morris_beta(std::int32_t d) { return 12.0 / std::sqrt(10.0 * (d - 1)); }

double eval_test(const TestFunction& fn, std::span<const double> x) {
    if (static_cast<std::int32_t>(x.size()) != fn.p) throw ValidationError("point has wrong dimension");
    for (double v : x) {
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("point outside the unit cube");
    }
    const auto d = static_cast<std::size_t>(fn.d);
    switch (fn.kind) {
        case TestFunctionKind::Friedman:
            return 10.0 * std::sin(std::numbers::pi * x[0] * x[1]) + 20.0 * (x[2] - 0.5) * (x[2] - 0.5) +
                   10.0 * x[3] + 5.0 * x[4];
        case TestFunctionKind::Morris: {
            // sum_{i<j} x_i x_j = (S^2 - sum x_i^2) / 2
            double s = 0.0, sq = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                s += x[i];
                sq += x[i] * x[i];
            }
            return morris_alpha(fn.d) * s + morris_beta(fn.d) * 0.5 * (s * s - sq);
        }
        case TestFunctionKind::Bratley: {
            double total = 0.0, prod = 1.0;
            for (std::size_t i = 0; i < d; ++i) {
                prod *= x[i];
                total += (i % 2 == 0 ? -1.0 : 1.0) * prod;
            }
            return total;
        }
        case TestFunctionKind::GFunction: {
            double prod = 1.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double c = 0.5 * static_cast<double>(k);
                prod *= (std::abs(4.0 * x[k] - 2.0) + c) / (1.0 + c);
            }
            return prod;
        }
    }
    return 0.0;
}

BlackBox as_black_box(const TestFunction& fn) {
    return {fn.p, [fn](std::span<const double> x) { return eval_test(fn, x); }};
}

ReferenceTable reference_values(const TestFunction& fn) {
    if (fn.d != 5) throw ValidationError("reference values exist only for d = 5");
    switch (fn.kind) {
        case TestFunctionKind::Friedman:
            return {23.8,
                    {0.197, 0.197, 0.093, 0.350, 0.087},
                    {0.274, 0.274, 0.093, 0.350, 0.087},
                    {0.235, 0.235, 0.093, 0.350, 0.087}};
        case TestFunctionKind::Morris:
            return {5.25,
                    {0.190, 0.190, 0.190, 0.190, 0.190},
                    {0.210, 0.210, 0.210, 0.210, 0.210},
                    {0.2, 0.2, 0.2, 0.2, 0.2}};
        case TestFunctionKind::Bratley:
            return {0.057,
                    {0.688, 0.142, 0.051, 0.006, 0.006},
                    {0.766, 0.220, 0.099, 0.018, 0.018},
                    {0.725, 0.179, 0.073, 0.011, 0.011}};
        case TestFunctionKind::GFunction:
            return {3.076,
                    {0.411, 0.183, 0.103, 0.066, 0.046},
                    {0.558, 0.288, 0.172, 0.113, 0.080},
                    {0.482, 0.233, 0.135, 0.088, 0.062}};
    }
    throw ValidationError("unsupported test function");
}

double reference_variance(const TestFunction& fn) {
    if (fn.d == 5) return reference_values(fn).variance;
    static std::mutex mu;
    static std::map<std::pair<int, int>, double> cache;
    const std::pair<int, int> key{static_cast<int>(fn.kind), fn.d};
    std::lock_guard<std::mutex> lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    // Inert inputs do not change the variance, so calibrate at p = d.
    const TestFunction active = TestFunction::make(fn.kind, fn.d, fn.d);
    Rng rng(derive_seed(0x7e57bed, {static_cast<std::uint64_t>(fn.kind), static_cast<std::uint64_t>(fn.d)}));
    const double v = mc_variance(as_black_box(active), 1000000, rng).estimate;
    cache.emplace(key, v);
    return v;
}

Dataset generate(const TestFunction& fn, const GenerationSpec& spec) {
    if (spec.n < 0) throw ValidationError("n must be >= 1");
    if (!(spec.noise_ratio >= 0.0)) throw ValidationError("noise_ratio must be >= 0");
    const std::int64_t n = spec.n == 0 ? 50 * static_cast<std::int64_t>(fn.p) : spec.n;
    const double noise_sd = spec.noise_ratio > 0.0 ? std::sqrt(spec.noise_ratio * reference_variance(fn)) : 0.0;

    Dataset data;
    data.n = static_cast<std::size_t>(n);
    data.p = fn.p;
    data.X.resize(data.n * static_cast<std::size_t>(fn.p));
    data.y.resize(data.n);
    for (std::int32_t j = 0; j < fn.p; ++j) data.names.push_back("x" + std::to_string(j + 1));
    Rng rng(derive_seed(spec.seed, {0x6e6}));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < data.n; ++i) {
        auto row = std::span<double>(data.X.data() + i * static_cast<std::size_t>(fn.p), static_cast<std::size_t>(fn.p));
        for (double& v : row) v = uniform01(rng);
        data.y[i] = eval_test(fn, row);
        if (noise_sd > 0.0) data.y[i] += noise_sd * normal(rng);
    }
    return data;
}

Forest random_forest(std::int32_t p, std::int32_t num_trees, std::int32_t max_depth, Rng& rng) {
    Forest f;
    f.p = p;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::int32_t t = 0; t < num_trees; ++t) {
        Tree tree(normal(rng));
        const auto target = 1 + static_cast<std::int32_t>(uniform_index(rng, 1U << std::min(max_depth, 4)));
        for (std::int32_t attempt = 0; attempt < 4 * target && tree.num_leaves() < target; ++attempt) {
            const auto leaves = tree.leaves();
            const std::int32_t leaf = leaves[uniform_index(rng, leaves.size())];
            if (tree.depth(leaf) >= max_depth) continue;
            const auto dim = static_cast<std::int32_t>(uniform_index(rng, static_cast<std::size_t>(p)));
            const Interval iv = tree.interval_of(leaf, dim);
            // Snap to a 1/64 grid half the time so that boxes share edges.
            double cut = iv.lo + (0.05 + 0.9 * uniform01(rng)) * iv.length();
            if (coin(rng)) {
                const double snapped = std::round(cut * 64.0) / 64.0;
                if (snapped > iv.lo && snapped < iv.hi) cut = snapped;
            }
            if (!(cut > iv.lo && cut < iv.hi)) continue;
            tree.split(leaf, dim, cut, normal(rng), normal(rng));
        }
        f.trees.push_back(std::move(tree));
    }
    return f;
}

}  // namespace shapfor
