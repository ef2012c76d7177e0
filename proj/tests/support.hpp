#pragma once

// Test-only oracles. These deliberately avoid the pair-sum machinery of the
// library so they can check it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "shapfor/forest.hpp"
#include "shapfor/rng.hpp"
#include "shapfor/sensitivity.hpp"

namespace shapfor::testing {

/// Tree used in the figure-style examples: root x2 < 0.7; left x1 < 0.2; right x1 < 0.4.
inline Tree figure_tree(double m1 = 1, double m2 = 2, double m3 = 3, double m4 = 4) {
    Tree t;
    auto [l, r] = t.split(0, 1, 0.7);
    t.split(l, 0, 0.2, m1, m2);
    t.split(r, 0, 0.4, m3, m4);
    return t;
}

/// f = 1{x1 >= 0.5}
inline Forest step_forest(std::int32_t p = 2) {
    Tree t;
    t.split(0, 0, 0.5, 0.0, 1.0);
    return Forest{p, {t}};
}

/// f = 1{x1 >= 0.5, x2 >= 0.5}
inline Forest interaction_forest(std::int32_t p = 2) {
    Tree t;
    auto [l, r] = t.split(0, 0, 0.5, 0.0, 0.0);
    (void)l;
    t.split(r, 1, 0.5, 0.0, 1.0);
    return Forest{p, {t}};
}

/// Exact conditional-variance oracle on the overlay grid of all cuts.
/// f is constant on every grid cell, so E[f | X_P] is an exact finite sum.
class GridOracle {
public:
    explicit GridOracle(const Forest& f) : f_(f) {
        const auto p = static_cast<std::size_t>(f.p);
        edges_.assign(p, {0.0, 1.0});
        for (const auto& t : f.trees) {
            for (const auto& n : t.nodes()) {
                if (!n.is_leaf()) edges_[static_cast<std::size_t>(n.dim)].push_back(n.cut);
            }
        }
        for (auto& e : edges_) {
            std::sort(e.begin(), e.end());
            e.erase(std::unique(e.begin(), e.end()), e.end());
        }
        // Enumerate cells, store value and per-dim cell index.
        std::vector<std::size_t> idx(p, 0);
        std::vector<double> x(p);
        for (;;) {
            double vol = 1.0;
            for (std::size_t j = 0; j < p; ++j) {
                const double lo = edges_[j][idx[j]], hi = edges_[j][idx[j] + 1];
                x[j] = 0.5 * (lo + hi);
                vol *= hi - lo;
            }
            cells_.push_back({idx, vol, f.evaluate(x)});
            std::size_t j = 0;
            while (j < p && ++idx[j] == edges_[j].size() - 1) idx[j++] = 0;
            if (j == p) break;
        }
    }

    double mean() const {
        double m = 0.0;
        for (const auto& c : cells_) m += c.vol * c.value;
        return m;
    }

    double cost(const SubsetMask& P) const {
        // Group cells by their P-coordinates.
        std::map<std::vector<std::size_t>, std::pair<double, double>> groups;  // key -> (vol, integral)
        for (const auto& c : cells_) {
            std::vector<std::size_t> key;
            for (std::int32_t j = 0; j < f_.p; ++j) {
                if (P.contains(j)) key.push_back(c.idx[static_cast<std::size_t>(j)]);
            }
            auto& g = groups[key];
            g.first += c.vol;
            g.second += c.vol * c.value;
        }
        double second = 0.0;
        for (const auto& [k, g] : groups) second += g.second * g.second / g.first;
        const double m = mean();
        return second - m * m;
    }

    double variance() const { return cost(SubsetMask::all(f_.p)); }

    /// Shapley value by enumerating all subsets with the combinatorial weights.
    double shapley(std::int32_t j) const {
        const std::int32_t p = f_.p;
        double s = 0.0;
        for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << p); ++bits) {
            if ((bits >> j) & 1U) continue;
            const SubsetMask P = SubsetMask::from_bits(p, bits);
            const int k = P.size();
            s += weight(p, k) * (cost(P.with(j)) - cost(P));
        }
        return s;
    }

    /// V_P by the explicit recursion V_P = c_P - sum over proper subsets.
    double interaction(std::uint64_t bits) const {
        if (bits == 0) return 0.0;
        double v = cost(SubsetMask::from_bits(f_.p, bits));
        for (std::uint64_t sub = (bits - 1) & bits; sub != 0; sub = (sub - 1) & bits) v -= interaction(sub);
        return v;
    }

    static double weight(std::int32_t p, int k) {
        // k! (p-k-1)! / p!
        return std::exp(std::lgamma(k + 1.0) + std::lgamma(p - k + 0.0) - std::lgamma(p + 1.0));
    }

private:
    struct Cell {
        std::vector<std::size_t> idx;
        double vol;
        double value;
    };
    const Forest& f_;
    std::vector<std::vector<double>> edges_;
    std::vector<Cell> cells_;
};

struct McMoments {
    double mean, mean_se, var, var_se;
};

/// Plain Monte-Carlo moments of a function on the unit cube.
template <class Fn>
McMoments mc_moments(std::int32_t p, Fn&& fn, std::int64_t N, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(static_cast<std::size_t>(p));
    std::vector<double> vals(static_cast<std::size_t>(N));
    double s = 0.0;
    for (auto& v : vals) {
        for (auto& xi : x) xi = uniform01(rng);
        v = fn(x);
        s += v;
    }
    const double m = s / static_cast<double>(N);
    double m2 = 0.0, m4 = 0.0;
    for (double v : vals) {
        const double d = (v - m) * (v - m);
        m2 += d;
        m4 += d * d;
    }
    const double var = m2 / static_cast<double>(N);
    const double mu4 = m4 / static_cast<double>(N);
    return {m, std::sqrt(var / static_cast<double>(N)), var,
            std::sqrt(std::max(0.0, mu4 - var * var) / static_cast<double>(N))};
}

}  // namespace shapfor::testing
