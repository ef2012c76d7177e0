#include "shapfor/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "shapfor/rng.hpp"

namespace shapfor {

namespace {

void check_index(std::int32_t j, std::int32_t p) {
    if (j < 0 || j >= p) {
        throw ValidationError("input index " + std::to_string(j) + " out of range for p=" + std::to_string(p));
    }
}

void check_mask(const SubsetMask& P, std::int32_t p) {
    if (P.p() != p) throw ValidationError("subset mask dimension does not match forest dimension");
}

}  // namespace

SubsetMask::SubsetMask(std::int32_t p, std::initializer_list<std::int32_t> members)
    : SubsetMask(p, std::span<const std::int32_t>(members.begin(), members.size())) {}

SubsetMask::SubsetMask(std::int32_t p, std::span<const std::int32_t> members) : SubsetMask(p) {
    for (std::int32_t j : members) {
        check_index(j, p);
        in_[static_cast<std::size_t>(j)] = 1;
    }
}

SubsetMask SubsetMask::all(std::int32_t p) {
    SubsetMask m(p);
    std::fill(m.in_.begin(), m.in_.end(), 1);
    return m;
}

SubsetMask SubsetMask::from_bits(std::int32_t p, std::uint64_t bits) {
    SubsetMask m(p);
    for (std::int32_t j = 0; j < p && j < 64; ++j) m.in_[static_cast<std::size_t>(j)] = (bits >> j) & 1U;
    return m;
}

std::int32_t SubsetMask::size() const {
    return static_cast<std::int32_t>(std::count(in_.begin(), in_.end(), 1));
}

std::vector<std::int32_t> SubsetMask::members() const {
    std::vector<std::int32_t> out;
    for (std::size_t j = 0; j < in_.size(); ++j) {
        if (in_[j]) out.push_back(static_cast<std::int32_t>(j));
    }
    return out;
}

void SubsetMask::insert(std::int32_t j) {
    check_index(j, p());
    in_[static_cast<std::size_t>(j)] = 1;
}

void SubsetMask::erase(std::int32_t j) {
    check_index(j, p());
    in_[static_cast<std::size_t>(j)] = 0;
}

SubsetMask SubsetMask::with(std::int32_t j) const {
    check_index(j, p());
    SubsetMask m = *this;
    m.in_[static_cast<std::size_t>(j)] = 1;
    return m;
}

SubsetMask SubsetMask::without(std::int32_t j) const {
    check_index(j, p());
    SubsetMask m = *this;
    m.in_[static_cast<std::size_t>(j)] = 0;
    return m;
}

SubsetMask SubsetMask::complement() const {
    SubsetMask m = *this;
    for (auto& c : m.in_) c = c ? 0 : 1;
    return m;
}

double cost(const BoxTable& table, const SubsetMask& P) {
    check_mask(P, table.p());
    double acc = 0.0;
    for (std::int32_t j : P.members()) {
        // Each pair is counted at its smallest shared dimension inside P.
        for_each_pair_sharing(table, j, [&](double coef, double rj, std::span<const SharedAxis> others) {
            double prod = rj;
            for (const auto& o : others) {
                if (!P.contains(o.dim)) continue;
                if (o.dim < j) return;
                prod *= o.ratio;
            }
            acc += coef * (prod - 1.0);
        });
    }
    return std::max(0.0, acc);
}

double cost(const Forest& forest, const SubsetMask& P) { return cost(BoxTable(forest), P); }

double cost_difference(const BoxTable& table, const SubsetMask& P, std::int32_t j) {
    check_mask(P, table.p());
    check_index(j, table.p());
    if (P.contains(j)) throw ValidationError("cost_difference requires j outside P");
    double acc = 0.0;
    for_each_pair_sharing(table, j, [&](double coef, double rj, std::span<const SharedAxis> others) {
        double prod = 1.0;
        for (const auto& o : others) {
            if (P.contains(o.dim)) prod *= o.ratio;
        }
        acc += coef * prod * (rj - 1.0);
    });
    return acc;
}

double cost_difference(const Forest& forest, const SubsetMask& P, std::int32_t j) {
    return cost_difference(BoxTable(forest), P, j);
}

double sobol_interaction(const BoxTable& table, const SubsetMask& P) {
    check_mask(P, table.p());
    const auto members = P.members();
    const auto k = static_cast<std::int32_t>(members.size());
    if (k == 0) throw ValidationError("interaction subset must be nonempty");
    if (k > kMaxInteractionOrder) {
        throw ValidationError("interaction order " + std::to_string(k) + " exceeds limit " +
                              std::to_string(kMaxInteractionOrder));
    }
    double acc = 0.0;
    for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << k); ++bits) {
        SubsetMask Q(table.p());
        int size = 0;
        for (std::int32_t b = 0; b < k; ++b) {
            if ((bits >> b) & 1U) {
                Q.insert(members[static_cast<std::size_t>(b)]);
                ++size;
            }
        }
        const double c = size == 0 ? 0.0 : cost(table, Q);
        acc += ((k - size) % 2 == 0 ? 1.0 : -1.0) * c;
    }
    return acc;
}

double sobol_interaction(const Forest& forest, const SubsetMask& P) {
    return sobol_interaction(BoxTable(forest), P);
}

double sobol_main(const BoxTable& table, std::int32_t j) {
    check_index(j, table.p());
    return std::max(0.0, cost_difference(table, SubsetMask(table.p()), j));
}

double sobol_main(const Forest& forest, std::int32_t j) { return sobol_main(BoxTable(forest), j); }

double sobol_total(const BoxTable& table, std::int32_t j) {
    check_index(j, table.p());
    return std::max(0.0, cost_difference(table, SubsetMask::all(table.p()).without(j), j));
}

double sobol_total(const Forest& forest, std::int32_t j) { return sobol_total(BoxTable(forest), j); }

double shapley_exact(const BoxTable& table, std::int32_t j) {
    check_index(j, table.p());
    // For a pair whose other shared axes are S' (|S'| = s), the Shapley weights
    // of all P with P ∩ S' = A add up to the chance that exactly A precedes j
    // in a random ordering of S' ∪ {j}: |A|! (s - |A|)! / (s + 1)!.
    double acc = 0.0;
    std::vector<double> esym;
    for_each_pair_sharing(table, j, [&](double coef, double rj, std::span<const SharedAxis> others) {
        const std::size_t s = others.size();
        esym.assign(s + 1, 0.0);
        esym[0] = 1.0;
        for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t a = i + 1; a > 0; --a) esym[a] += others[i].ratio * esym[a - 1];
        }
        double avg = 0.0;
        double binom = 1.0;  // C(s, a)
        for (std::size_t a = 0; a <= s; ++a) {
            avg += esym[a] / binom;
            binom = binom * static_cast<double>(s - a) / static_cast<double>(a + 1);
        }
        avg /= static_cast<double>(s + 1);
        acc += coef * (rj - 1.0) * avg;
    });
    return std::max(0.0, acc);
}

double shapley_exact(const Forest& forest, std::int32_t j) { return shapley_exact(BoxTable(forest), j); }

SubsetMask random_subset(std::int32_t p, std::int32_t j, std::uint64_t seed, std::uint64_t draw, std::uint64_t l) {
    Rng rng(derive_seed(seed, {draw, static_cast<std::uint64_t>(j), l}));
    SubsetMask P(p);
    std::uint64_t bits = 0;
    int left = 0;
    for (std::int32_t d = 0; d < p; ++d) {
        if (d == j) continue;
        if (left == 0) {
            bits = rng();
            left = 64;
        }
        if (bits & 1U) P.insert(d);
        bits >>= 1;
        --left;
    }
    return P;
}

double shapley_sampled_draw(const BoxTable& table, std::int32_t j, std::int32_t m, std::uint64_t seed,
                            std::uint64_t draw) {
    check_index(j, table.p());
    if (m < 1) throw ValidationError("m must be >= 1");
    double acc = 0.0;
    for (std::int32_t l = 0; l < m; ++l) {
        const SubsetMask P = random_subset(table.p(), j, seed, draw, static_cast<std::uint64_t>(l));
        // Nonnegative up to roundoff: a conditional variance gain under a product measure.
        acc += std::max(0.0, cost_difference(table, P, j));
    }
    return acc / static_cast<double>(m);
}

std::vector<double> shapley_sampled(const PosteriorEnsemble& ensemble, std::int32_t j, std::int32_t m,
                                    std::uint64_t seed) {
    std::vector<double> out;
    out.reserve(ensemble.draws.size());
    for (std::size_t i = 0; i < ensemble.draws.size(); ++i) {
        out.push_back(shapley_sampled_draw(BoxTable(ensemble.draws[i].forest), j, m, seed, i));
    }
    return out;
}

LipschitzGap lipschitz_gap(const Forest& f, const Forest& f0, const SubsetMask& P) {
    if (f.p != f0.p) throw ValidationError("forest dimension mismatch");
    const double lhs = std::abs(cost(f, P) - cost(f0, P));
    const double rhs = 4.0 * std::max(sup_norm_bound(f), sup_norm_bound(f0)) * l2_distance(f, f0);
    return {lhs, rhs};
}

double empirical_quantile(std::vector<double> v, double level) {
    if (v.empty()) throw ValidationError("quantile of empty sample");
    std::sort(v.begin(), v.end());
    const double h = level * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

IndexEstimate summarize(std::span<const double> values, std::span<const double> levels, bool keep_draws) {
    if (values.empty()) throw ValidationError("cannot summarize an empty sample");
    IndexEstimate e;
    e.point = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    // Keep the mean inside the sample range despite summation roundoff.
    e.point = std::clamp(e.point, sorted.front(), sorted.back());
    for (double lv : levels) {
        if (!(lv > 0.0 && lv < 1.0)) throw ValidationError("quantile levels must lie in (0,1)");
        const double h = lv * static_cast<double>(sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
        e.quantiles[lv] = sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    }
    if (keep_draws) e.draws = std::vector<double>(values.begin(), values.end());
    return e;
}

namespace {

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(n)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += threads) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace

SensitivityReport assemble_report(const PosteriorEnsemble& ensemble, const ReportOptions& options,
                                  std::span<const std::string> names) {
    if (ensemble.draws.empty()) throw ValidationError("ensemble has no draws");
    if (options.m < 1) throw ValidationError("m must be >= 1");
    const std::int32_t p = ensemble.p;
    const std::size_t nd = ensemble.draws.size();
    const auto P = static_cast<std::size_t>(p);
    const bool exact = p <= options.exact_threshold;

    // Per-draw values in scaled units, laid out [draw][input].
    std::vector<double> V(nd * P), T(nd * P), S(nd * P), var(nd), sig(nd);
    parallel_for(nd, options.threads, [&](std::size_t i) {
        const BoxTable table(ensemble.draws[i].forest);
        var[i] = std::max(0.0, cost(table, SubsetMask::all(p)));
        sig[i] = ensemble.draws[i].sigma2;
        for (std::int32_t j = 0; j < p; ++j) {
            const std::size_t at = i * P + static_cast<std::size_t>(j);
            V[at] = sobol_main(table, j);
            T[at] = sobol_total(table, j);
            S[at] = exact ? shapley_exact(table, j) : shapley_sampled_draw(table, j, options.m, options.seed, i);
        }
    });

    const double scale2 = ensemble.y_scaling.scale * ensemble.y_scaling.scale;
    SensitivityReport rep;
    rep.shapley_mode = exact ? "exact" : "sampled";
    rep.p = p;
    rep.m = options.m;
    rep.n_draw = nd;
    rep.seed = options.seed;
    rep.levels = options.levels;
    rep.normalization = options.normalization;

    std::vector<double> buf(nd), nbuf(nd);
    auto column = [&](const std::vector<double>& src, std::size_t j, bool normalized) {
        for (std::size_t i = 0; i < nd; ++i) {
            const double v = src[i * P + j];
            buf[i] = v * scale2;
            nbuf[i] = var[i] > 0.0 ? v / var[i] : 0.0;
        }
        return normalized ? nbuf : buf;
    };
    for (std::size_t j = 0; j < P; ++j) {
        InputIndices in;
        in.input = static_cast<std::int32_t>(j);
        in.name = j < names.size() ? names[j] : "x" + std::to_string(j + 1);
        in.V = summarize(column(V, j, false), options.levels, options.keep_draws);
        in.T = summarize(column(T, j, false), options.levels, options.keep_draws);
        in.S = summarize(column(S, j, false), options.levels, options.keep_draws);
        in.V_norm = summarize(column(V, j, true), options.levels, options.keep_draws);
        in.T_norm = summarize(column(T, j, true), options.levels, options.keep_draws);
        in.S_norm = summarize(column(S, j, true), options.levels, options.keep_draws);
        rep.inputs.push_back(std::move(in));
    }
    for (std::size_t i = 0; i < nd; ++i) {
        var[i] *= scale2;
        sig[i] *= scale2;
    }
    rep.variance = summarize(var, options.levels, options.keep_draws);
    rep.sigma2 = summarize(sig, options.levels, options.keep_draws);
    return rep;
}

}  // namespace shapfor
