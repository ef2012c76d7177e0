#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "shapfor/oracle.hpp"
#include "shapfor/testbed.hpp"
#include "support.hpp"

using namespace shapfor;

namespace {

BlackBox constant_box(std::int32_t p) {
    return {p, [](std::span<const double>) { return 1.5; }};
}

BlackBox step_box() {
    return {2, [](std::span<const double> x) { return x[0] >= 0.5 ? 1.0 : 0.0; }};
}

BlackBox interaction_box() {
    return {2, [](std::span<const double> x) { return x[0] >= 0.5 && x[1] >= 0.5 ? 1.0 : 0.0; }};
}

bool within(const McEstimate& e, double truth, double k = 3.0) { return std::abs(e.estimate - truth) <= k * e.stderr_; }

}  // namespace

TEST_CASE("mc_cost examples") {
    Rng rng(1);
    const auto c = mc_cost(constant_box(3), SubsetMask(3, {1}), 1000, 16, rng);
    CHECK(std::abs(c.estimate) <= 3.0 * c.stderr_);

    const auto s = mc_cost(step_box(), SubsetMask(2, {0}), 100000, 16, rng);
    INFO(s.estimate, " +- ", s.stderr_);
    CHECK(within(s, 0.25));

    const auto i = mc_cost(interaction_box(), SubsetMask(2, {0}), 100000, 16, rng);
    INFO(i.estimate, " +- ", i.stderr_);
    CHECK(within(i, 0.0625));

    CHECK_THROWS_AS(mc_cost(step_box(), SubsetMask(2), 2, 16, rng), ValidationError);
    CHECK_THROWS_AS(mc_cost(step_box(), SubsetMask(3), 10, 16, rng), ValidationError);
}

TEST_CASE("mc_shapley examples") {
    Rng rng(2);
    const auto z = mc_shapley(step_box(), 1, 64, 5000, 8, rng);
    INFO(z.estimate, " +- ", z.stderr_);
    CHECK(within(z, 0.0));

    const auto s = mc_shapley(interaction_box(), 0, 256, 10000, 8, rng);
    INFO(s.estimate, " +- ", s.stderr_);
    CHECK(within(s, 0.09375));
}

TEST_CASE("mc_shapley on the g-function, first input") {
    // Table value 0.482 is normalized by the function's variance.
    const TestFunction g = TestFunction::make(TestFunctionKind::GFunction, 5, 5);
    Rng rng(3);
    const auto s = mc_shapley(as_black_box(g), 0, 256, 20000, 16, rng);
    Rng vr(4);
    const auto v = mc_variance(as_black_box(g), 1000000, vr);
    INFO("S1 ", s.estimate, " var ", v.estimate, " normalized ", s.estimate / v.estimate);
    CHECK(std::abs(s.estimate / v.estimate - 0.482) <= 0.02);
}

TEST_CASE("mc_variance examples") {
    Rng rng(5);
    const auto c = mc_variance(constant_box(2), 1000, rng);
    CHECK(std::abs(c.estimate) <= 3.0 * c.stderr_ + 1e-300);

    const auto f = mc_variance(as_black_box(TestFunction::make(TestFunctionKind::Friedman, 5, 5)), 1000000, rng);
    CHECK(std::abs(f.estimate - 23.8) <= 0.2);

    // The g-function with c_k = (k-1)/2 has variance prod(1 + 1/(3 (1+c_k)^2)) - 1.
    double prod = 1.0;
    for (int k = 0; k < 5; ++k) prod *= 1.0 + 1.0 / (3.0 * (1.0 + 0.5 * k) * (1.0 + 0.5 * k));
    const auto g = mc_variance(as_black_box(TestFunction::make(TestFunctionKind::GFunction, 5, 5)), 1000000, rng);
    INFO("g variance ", g.estimate, " analytic ", prod - 1.0);
    CHECK(std::abs(g.estimate - (prod - 1.0)) <= 0.02);
    CHECK(within(g, prod - 1.0));
}

TEST_CASE("standard error halves when N doubles") {
    const BlackBox fn = as_black_box(TestFunction::make(TestFunctionKind::Friedman, 5, 5));
    std::vector<double> lx, ly;
    for (int k = 0; k < 5; ++k) {
        Rng rng(derive_seed(6, {static_cast<std::uint64_t>(k)}));
        const std::int64_t N = std::int64_t{20000} << k;
        lx.push_back(std::log(static_cast<double>(N)));
        ly.push_back(std::log(mc_variance(fn, N, rng).stderr_));
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i] / 5;
        my += ly[i] / 5;
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    const double slope = sxy / sxx;
    INFO("slope ", slope);
    CHECK(std::abs(slope + 0.5) <= 0.1);

    // Same for the double-loop cost estimator.
    lx.clear();
    ly.clear();
    for (int k = 0; k < 5; ++k) {
        Rng rng(derive_seed(7, {static_cast<std::uint64_t>(k)}));
        const std::int64_t n = std::int64_t{1000} << k;
        lx.push_back(std::log(static_cast<double>(n)));
        ly.push_back(std::log(mc_cost(fn, SubsetMask(5, {0, 3}), n, 8, rng).stderr_));
    }
    mx = my = sxy = sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i] / 5;
        my += ly[i] / 5;
    }
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    INFO("cost slope ", sxy / sxx);
    CHECK(std::abs(sxy / sxx + 0.5) <= 0.1);
}

TEST_CASE("closed-form costs agree with the oracle on random forests") {
    Rng rng(77);
    int failures = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const auto p = static_cast<std::int32_t>(1 + uniform_index(rng, 6));
        const Forest f = random_forest(p, 1 + static_cast<std::int32_t>(uniform_index(rng, 5)), 3, rng);
        SubsetMask P(p);
        for (std::int32_t j = 0; j < p; ++j) {
            if (coin(rng)) P.insert(j);
        }
        Rng mc(derive_seed(78, {static_cast<std::uint64_t>(rep)}));
        const auto est = mc_cost(as_black_box(f), P, 10000, 4, mc);
        const double exact = cost(f, P);
        if (!within(est, exact)) ++failures;
    }
    // ~0.3 expected at 3 sigma; P(>= 3) under Poisson(0.3) is 0.4%.
    CHECK(failures <= 2);
}

TEST_CASE("reproducible given a seed") {
    const BlackBox fn = as_black_box(TestFunction::make(TestFunctionKind::Bratley, 5, 5));
    Rng a(11), b(11);
    const auto ea = mc_shapley(fn, 2, 8, 500, 4, a);
    const auto eb = mc_shapley(fn, 2, 8, 500, 4, b);
    CHECK(ea.estimate == eb.estimate);
    CHECK(ea.stderr_ == eb.stderr_);

    OracleBudget budget{500, 4, 8, 10000};
    const std::vector<double> levels{0.025, 0.975};
    const auto r1 = oracle_report(fn, budget, levels, 3);
    const auto r2 = oracle_report(fn, budget, levels, 3);
    CHECK(r1.method == "mc");
    for (std::size_t j = 0; j < 5; ++j) {
        CHECK(r1.inputs[j].S.point == r2.inputs[j].S.point);
        CHECK(r1.inputs[j].S.lo() <= r1.inputs[j].S.point);
        CHECK(r1.inputs[j].S.hi() >= r1.inputs[j].S.point);
    }
}
