#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

#include "shapfor/forest.hpp"
#include "shapfor/oracle.hpp"
#include "shapfor/rng.hpp"
#include "shapfor/sampler.hpp"

namespace shapfor {

enum class TestFunctionKind { Friedman, Morris, Bratley, GFunction };

/// A test function of d active inputs embedded in p >= d dimensions;
/// coordinates beyond d are ignored.
struct TestFunction {
    TestFunctionKind kind = TestFunctionKind::Friedman;
    std::int32_t d = 5;
    std::int32_t p = 5;

    static TestFunction make(TestFunctionKind kind, std::int32_t d, std::int32_t p);
    static TestFunction parse(const std::string& name, std::int32_t d, std::int32_t p);
    std::string name() const;
};

double morris_alpha(std::int32_t d);
double morris_beta(std::int32_t d);

/// Throws ValidationError when x leaves the unit cube or has the wrong length.
double eval_test(const TestFunction& fn, std::span<const double> x);
BlackBox as_black_box(const TestFunction& fn);

struct GenerationSpec {
    std::int64_t n = 0;  ///< 0 means 50 p
    double noise_ratio = 0.25;
    std::uint64_t seed = 1;
};

/// Uniform design on [0,1]^p with Gaussian noise of variance
/// noise_ratio * reference_variance(fn).
Dataset generate(const TestFunction& fn, const GenerationSpec& spec);

struct ReferenceTable {
    double variance = 0.0;
    std::array<double, 5> V{};
    std::array<double, 5> T{};
    std::array<double, 5> S{};
};

/// Published normalized indices for d = 5.
ReferenceTable reference_values(const TestFunction& fn);

/// Table variance for d = 5; otherwise a cached Monte-Carlo estimate (N = 10^6).
double reference_variance(const TestFunction& fn);

/// Random valid forest for property checks: T trees, each grown by splitting
/// random leaves up to `max_depth` with cuts drawn inside the admissible interval.
Forest random_forest(std::int32_t p, std::int32_t num_trees, std::int32_t max_depth, Rng& rng);

}  // namespace shapfor
