#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace shapfor {

/// Raised when an argument or a loaded artifact violates a documented contract.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Half-open interval [lo, hi) on one input axis of the unit cube.
struct Interval {
    double lo = 0.0;
    double hi = 1.0;

    double length() const { return hi - lo; }
    bool contains(double x) const { return lo <= x && (x < hi || (hi == 1.0 && x == 1.0)); }
    bool valid() const { return 0.0 <= lo && lo < hi && hi <= 1.0; }
};

inline double overlap(const Interval& a, const Interval& b) {
    const double lo = a.lo > b.lo ? a.lo : b.lo;
    const double hi = a.hi < b.hi ? a.hi : b.hi;
    return hi > lo ? hi - lo : 0.0;
}

struct AxisBound {
    std::int32_t dim;
    Interval interval;
};

/// A leaf's value together with its hyperrectangle. Only split dimensions
/// are stored, sorted by dimension; absent dimensions span [0,1].
struct LeafBox {
    double mu = 0.0;
    std::vector<AxisBound> bounds;

    double volume() const;
    bool contains(std::span<const double> x) const;
    const Interval* bound(std::int32_t dim) const;
};

/// Tree node in a flat arena. `dim < 0` marks a leaf.
struct TreeNode {
    std::int32_t dim = -1;
    double cut = 0.0;
    double mu = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int32_t parent = -1;

    bool is_leaf() const { return dim < 0; }
};

/// Binary regression tree with axis-aligned splits `x[dim] < cut`.
/// A point with x[dim] == cut goes right. Node 0 is the root.
class Tree {
public:
    explicit Tree(double mu = 0.0);

    /// Rebuilds a tree from a pre-order token walk; validates the invariants.
    static Tree from_nodes(std::vector<TreeNode> nodes, std::int32_t p);

    std::span<const TreeNode> nodes() const { return nodes_; }
    const TreeNode& node(std::int32_t i) const { return nodes_[static_cast<std::size_t>(i)]; }
    std::int32_t num_nodes() const { return static_cast<std::int32_t>(nodes_.size()); }
    std::int32_t num_leaves() const { return num_leaves_; }
    std::int32_t depth(std::int32_t i) const;

    /// Index of the leaf containing x.
    std::int32_t find_leaf(std::span<const double> x) const;
    double evaluate(std::span<const double> x) const { return node(find_leaf(x)).mu; }

    /// Admissible interval of node i along `dim`.
    Interval interval_of(std::int32_t i, std::int32_t dim) const;

    /// Turns leaf i into an internal node with two fresh leaves; returns their indices.
    std::pair<std::int32_t, std::int32_t> split(std::int32_t i, std::int32_t dim, double cut,
                                                double mu_left = 0.0, double mu_right = 0.0);
    /// Collapses internal node i whose children are both leaves.
    void collapse(std::int32_t i, double mu = 0.0);
    void set_mu(std::int32_t leaf, double mu) { nodes_[static_cast<std::size_t>(leaf)].mu = mu; }

    /// Throws ValidationError unless every cut narrows its interval and split dims are < p.
    void validate(std::int32_t p) const;

    /// Leaves in pre-order.
    std::vector<std::int32_t> leaves() const;
    /// Internal nodes whose two children are leaves.
    std::vector<std::int32_t> collapsible_nodes() const;

    bool operator==(const Tree& other) const;

private:
    std::vector<TreeNode> nodes_;
    std::int32_t num_leaves_ = 1;
};

std::vector<LeafBox> leaf_boxes(const Tree& tree);

/// Sum of trees on [0,1]^p.
struct Forest {
    std::int32_t p = 0;
    std::vector<Tree> trees;

    Forest() = default;
    Forest(std::int32_t dim, std::vector<Tree> ts) : p(dim), trees(std::move(ts)) {}

    double evaluate(std::span<const double> x) const;
    bool operator==(const Forest& other) const = default;
};

/// Trees of `a` followed by trees of `b` with leaf values multiplied by `sign_b`.
Forest concatenate(const Forest& a, const Forest& b, double sign_b = 1.0);

/// Affine map raw -> scaled: (raw - offset) / scale.
struct AffineMap {
    double offset = 0.0;
    double scale = 1.0;

    double forward(double raw) const { return (raw - offset) / scale; }
    double inverse(double scaled) const { return offset + scale * scaled; }
    bool operator==(const AffineMap&) const = default;
};

struct PosteriorDraw {
    Forest forest;
    double sigma2 = 1.0;
    bool operator==(const PosteriorDraw&) const = default;
};

/// Retained MCMC draws. Forests live in scaled-response units; `y_scaling`
/// maps them back (variances scale by y_scaling.scale^2).
struct PosteriorEnsemble {
    std::int32_t p = 0;
    std::vector<PosteriorDraw> draws;
    std::vector<AffineMap> x_scaling;
    AffineMap y_scaling;

    void validate() const;
    bool operator==(const PosteriorEnsemble&) const = default;
};

// Exact moments under the uniform measure on [0,1]^p.
double mean(const Forest& forest);
double second_moment(const Forest& forest);
double variance(const Forest& forest);
double l2_distance(const Forest& f, const Forest& f0);
double sup_norm_bound(const Forest& forest);

void write_ensemble(std::ostream& out, const PosteriorEnsemble& ensemble);
PosteriorEnsemble read_ensemble(std::istream& in);
std::string serialize(const PosteriorEnsemble& ensemble);
PosteriorEnsemble deserialize(const std::string& text);

inline constexpr int kEnsembleFormatVersion = 1;

}  // namespace shapfor
