#include "shapfor/forest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "shapfor/box_table.hpp"

namespace shapfor {

double LeafBox::volume() const {
    double v = 1.0;
    for (const auto& b : bounds) v *= b.interval.length();
    return v;
}

bool LeafBox::contains(std::span<const double> x) const {
    for (const auto& b : bounds) {
        if (!b.interval.contains(x[static_cast<std::size_t>(b.dim)])) return false;
    }
    return true;
}

const Interval* LeafBox::bound(std::int32_t dim) const {
    auto it = std::lower_bound(bounds.begin(), bounds.end(), dim,
                               [](const AxisBound& b, std::int32_t d) { return b.dim < d; });
    return (it != bounds.end() && it->dim == dim) ? &it->interval : nullptr;
}

Tree::Tree(double mu) {
    TreeNode root;
    root.mu = mu;
    nodes_.push_back(root);
}

Tree Tree::from_nodes(std::vector<TreeNode> nodes, std::int32_t p) {
    if (nodes.empty()) throw ValidationError("tree has no nodes");
    Tree t;
    t.nodes_ = std::move(nodes);
    t.num_leaves_ = 0;
    for (const auto& n : t.nodes_) t.num_leaves_ += n.is_leaf() ? 1 : 0;
    t.validate(p);
    return t;
}

std::int32_t Tree::depth(std::int32_t i) const {
    std::int32_t d = 0;
    while (node(i).parent >= 0) {
        i = node(i).parent;
        ++d;
    }
    return d;
}

std::int32_t Tree::find_leaf(std::span<const double> x) const {
    std::int32_t i = 0;
    while (!node(i).is_leaf()) {
        const TreeNode& n = node(i);
        i = x[static_cast<std::size_t>(n.dim)] < n.cut ? n.left : n.right;
    }
    return i;
}

Interval Tree::interval_of(std::int32_t i, std::int32_t dim) const {
    Interval iv;
    std::int32_t child = i;
    std::int32_t parent = node(i).parent;
    while (parent >= 0) {
        const TreeNode& n = node(parent);
        if (n.dim == dim) {
            if (n.left == child) {
                iv.hi = std::min(iv.hi, n.cut);
            } else {
                iv.lo = std::max(iv.lo, n.cut);
            }
        }
        child = parent;
        parent = n.parent;
    }
    return iv;
}

std::pair<std::int32_t, std::int32_t> Tree::split(std::int32_t i, std::int32_t dim, double cut,
                                                  double mu_left, double mu_right) {
    if (!node(i).is_leaf()) throw ValidationError("split target is not a leaf");
    const auto l = static_cast<std::int32_t>(nodes_.size());
    TreeNode left;
    left.mu = mu_left;
    left.parent = i;
    TreeNode right;
    right.mu = mu_right;
    right.parent = i;
    nodes_.push_back(left);
    nodes_.push_back(right);
    TreeNode& n = nodes_[static_cast<std::size_t>(i)];
    n.dim = dim;
    n.cut = cut;
    n.left = l;
    n.right = l + 1;
    ++num_leaves_;
    return {l, l + 1};
}

void Tree::collapse(std::int32_t i, double mu) {
    TreeNode& n = nodes_[static_cast<std::size_t>(i)];
    if (n.is_leaf() || !node(n.left).is_leaf() || !node(n.right).is_leaf()) {
        throw ValidationError("collapse target must have two leaf children");
    }
    std::int32_t a = std::max(n.left, n.right);
    std::int32_t b = std::min(n.left, n.right);
    n.dim = -1;
    n.cut = 0.0;
    n.left = n.right = -1;
    n.mu = mu;
    // Remove the higher index first so the lower one stays valid.
    for (std::int32_t gone : {a, b}) {
        nodes_.erase(nodes_.begin() + gone);
        for (auto& m : nodes_) {
            if (m.left > gone) --m.left;
            if (m.right > gone) --m.right;
            if (m.parent > gone) --m.parent;
        }
    }
    --num_leaves_;
}

void Tree::validate(std::int32_t p) const {
    std::int32_t leaves = 0;
    std::vector<std::int32_t> stack{0};
    std::vector<bool> seen(nodes_.size(), false);
    while (!stack.empty()) {
        const std::int32_t i = stack.back();
        stack.pop_back();
        if (i < 0 || i >= num_nodes() || seen[static_cast<std::size_t>(i)]) {
            throw ValidationError("tree links are not a proper binary tree");
        }
        seen[static_cast<std::size_t>(i)] = true;
        const TreeNode& n = node(i);
        if (n.is_leaf()) {
            if (!std::isfinite(n.mu)) throw ValidationError("non-finite leaf value");
            ++leaves;
            continue;
        }
        if (n.dim >= p) throw ValidationError("split dimension out of range");
        const Interval iv = interval_of(i, n.dim);
        if (!(n.cut > iv.lo && n.cut < iv.hi)) {
            throw ValidationError("cut does not lie strictly inside its admissible interval");
        }
        if (n.left < 0 || n.right < 0 || node(n.left).parent != i || node(n.right).parent != i) {
            throw ValidationError("tree links are not a proper binary tree");
        }
        stack.push_back(n.right);
        stack.push_back(n.left);
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
        throw ValidationError("tree contains unreachable nodes");
    }
    if (leaves != num_leaves_) throw ValidationError("leaf count mismatch");
}

std::vector<std::int32_t> Tree::leaves() const {
    std::vector<std::int32_t> out;
    std::vector<std::int32_t> stack{0};
    while (!stack.empty()) {
        const std::int32_t i = stack.back();
        stack.pop_back();
        const TreeNode& n = node(i);
        if (n.is_leaf()) {
            out.push_back(i);
        } else {
            stack.push_back(n.right);
            stack.push_back(n.left);
        }
    }
    return out;
}

std::vector<std::int32_t> Tree::collapsible_nodes() const {
    std::vector<std::int32_t> out;
    for (std::int32_t i = 0; i < num_nodes(); ++i) {
        const TreeNode& n = node(i);
        if (!n.is_leaf() && node(n.left).is_leaf() && node(n.right).is_leaf()) out.push_back(i);
    }
    return out;
}

namespace {

bool same_subtree(const Tree& a, std::int32_t i, const Tree& b, std::int32_t j) {
    const TreeNode& x = a.node(i);
    const TreeNode& y = b.node(j);
    if (x.is_leaf() != y.is_leaf()) return false;
    if (x.is_leaf()) return x.mu == y.mu;
    return x.dim == y.dim && x.cut == y.cut && same_subtree(a, x.left, b, y.left) &&
           same_subtree(a, x.right, b, y.right);
}

void collect_boxes(const Tree& tree, std::int32_t i, std::vector<AxisBound>& path,
                   std::vector<LeafBox>& out) {
    const TreeNode& n = tree.node(i);
    if (n.is_leaf()) {
        LeafBox box;
        box.mu = n.mu;
        box.bounds = path;
        std::sort(box.bounds.begin(), box.bounds.end(),
                  [](const AxisBound& a, const AxisBound& b) { return a.dim < b.dim; });
        out.push_back(std::move(box));
        return;
    }
    auto it = std::find_if(path.begin(), path.end(),
                           [&](const AxisBound& b) { return b.dim == n.dim; });
    const bool fresh = it == path.end();
    if (fresh) {
        path.push_back({n.dim, Interval{}});
        it = path.end() - 1;
    }
    const std::size_t slot = static_cast<std::size_t>(it - path.begin());
    const Interval saved = path[slot].interval;

    path[slot].interval.hi = n.cut;
    collect_boxes(tree, n.left, path, out);
    path[slot].interval = saved;
    path[slot].interval.lo = n.cut;
    collect_boxes(tree, n.right, path, out);
    path[slot].interval = saved;
    if (fresh) path.pop_back();
}

}  // namespace

bool Tree::operator==(const Tree& other) const { return same_subtree(*this, 0, other, 0); }

std::vector<LeafBox> leaf_boxes(const Tree& tree) {
    std::vector<LeafBox> out;
    out.reserve(static_cast<std::size_t>(tree.num_leaves()));
    std::vector<AxisBound> path;
    collect_boxes(tree, 0, path, out);
    return out;
}

double Forest::evaluate(std::span<const double> x) const {
    if (static_cast<std::int32_t>(x.size()) != p) {
        throw ValidationError("point dimension " + std::to_string(x.size()) +
                              " does not match forest dimension " + std::to_string(p));
    }
    double s = 0.0;
    for (const auto& t : trees) s += t.evaluate(x);
    return s;
}

Forest concatenate(const Forest& a, const Forest& b, double sign_b) {
    if (a.p != b.p) throw ValidationError("forest dimension mismatch");
    Forest out{a.p, a.trees};
    out.trees.reserve(a.trees.size() + b.trees.size());
    for (Tree t : b.trees) {
        for (std::int32_t leaf : t.leaves()) t.set_mu(leaf, sign_b * t.node(leaf).mu);
        out.trees.push_back(std::move(t));
    }
    return out;
}

void PosteriorEnsemble::validate() const {
    if (p < 0) throw ValidationError("negative input dimension");
    if (static_cast<std::int32_t>(x_scaling.size()) != p) {
        throw ValidationError("x_scaling length does not match p");
    }
    if (!(y_scaling.scale > 0.0)) throw ValidationError("y_scaling scale must be positive");
    for (const auto& d : draws) {
        if (d.forest.p != p) throw ValidationError("draw forest dimension differs from ensemble p");
        if (!(d.sigma2 > 0.0) || !std::isfinite(d.sigma2)) {
            throw ValidationError("sigma2 must be positive and finite");
        }
        for (const auto& t : d.forest.trees) t.validate(p);
    }
}

BoxTable::BoxTable(const Forest& forest) : p_(forest.p), by_dim_(static_cast<std::size_t>(forest.p)) {
    offsets_.push_back(0);
    for (const auto& tree : forest.trees) {
        for (auto& box : leaf_boxes(tree)) {
            const auto k = static_cast<std::uint32_t>(weight_.size());
            const double w = box.mu * box.volume();
            weight_.push_back(w);
            total_weight_ += w;
            for (const auto& b : box.bounds) {
                bounds_.push_back(b);
                by_dim_[static_cast<std::size_t>(b.dim)].push_back(k);
            }
            offsets_.push_back(static_cast<std::uint32_t>(bounds_.size()));
        }
    }
}

namespace {

// Sum over all leaf pairs of w w' (prod of shared ratios - 1): the variance.
double pair_variance(const BoxTable& table) {
    double acc = 0.0;
    for (std::int32_t j = 0; j < table.p(); ++j) {
        // Count each pair once, at its smallest shared dimension.
        for_each_pair_sharing(table, j, [&](double coef, double rj, std::span<const SharedAxis> others) {
            double prod = rj;
            for (const auto& o : others) {
                if (o.dim < j) return;
                prod *= o.ratio;
            }
            acc += coef * (prod - 1.0);
        });
    }
    return acc;
}

}  // namespace

double mean(const Forest& forest) {
    double s = 0.0;
    for (const auto& t : forest.trees) {
        for (const auto& box : leaf_boxes(t)) s += box.mu * box.volume();
    }
    return s;
}

double variance(const Forest& forest) { return std::max(0.0, pair_variance(BoxTable(forest))); }

double second_moment(const Forest& forest) {
    const BoxTable table(forest);
    const double m = table.total_weight();
    return std::max(0.0, pair_variance(table) + m * m);
}

double l2_distance(const Forest& f, const Forest& f0) {
    if (f.p != f0.p) throw ValidationError("forest dimension mismatch");
    return std::sqrt(second_moment(concatenate(f, f0, -1.0)));
}

double sup_norm_bound(const Forest& forest) {
    double s = 0.0;
    for (const auto& t : forest.trees) {
        double m = 0.0;
        for (const auto& n : t.nodes()) {
            if (n.is_leaf()) m = std::max(m, std::abs(n.mu));
        }
        s += m;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Text format
//
//   SHAPFOR-ENSEMBLE <version> <p> <n_draw> <T> X <offset scale>*p Y <offset scale>
//   <sigma2> <tree>*T            (one line per draw)
//
// Trees are written in pre-order: "I <dim> <cut>" for internal nodes,
// "L <mu>" for leaves. Reals use 17 significant digits.

namespace {

std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_tree(std::ostream& out, const Tree& t, std::int32_t i) {
    const TreeNode& n = t.node(i);
    if (n.is_leaf()) {
        out << " L " << fmt_real(n.mu);
        return;
    }
    out << " I " << n.dim << ' ' << fmt_real(n.cut);
    write_tree(out, t, n.left);
    write_tree(out, t, n.right);
}

[[noreturn]] void bad(std::size_t line, const std::string& what) {
    throw ValidationError("ensemble line " + std::to_string(line) + ": " + what);
}

double parse_real(std::istringstream& in, std::size_t line, const char* what) {
    std::string tok;
    if (!(in >> tok)) bad(line, std::string("missing ") + what);
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || !std::isfinite(v)) {
        bad(line, std::string("malformed ") + what + " '" + tok + "'");
    }
    return v;
}

long long parse_int(std::istringstream& in, std::size_t line, const char* what) {
    std::string tok;
    if (!(in >> tok)) bad(line, std::string("missing ") + what);
    char* end = nullptr;
    const long long v = std::strtoll(tok.c_str(), &end, 10);
    if (end != tok.c_str() + tok.size()) bad(line, std::string("malformed ") + what + " '" + tok + "'");
    return v;
}

void expect(std::istringstream& in, std::size_t line, const char* token) {
    std::string tok;
    if (!(in >> tok) || tok != token) bad(line, std::string("expected '") + token + "'");
}

std::int32_t read_subtree(std::istringstream& in, std::size_t line, std::vector<TreeNode>& nodes,
                          std::int32_t parent, int depth) {
    if (depth > 512) bad(line, "tree too deep");
    std::string tag;
    if (!(in >> tag)) bad(line, "truncated tree");
    const auto idx = static_cast<std::int32_t>(nodes.size());
    nodes.emplace_back();
    nodes.back().parent = parent;
    if (tag == "L") {
        nodes[static_cast<std::size_t>(idx)].mu = parse_real(in, line, "leaf value");
        return idx;
    }
    if (tag != "I") bad(line, "unknown node tag '" + tag + "'");
    const long long dim = parse_int(in, line, "split dimension");
    if (dim < 0 || dim > std::numeric_limits<std::int32_t>::max()) bad(line, "split dimension out of range");
    const double cut = parse_real(in, line, "cut");
    nodes[static_cast<std::size_t>(idx)].dim = static_cast<std::int32_t>(dim);
    nodes[static_cast<std::size_t>(idx)].cut = cut;
    const std::int32_t l = read_subtree(in, line, nodes, idx, depth + 1);
    const std::int32_t r = read_subtree(in, line, nodes, idx, depth + 1);
    nodes[static_cast<std::size_t>(idx)].left = l;
    nodes[static_cast<std::size_t>(idx)].right = r;
    return idx;
}

}  // namespace

void write_ensemble(std::ostream& out, const PosteriorEnsemble& e) {
    const std::size_t num_trees = e.draws.empty() ? 0 : e.draws.front().forest.trees.size();
    out << "SHAPFOR-ENSEMBLE " << kEnsembleFormatVersion << ' ' << e.p << ' ' << e.draws.size() << ' '
        << num_trees << " X";
    for (const auto& m : e.x_scaling) out << ' ' << fmt_real(m.offset) << ' ' << fmt_real(m.scale);
    out << " Y " << fmt_real(e.y_scaling.offset) << ' ' << fmt_real(e.y_scaling.scale) << '\n';
    for (const auto& d : e.draws) {
        if (d.forest.trees.size() != num_trees) {
            throw ValidationError("all draws must carry the same number of trees");
        }
        out << fmt_real(d.sigma2);
        for (const auto& t : d.forest.trees) write_tree(out, t, 0);
        out << '\n';
    }
}

PosteriorEnsemble read_ensemble(std::istream& in) {
    std::string text;
    std::size_t line_no = 1;
    if (!std::getline(in, text)) throw ValidationError("empty ensemble stream");
    std::istringstream head(text);
    expect(head, line_no, "SHAPFOR-ENSEMBLE");
    const long long version = parse_int(head, line_no, "version");
    if (version != kEnsembleFormatVersion) {
        bad(line_no, "unsupported format version " + std::to_string(version) + " (expected " +
                         std::to_string(kEnsembleFormatVersion) + ")");
    }
    const long long p = parse_int(head, line_no, "p");
    const long long n_draw = parse_int(head, line_no, "n_draw");
    const long long num_trees = parse_int(head, line_no, "T");
    if (p < 0 || n_draw < 0 || num_trees < 0) bad(line_no, "negative header count");
    PosteriorEnsemble e;
    e.p = static_cast<std::int32_t>(p);
    expect(head, line_no, "X");
    for (long long j = 0; j < p; ++j) {
        AffineMap m;
        m.offset = parse_real(head, line_no, "x offset");
        m.scale = parse_real(head, line_no, "x scale");
        e.x_scaling.push_back(m);
    }
    expect(head, line_no, "Y");
    e.y_scaling.offset = parse_real(head, line_no, "y offset");
    e.y_scaling.scale = parse_real(head, line_no, "y scale");
    std::string rest;
    if (head >> rest) bad(line_no, "trailing tokens in header");

    e.draws.reserve(static_cast<std::size_t>(n_draw));
    for (long long i = 0; i < n_draw; ++i) {
        ++line_no;
        if (!std::getline(in, text)) bad(line_no, "expected " + std::to_string(n_draw) + " draws");
        std::istringstream row(text);
        PosteriorDraw d;
        d.sigma2 = parse_real(row, line_no, "sigma2");
        d.forest.p = e.p;
        for (long long t = 0; t < num_trees; ++t) {
            std::vector<TreeNode> nodes;
            read_subtree(row, line_no, nodes, -1, 0);
            try {
                d.forest.trees.push_back(Tree::from_nodes(std::move(nodes), e.p));
            } catch (const ValidationError& err) {
                bad(line_no, err.what());
            }
        }
        if (row >> rest) bad(line_no, "trailing tokens after trees");
        e.draws.push_back(std::move(d));
    }
    while (std::getline(in, text)) {
        ++line_no;
        if (text.find_first_not_of(" \t\r") != std::string::npos) bad(line_no, "unexpected content after draws");
    }
    e.validate();
    return e;
}

std::string serialize(const PosteriorEnsemble& ensemble) {
    std::ostringstream out;
    write_ensemble(out, ensemble);
    return out.str();
}

PosteriorEnsemble deserialize(const std::string& text) {
    std::istringstream in(text);
    return read_ensemble(in);
}

}  // namespace shapfor
