#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "shapfor/forest.hpp"

namespace shapfor {

/// Flattened leaf boxes of a whole forest, indexed by split dimension.
///
/// Every moment of a piecewise-constant forest under the uniform measure is a
/// sum over leaf pairs (k, k') of w_k w_k' times a product of per-axis ratios
///     r_i(k, k') = |I_ki ∩ I_k'i| / (|I_ki| |I_k'i|),
/// where w_k = mu_k vol(B_k). The ratio is 1 unless both leaves store a bound
/// on axis i, so only pairs sharing a split dimension need visiting.
class BoxTable {
public:
    explicit BoxTable(const Forest& forest);

    std::int32_t p() const { return p_; }
    std::size_t num_leaves() const { return weight_.size(); }
    double weight(std::size_t k) const { return weight_[k]; }
    /// Sum of weights, i.e. the forest mean.
    double total_weight() const { return total_weight_; }
    std::span<const AxisBound> bounds(std::size_t k) const {
        return {bounds_.data() + offsets_[k], bounds_.data() + offsets_[k + 1]};
    }
    /// Leaves that store a bound on `dim`.
    std::span<const std::uint32_t> leaves_on(std::int32_t dim) const {
        return by_dim_[static_cast<std::size_t>(dim)];
    }

private:
    std::int32_t p_;
    std::vector<double> weight_;
    std::vector<std::uint32_t> offsets_;
    std::vector<AxisBound> bounds_;
    std::vector<std::vector<std::uint32_t>> by_dim_;
    double total_weight_ = 0.0;
};

/// Axis shared by two leaves other than the pivot axis, with its ratio.
struct SharedAxis {
    std::int32_t dim;
    double ratio;
};

/// Calls visit(coef, ratio_j, others) once for every unordered pair of leaves
/// that both store a bound on `dim`, with coef = w_k w_k' times the pair
/// multiplicity (2 off-diagonal, 1 on the diagonal).
template <class Visit>
void for_each_pair_sharing(const BoxTable& table, std::int32_t dim, Visit&& visit) {
    const auto list = table.leaves_on(dim);
    std::vector<SharedAxis> others;
    others.reserve(8);
    for (std::size_t ia = 0; ia < list.size(); ++ia) {
        const std::uint32_t a = list[ia];
        const double wa = table.weight(a);
        if (wa == 0.0) continue;
        const auto ba = table.bounds(a);
        for (std::size_t ib = ia; ib < list.size(); ++ib) {
            const std::uint32_t b = list[ib];
            const double wb = table.weight(b);
            if (wb == 0.0) continue;
            const auto bb = table.bounds(b);
            others.clear();
            double ratio_j = 1.0;
            std::size_t u = 0, v = 0;
            while (u < ba.size() && v < bb.size()) {
                if (ba[u].dim < bb[v].dim) {
                    ++u;
                } else if (bb[v].dim < ba[u].dim) {
                    ++v;
                } else {
                    const Interval& ia_ = ba[u].interval;
                    const Interval& ib_ = bb[v].interval;
                    const double r = overlap(ia_, ib_) / (ia_.length() * ib_.length());
                    if (ba[u].dim == dim) {
                        ratio_j = r;
                    } else {
                        others.push_back({ba[u].dim, r});
                    }
                    ++u;
                    ++v;
                }
            }
            const double mult = (a == b) ? 1.0 : 2.0;
            visit(mult * wa * wb, ratio_j, std::span<const SharedAxis>(others));
        }
    }
}

}  // namespace shapfor
