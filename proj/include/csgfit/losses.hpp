// losses.hpp - training objective over a sample batch.
//
// The driving term is the occupancy sample loss; four auxiliary regularizers
// keep the parameterization unique, discourage positive overlap, and pull
// primitives toward the observed surface. All terms are plain means so the
// magnitudes are batch-size independent.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "csgfit/csg_core.hpp"
#include "csgfit/parallel.hpp"
#include "csgfit/sampling.hpp"

namespace csgfit {

constexpr std::size_t kReduceBlock = 2048;  // fixed block size for bit-stable sums
constexpr int kDefaultGuidanceNeighbors = 50;

struct LossWeights {
    double w_sample = 1.0;
    double w_overlap = 0.1;
    double w_unique = 0.1;
    double w_guidance = 0.01;
    double w_localization = 0.01;

    void validate() const {
        for (double w : {w_sample, w_overlap, w_unique, w_guidance, w_localization})
            if (!(w >= 0.0) || !std::isfinite(w))
                throw std::invalid_argument("LossWeights: weights must be finite and >= 0");
        if (!(w_sample > 0.0)) throw std::invalid_argument("LossWeights: w_sample must be > 0");
    }
};

struct LossBreakdown {
    double sample = 0.0;
    double overlap = 0.0;
    double unique = 0.0;
    double guidance = 0.0;
    double localization = 0.0;
    double total = 0.0;

    double weighted_sum(const LossWeights& w) const {
        return w.w_sample * sample + w.w_overlap * overlap + w.w_unique * unique +
               w.w_guidance * guidance + w.w_localization * localization;
    }
};

namespace detail {

// Fixed-block pairwise reduction: block boundaries and the combine tree do not
// depend on the worker count, so sums are bit-stable across thread counts.
template <typename Acc, typename MakeFn, typename ItemFn>
Acc blocked_reduce(std::size_t n, MakeFn make, ItemFn item) {
    const std::size_t nb = (n + kReduceBlock - 1) / kReduceBlock;
    std::vector<Acc> accs;
    accs.reserve(nb);
    for (std::size_t b = 0; b < nb; ++b) accs.push_back(make());
    parallel_blocks(nb, [&](std::size_t b) {
        const std::size_t begin = b * kReduceBlock;
        const std::size_t end = std::min(n, begin + kReduceBlock);
        for (std::size_t i = begin; i < end; ++i) item(accs[b], i);
    });
    for (std::size_t stride = 1; stride < nb; stride *= 2)
        for (std::size_t i = 0; i + stride < nb; i += 2 * stride) accs[i] += accs[i + stride];
    return std::move(accs[0]);
}

struct ScalarPair {
    double a = 0.0, b = 0.0;
    ScalarPair& operator+=(const ScalarPair& o) { a += o.a; b += o.b; return *this; }
};

inline std::vector<std::uint32_t> surface_in_indices(const SampleSet& s) {
    std::vector<std::uint32_t> idx;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s.kinds[i] == SampleKind::kSurfaceIn) idx.push_back(static_cast<std::uint32_t>(i));
    return idx;
}

// Up-to-m nearest candidates to c, ordered by (squared distance, index) for
// determinism under ties.
inline void nearest_candidates(const SampleSet& s, const std::vector<std::uint32_t>& cand,
                               const Vec3& c, std::size_t m,
                               std::vector<std::pair<double, std::uint32_t>>& scratch) {
    scratch.clear();
    scratch.reserve(cand.size());
    for (std::uint32_t i : cand) scratch.emplace_back((s.points[i] - c).squared_norm(), i);
    const std::size_t k = std::min(m, scratch.size());
    std::partial_sort(scratch.begin(), scratch.begin() + k, scratch.end());
    scratch.resize(k);
}

}  // namespace detail

// Mean squared occupancy residual: mean over samples of (O(x) - label)^2.
inline double sample_loss(const CsgModel& m, const SampleSet& s,
                          UnionMode mode = UnionMode::kHardMax) {
    if (s.empty()) throw std::invalid_argument("sample_loss: empty batch");
    auto acc = detail::blocked_reduce<detail::ScalarPair>(
        s.size(), [] { return detail::ScalarPair{}; },
        [&](detail::ScalarPair& a, std::size_t i) {
            const double r = csg_indicator(m, s.points[i], mode) - s.labels[i];
            a.a += r * r;
        });
    return acc.a / static_cast<double>(s.size());
}

// Penalizes summed positive occupancy above one: mean relu(sum_k C+_k - 1)^2.
// Negative-negative overlap is harmless under max-union semantics and is not
// penalized.
inline double overlap_loss(const CsgModel& m, const SampleSet& s) {
    if (m.positives.empty()) throw std::invalid_argument("overlap_loss: needs positives");
    if (s.empty()) return 0.0;
    auto acc = detail::blocked_reduce<detail::ScalarPair>(
        s.size(), [] { return detail::ScalarPair{}; },
        [&](detail::ScalarPair& a, std::size_t i) {
            double sum = 0.0;
            for (const auto& p : m.positives)
                sum += convex_indicator(p, s.points[i], m.sharpness_sigma);
            const double e = std::max(0.0, sum - 1.0);
            a.a += e * e;
        });
    return acc.a / static_cast<double>(s.size());
}

// Forces positive offsets (center inside its polytope) and unit stored
// normals: mean relu(-d_i)^2 over all faces plus mean (|n_j| - 1)^2 over all
// stored normals.
inline double unique_parametrization_loss(const CsgModel& m) {
    double off_sum = 0.0, norm_sum = 0.0;
    std::size_t off_n = 0, norm_n = 0;
    auto visit = [&](const ConvexPrimitive& p) {
        for (double d : p.offsets) {
            const double neg = std::max(0.0, -d);
            off_sum += neg * neg;
            ++off_n;
        }
        for (const Vec3& n : p.normals) {
            const double r = n.norm() - 1.0;
            norm_sum += r * r;
            ++norm_n;
        }
    };
    for (const auto& p : m.positives) visit(p);
    for (const auto& p : m.negatives) visit(p);
    double loss = 0.0;
    if (off_n > 0) loss += off_sum / static_cast<double>(off_n);
    if (norm_n > 0) loss += norm_sum / static_cast<double>(norm_n);
    return loss;
}

// Pulls every primitive (positive and negative) toward the observed surface:
// mean over primitives of mean squared Phi over that primitive's M nearest
// surface-inside samples. A batch without surface samples contributes 0.
inline double guidance_loss(const CsgModel& m, const SampleSet& s,
                            int neighbors = kDefaultGuidanceNeighbors) {
    neighbors = std::max(1, neighbors);
    const auto cand = detail::surface_in_indices(s);
    if (cand.empty()) return 0.0;
    std::vector<std::pair<double, std::uint32_t>> scratch;
    double sum = 0.0;
    int k_total = 0;
    auto visit = [&](const ConvexPrimitive& p) {
        detail::nearest_candidates(s, cand, p.center, static_cast<std::size_t>(neighbors),
                                   scratch);
        double acc = 0.0;
        for (const auto& [d2, i] : scratch) {
            const double phi = convex_phi(p, s.points[i]);
            acc += phi * phi;
        }
        sum += acc / static_cast<double>(scratch.size());
        ++k_total;
    };
    for (const auto& p : m.positives) visit(p);
    for (const auto& p : m.negatives) visit(p);
    return k_total > 0 ? sum / k_total : 0.0;
}

// Mean over primitives of squared distance from the primitive center to its
// nearest surface-inside sample.
inline double localization_loss(const CsgModel& m, const SampleSet& s) {
    if (s.empty()) throw std::invalid_argument("localization_loss: empty batch");
    const auto cand = detail::surface_in_indices(s);
    if (cand.empty()) return 0.0;
    double sum = 0.0;
    int k_total = 0;
    auto visit = [&](const ConvexPrimitive& p) {
        double best = std::numeric_limits<double>::infinity();
        for (std::uint32_t i : cand)
            best = std::min(best, (s.points[i] - p.center).squared_norm());
        sum += best;
        ++k_total;
    };
    for (const auto& p : m.positives) visit(p);
    for (const auto& p : m.negatives) visit(p);
    return k_total > 0 ? sum / k_total : 0.0;
}

inline LossBreakdown total_loss(const CsgModel& m, const SampleSet& s, const LossWeights& w,
                                UnionMode mode = UnionMode::kHardMax,
                                int guidance_neighbors = kDefaultGuidanceNeighbors) {
    w.validate();
    LossBreakdown b;
    b.sample = sample_loss(m, s, mode);
    b.overlap = overlap_loss(m, s);
    b.unique = unique_parametrization_loss(m);
    b.guidance = guidance_loss(m, s, guidance_neighbors);
    b.localization = localization_loss(m, s);
    b.total = b.weighted_sum(w);
    return b;
}

}  // namespace csgfit
