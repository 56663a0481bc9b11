// csg_core.hpp - smoothed convex polytopes, CSG occupancy, approximate SDF,
// and face labeling.
//
// A primitive is the blended intersection of half-spaces: per-face affine
// values a_i = n_i.(x - c) - d_i are combined by a LogSumExp smooth max with
// temperature delta. Phi < 0 inside, > 0 outside. Occupancy is a steep
// sigmoid of -sigma*Phi, and a model combines positives and negatives as
// O = relu(O+ - O-).
#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "csgfit/vec3.hpp"

namespace csgfit {

constexpr int kMaxFaces = 32;
constexpr double kBlendDeltaMin = 1e-4;
constexpr double kBlendDeltaMax = 0.2;
constexpr double kDefaultSigma = 75.0;
// Exponent cutoff: exp(x) for x below this is dead weight in a LogSumExp.
constexpr double kExpCutoff = -45.0;

class EvaluationError : public std::runtime_error {
public:
    explicit EvaluationError(const std::string& what) : std::runtime_error(what) {}
};

// One smoothed convex polytope. In symmetric mode the stored normals are
// mirrored into +-n face pairs (parallelepipeds for f=6); offsets are always
// stored per face. Stored normals are unconstrained 3-vectors; the optimizer
// renormalizes them after every step, so each contributes 2 effective DOF.
struct ConvexPrimitive {
    Vec3 center;
    std::vector<Vec3> normals;    // f stored (free) or f/2 stored (symmetric)
    std::vector<double> offsets;  // f
    double blend_delta = 0.02;
    bool symmetric = true;

    int face_count() const { return static_cast<int>(offsets.size()); }
    int stored_normal_count() const { return static_cast<int>(normals.size()); }

    // Face i maps to stored normal i (sign +1) or, in symmetric mode for the
    // mirrored half, stored normal i - f/2 with sign -1.
    int face_stored_index(int i) const {
        const int ns = stored_normal_count();
        return (symmetric && i >= ns) ? i - ns : i;
    }
    double face_sign(int i) const {
        return (symmetric && i >= stored_normal_count()) ? -1.0 : 1.0;
    }
    Vec3 face_normal(int i) const { return normals[face_stored_index(i)] * face_sign(i); }

    // Effective degrees of freedom: center 3, each stored unit normal 2,
    // each offset 1, blend term 1. Symmetric f=6 gives the 16 of a
    // parallelepiped.
    int dof() const { return 3 + 2 * stored_normal_count() + face_count() + 1; }

    void validate() const {
        if (!(blend_delta > 0.0) || !std::isfinite(blend_delta))
            throw std::invalid_argument("ConvexPrimitive: blend_delta must be > 0");
        const int f = face_count();
        if (f < 4 || f > kMaxFaces)
            throw std::invalid_argument("ConvexPrimitive: face count must be in [4, " +
                                        std::to_string(kMaxFaces) + "]");
        const int expected = symmetric ? f / 2 : f;
        if (symmetric && f % 2 != 0)
            throw std::invalid_argument("ConvexPrimitive: symmetric mode needs an even face count");
        if (stored_normal_count() != expected)
            throw std::invalid_argument("ConvexPrimitive: stored normal count does not match faces");
        if (!center.finite()) throw std::invalid_argument("ConvexPrimitive: non-finite center");
        for (const Vec3& n : normals)
            if (!n.finite()) throw std::invalid_argument("ConvexPrimitive: non-finite normal");
        for (double d : offsets)
            if (!std::isfinite(d)) throw std::invalid_argument("ConvexPrimitive: non-finite offset");
    }
};

// Flat union-minus-union CSG model plus the raw-to-normalized scene transform.
struct CsgModel {
    std::vector<ConvexPrimitive> positives;
    std::vector<ConvexPrimitive> negatives;
    double sharpness_sigma = kDefaultSigma;
    Transform scene_transform;

    int k_total() const { return static_cast<int>(positives.size() + negatives.size()); }
    int k_pos() const { return static_cast<int>(positives.size()); }
    int k_neg() const { return static_cast<int>(negatives.size()); }

    void validate() const {
        if (positives.empty()) throw std::invalid_argument("CsgModel: needs at least one positive");
        if (!(sharpness_sigma > 0.0) || !std::isfinite(sharpness_sigma))
            throw std::invalid_argument("CsgModel: sharpness_sigma must be > 0");
        if (!(scene_transform.scale > 0.0))
            throw std::invalid_argument("CsgModel: scene_transform scale must be > 0");
        for (const auto& p : positives) p.validate();
        for (const auto& p : negatives) p.validate();
    }
};

// Identifies the boundary patch a surface point belongs to: which face of
// which positive, and which negative (or none) carved it.
struct FaceTriple {
    static constexpr int kNone = -1;
    int face_index = 0;
    int positive_index = 0;
    int negative_index = kNone;

    auto operator<=>(const FaceTriple&) const = default;
};

struct FaceTripleHash {
    std::size_t operator()(const FaceTriple& t) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mixin = [&h](std::uint64_t v) {
            h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
            h *= 0x100000001b3ULL;
        };
        mixin(static_cast<std::uint64_t>(t.face_index) + 1);
        mixin(static_cast<std::uint64_t>(t.positive_index) + 1);
        mixin(static_cast<std::uint64_t>(t.negative_index + 2));
        return static_cast<std::size_t>(h);
    }
};

// Maximum number of distinct face-label triples a render of an
// (f, k_total, k_neg) model can produce: f * (k_total - k_neg) * (1 + k_neg).
inline long long max_label_count(int f, int k_total, int k_neg) {
    if (f < 4) throw std::invalid_argument("max_label_count: f must be >= 4");
    if (k_neg < 0 || k_neg >= k_total)
        throw std::invalid_argument("max_label_count: need 0 <= k_neg < k_total");
    return static_cast<long long>(f) * (k_total - k_neg) * (1 + k_neg);
}

// Smoothed max of the per-face affine values:
//   Phi(x) = delta * log sum_i exp((n_i.(x-c) - d_i) / delta).
// Negative strictly inside, positive strictly outside; converges to the hard
// max as delta -> 0.
inline double convex_phi(const ConvexPrimitive& p, const Vec3& x) {
    const int f = p.face_count();
    double a[kMaxFaces];
    const Vec3 rel = x - p.center;
    double amax = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < f; ++i) {
        a[i] = dot(p.face_normal(i), rel) - p.offsets[i];
        if (a[i] > amax) amax = a[i];
    }
    if (!std::isfinite(amax) || !(p.blend_delta > 0.0))
        throw EvaluationError("convex_phi: non-finite parameters or point");
    const double inv_delta = 1.0 / p.blend_delta;
    double sum = 0.0;
    for (int i = 0; i < f; ++i) {
        const double e = (a[i] - amax) * inv_delta;
        if (e > kExpCutoff) sum += std::exp(e);
    }
    return amax + p.blend_delta * std::log(sum);
}

// Occupancy of one primitive: sigmoid(-sigma * Phi) in [0, 1].
inline double indicator_from_phi(double phi, double sigma) {
    const double t = -sigma * phi;
    // Branch on sign for numerical stability of the sigmoid.
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

inline double convex_indicator(const ConvexPrimitive& p, const Vec3& x, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("convex_indicator: sigma must be > 0");
    return indicator_from_phi(convex_phi(p, x), sigma);
}

enum class UnionMode {
    kHardMax,  // max over per-primitive indicators (default)
    kSmooth,   // complement product 1 - prod(1 - C_k), for gradient experiments
};

// Indicator of a set of primitives. An empty set is legal for the negative
// side and contributes 0.
inline double union_indicator(const std::vector<ConvexPrimitive>& prims, const Vec3& x,
                              double sigma, UnionMode mode = UnionMode::kHardMax) {
    if (mode == UnionMode::kSmooth) {
        double miss = 1.0;
        for (const auto& p : prims) miss *= 1.0 - convex_indicator(p, x, sigma);
        return prims.empty() ? 0.0 : 1.0 - miss;
    }
    double best = 0.0;
    for (const auto& p : prims) best = std::max(best, convex_indicator(p, x, sigma));
    return best;
}

// CSG occupancy: relu(O+ - O-).
inline double csg_indicator(const CsgModel& m, const Vec3& x,
                            UnionMode mode = UnionMode::kHardMax) {
    const double pos = union_indicator(m.positives, x, m.sharpness_sigma, mode);
    const double neg = union_indicator(m.negatives, x, m.sharpness_sigma, mode);
    return std::max(0.0, pos - neg);
}

// Approximate signed distance of the CSG solid:
//   max( min_k Phi+_k, max_j -Phi-_j ),
// the second term omitted without negatives. Negative inside the solid. This
// is not a Euclidean distance; the raymarcher only trusts a fixed fraction of
// it per step.
inline double csg_sdf(const CsgModel& m, const Vec3& x) {
    double pos = std::numeric_limits<double>::infinity();
    for (const auto& p : m.positives) pos = std::min(pos, convex_phi(p, x));
    if (m.negatives.empty()) return pos;
    double neg = -std::numeric_limits<double>::infinity();
    for (const auto& p : m.negatives) neg = std::max(neg, -convex_phi(p, x));
    return std::max(pos, neg);
}

constexpr double kSurfaceTolerance = 1e-3;

namespace detail {
FaceTriple classify_surface_point(const CsgModel& m, const Vec3& x_hit);
}

// Classifies a surface point into its (face, positive, negative-or-none)
// triple. The boundary belongs to a negative iff the carving term of csg_sdf
// dominates at the hit; ties resolve to the positive side.
inline FaceTriple face_label_at(const CsgModel& m, const Vec3& x_hit,
                                double tolerance = kSurfaceTolerance) {
    if (std::abs(csg_sdf(m, x_hit)) > tolerance)
        throw std::invalid_argument("face_label_at: point is not on the surface");
    return detail::classify_surface_point(m, x_hit);
}

namespace detail {
inline FaceTriple classify_surface_point(const CsgModel& m, const Vec3& x_hit) {
    double pos_min = std::numeric_limits<double>::infinity();
    int pos_arg = 0;
    for (int k = 0; k < m.k_pos(); ++k) {
        const double phi = convex_phi(m.positives[k], x_hit);
        if (phi < pos_min) { pos_min = phi; pos_arg = k; }
    }
    double neg_best = -std::numeric_limits<double>::infinity();
    int neg_arg = FaceTriple::kNone;
    for (int j = 0; j < m.k_neg(); ++j) {
        const double v = -convex_phi(m.negatives[j], x_hit);
        if (v > neg_best) { neg_best = v; neg_arg = j; }
    }

    const bool on_negative = neg_arg != FaceTriple::kNone && neg_best - pos_min > 1e-9;
    const ConvexPrimitive& owner = on_negative ? m.negatives[neg_arg] : m.positives[pos_arg];

    const Vec3 rel = x_hit - owner.center;
    int face = 0;
    double best_a = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < owner.face_count(); ++i) {
        const double a = dot(owner.face_normal(i), rel) - owner.offsets[i];
        if (a > best_a) { best_a = a; face = i; }
    }
    return {face, pos_arg, on_negative ? neg_arg : FaceTriple::kNone};
}
}  // namespace detail

}  // namespace csgfit
