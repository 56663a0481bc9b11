// scenegen.hpp - synthetic scenes with exact ground truth.
//
// Scenes are flat union-minus-union trees of hard (unsmoothed) convex
// polytopes posed directly in the camera frame, so occupancy, first ray
// intersections, face normals, and segmentation labels are all exactly
// decidable. They feed the test suite and the negative-primitive experiments.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "csgfit/camera.hpp"
#include "csgfit/csg_core.hpp"
#include "csgfit/parallel.hpp"
#include "csgfit/vec3.hpp"

namespace csgfit {

// Hard convex polytope: inside iff every face value n_i.(x-c) - d_i <= 0.
struct HardPolytope {
    Vec3 center;
    std::vector<Vec3> normals;  // unit outward normals, one per face
    std::vector<double> offsets;
    Aabb bounds;  // filled by the builders (all builtin shapes are boxes)

    int face_count() const { return static_cast<int>(normals.size()); }

    // Hard margin: max over faces, <= 0 inside. The hard analog of Phi.
    double margin(const Vec3& x) const {
        const Vec3 rel = x - center;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < normals.size(); ++i)
            m = std::max(m, dot(normals[i], rel) - offsets[i]);
        return m;
    }
    bool contains(const Vec3& x) const { return margin(x) <= 0.0; }
};

struct AnalyticScene {
    std::string name;
    std::vector<HardPolytope> positives;
    std::vector<HardPolytope> negatives;
    Camera camera;  // preset pose baked into geometry; intrinsics rescale with resolution

    Aabb bounds() const {
        Aabb b;
        for (const auto& p : positives) b.extend(p.bounds);
        return b;
    }
};

inline HardPolytope make_box(const Vec3& center, const Vec3& half_extents, const Mat3& rot) {
    HardPolytope p;
    p.center = center;
    const Vec3 axes[3] = {rot * Vec3{1, 0, 0}, rot * Vec3{0, 1, 0}, rot * Vec3{0, 0, 1}};
    const double half[3] = {half_extents.x, half_extents.y, half_extents.z};
    for (int i = 0; i < 3; ++i) {
        p.normals.push_back(axes[i]);
        p.offsets.push_back(half[i]);
    }
    for (int i = 0; i < 3; ++i) {
        p.normals.push_back(-axes[i]);
        p.offsets.push_back(half[i]);
    }
    for (int sx : {-1, 1})
        for (int sy : {-1, 1})
            for (int sz : {-1, 1})
                p.bounds.extend(center + axes[0] * (sx * half[0]) + axes[1] * (sy * half[1]) +
                                axes[2] * (sz * half[2]));
    return p;
}

// 1 inside the solid (inside any positive, inside no negative), else 0.
inline int analytic_occupancy(const AnalyticScene& s, const Vec3& x) {
    bool in_pos = false;
    for (const auto& p : s.positives)
        if (p.contains(x)) { in_pos = true; break; }
    if (!in_pos) return 0;
    for (const auto& n : s.negatives)
        if (n.contains(x)) return 0;
    return 1;
}

// Hard counterpart of csg_sdf: max(min positives, max -negatives). Used for
// surface-band exclusion in tests; like Phi it underestimates true distance
// near edges but has the exact zero set.
inline double analytic_margin(const AnalyticScene& s, const Vec3& x) {
    double pos = std::numeric_limits<double>::infinity();
    for (const auto& p : s.positives) pos = std::min(pos, p.margin(x));
    if (s.negatives.empty()) return pos;
    double neg = -std::numeric_limits<double>::infinity();
    for (const auto& n : s.negatives) neg = std::max(neg, -n.margin(x));
    return std::max(pos, neg);
}

inline const std::vector<std::string>& builtin_scene_names() {
    static const std::vector<std::string> names = {
        "box", "box_with_hole", "offset_cube_difference", "l_shape", "two_boxes", "shelf"};
    return names;
}

// Scene presets. Compositions fill the camera frame (close-up views, the
// outer outline mostly beyond the frustum) so the depth-to-occupancy labels
// stay clean; concave interiors carry the geometric interest.
inline AnalyticScene builtin_scene(const std::string& name) {
    AnalyticScene s;
    s.name = name;
    s.camera = Camera::default_for(64, 64);
    const Mat3 id;
    auto view34 = [](double yaw, double pitch) {
        return Mat3::axis_angle({0, 1, 0}, yaw) * Mat3::axis_angle({1, 0, 0}, pitch);
    };

    if (name == "box") {
        // Frontal slab spanning the whole view: constant-depth plateau.
        s.positives.push_back(make_box({0, 0, 2.8}, {2.4, 2.4, 0.3}, id));
    } else if (name == "box_with_hole") {
        // Slab with a square prism punched through, tilted so the inner hole
        // walls are visible.
        const Mat3 r = view34(0.45, 0.28);
        s.positives.push_back(make_box({0, 0, 2.9}, {3.8, 3.8, 0.5}, r));
        s.negatives.push_back(make_box({0, 0, 2.9}, {0.65, 0.65, 1.4}, r));
    } else if (name == "offset_cube_difference") {
        // Cube minus the same cube translated by half its side along every
        // axis. The view looks straight into the carved octant, a concave
        // corner room bounded by the three cut walls.
        const double h = 2.6;
        const Mat3 r = view34(-0.38, 0.42);
        const Vec3 at{0, 0, 3.6};
        s.positives.push_back(make_box(at, {h, h, h}, r));
        s.negatives.push_back(make_box(at + r * Vec3{h, -h, -h}, {h, h, h}, r));
    } else if (name == "l_shape") {
        // Concave corner: back wall plus a floor slab running toward the
        // camera.
        const Mat3 r = view34(0.18, -0.10);
        s.positives.push_back(make_box(r * Vec3{0, -0.9, 3.6}, {4.6, 2.9, 0.3}, r));
        s.positives.push_back(make_box(r * Vec3{0, 1.5, 2.55}, {4.6, 0.4, 1.35}, r));
    } else if (name == "two_boxes") {
        // Step: two abutting slabs at different depths.
        const Mat3 r = view34(0.22, -0.18);
        s.positives.push_back(make_box(r * Vec3{0, -1.6, 3.3}, {4.6, 3.0, 0.3}, r));
        s.positives.push_back(make_box(r * Vec3{0, 1.55, 2.6}, {4.6, 1.5, 0.45}, r));
    } else if (name == "shelf") {
        // Shelf unit: a deep box with two compartments carved toward the
        // camera, keeping the back wall.
        const Mat3 r = view34(0.30, 0.18);
        const Vec3 at{0, 0, 3.0};
        s.positives.push_back(make_box(at, {3.6, 3.6, 0.55}, r));
        s.negatives.push_back(make_box(at + r * Vec3{0.0, -1.15, -0.35}, {2.4, 0.8, 0.5}, r));
        s.negatives.push_back(make_box(at + r * Vec3{0.0, 1.15, -0.35}, {2.4, 0.8, 0.5}, r));
    } else {
        std::string valid;
        for (const auto& n : builtin_scene_names()) valid += " " + n;
        throw std::invalid_argument("builtin_scene: unknown scene '" + name +
                                    "'; valid names:" + valid);
    }
    return s;
}

// Exact ground truth rasters for one view of an analytic scene.
struct AnalyticRender {
    DepthImage depth;                 // z-depth, misses invalid
    std::vector<Vec3> normals;        // outward surface normal at hits
    std::vector<FaceTriple> labels;   // triple per hit pixel
    std::vector<int> seg_ids;         // compact region id per hit pixel, -1 at miss
    std::vector<std::uint8_t> hit;
};

namespace detail {

// Ray / Aabb intersection (slab method). Returns false on miss.
inline bool ray_aabb(const Vec3& origin, const Vec3& dir, const Aabb& box, double& t0,
                     double& t1) {
    t0 = 0.0;
    t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double o = origin[a], d = dir[a];
        if (std::abs(d) < 1e-15) {
            if (o < box.min[a] || o > box.max[a]) return false;
            continue;
        }
        double lo = (box.min[a] - o) / d, hi = (box.max[a] - o) / d;
        if (lo > hi) std::swap(lo, hi);
        t0 = std::max(t0, lo);
        t1 = std::min(t1, hi);
        if (t0 > t1) return false;
    }
    return true;
}

// Owner of an analytic surface point: the positive face the ray entered, or
// the negative wall it exited. Chooses the face with margin closest to zero.
inline void classify_hit(const AnalyticScene& s, const Vec3& x, FaceTriple& triple,
                         Vec3& normal) {
    int pos_arg = 0;
    double pos_min = std::numeric_limits<double>::infinity();
    for (int k = 0; k < static_cast<int>(s.positives.size()); ++k) {
        const double m = s.positives[k].margin(x);
        if (m < pos_min) { pos_min = m; pos_arg = k; }
    }
    int neg_arg = FaceTriple::kNone;
    double neg_best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < static_cast<int>(s.negatives.size()); ++j) {
        const double v = -s.negatives[j].margin(x);
        if (v > neg_best) { neg_best = v; neg_arg = j; }
    }
    const bool on_negative = neg_arg != FaceTriple::kNone && neg_best > pos_min;
    const HardPolytope& owner = on_negative ? s.negatives[neg_arg] : s.positives[pos_arg];

    int face = 0;
    double best = -std::numeric_limits<double>::infinity();
    const Vec3 rel = x - owner.center;
    for (int i = 0; i < owner.face_count(); ++i) {
        const double a = dot(owner.normals[i], rel) - owner.offsets[i];
        if (a > best) { best = a; face = i; }
    }
    triple = {face, pos_arg, on_negative ? neg_arg : FaceTriple::kNone};
    // A carved wall's outward surface normal points into the negative volume.
    normal = on_negative ? -owner.normals[face] : owner.normals[face];
}

}  // namespace detail

constexpr double kAnalyticStep = 1e-4;

// Exact first intersection per pixel: fixed fine stepping at 1e-4 to bracket
// the occupancy flip, then bisection. Stepping is confined to the ray's span
// of the scene's bounding box, outside which occupancy is identically zero.
inline AnalyticRender analytic_render(const AnalyticScene& s, const Camera& cam) {
    cam.validate();
    const std::size_t n = static_cast<std::size_t>(cam.width) * cam.height;
    AnalyticRender out;
    out.depth = DepthImage(cam.width, cam.height);
    out.normals.assign(n, Vec3{});
    out.labels.assign(n, FaceTriple{});
    out.seg_ids.assign(n, -1);
    out.hit.assign(n, 0);

    Aabb box = s.bounds();
    // Pad so the stepping range starts strictly outside every polytope (the
    // scene bbox can coincide with a box face on frontal presets).
    box.min -= Vec3{1e-6, 1e-6, 1e-6};
    box.max += Vec3{1e-6, 1e-6, 1e-6};
    parallel_chunks(static_cast<std::size_t>(cam.height), 8, [&](std::size_t v0, std::size_t v1) {
        for (std::size_t v = v0; v < v1; ++v) {
            for (int u = 0; u < cam.width; ++u) {
                const Vec3 dir = pixel_ray(cam, u, static_cast<double>(v));
                double t0, t1;
                if (!detail::ray_aabb(Vec3{}, dir, box, t0, t1)) continue;
                double prev = t0;
                if (analytic_occupancy(s, dir * prev) != 0) continue;  // grazing the bbox face
                double hit_lo = -1.0, hit_hi = -1.0;
                for (double t = t0 + kAnalyticStep; t <= t1 + kAnalyticStep; t += kAnalyticStep) {
                    if (analytic_occupancy(s, dir * t) != 0) {
                        hit_lo = prev;
                        hit_hi = t;
                        break;
                    }
                    prev = t;
                }
                if (hit_lo < 0.0) continue;
                for (int it = 0; it < 52; ++it) {
                    const double tm = 0.5 * (hit_lo + hit_hi);
                    (analytic_occupancy(s, dir * tm) != 0 ? hit_hi : hit_lo) = tm;
                }
                const double t_hit = 0.5 * (hit_lo + hit_hi);
                const Vec3 x = dir * t_hit;
                const std::size_t i = static_cast<std::size_t>(v) * cam.width + u;
                out.depth.set(u, static_cast<int>(v), t_hit * dir.z);
                out.hit[i] = 1;
                detail::classify_hit(s, x, out.labels[i], out.normals[i]);
            }
        }
    });

    // Compact segmentation ids, assigned in scanline order for determinism.
    std::vector<std::pair<FaceTriple, int>> seen;
    for (std::size_t i = 0; i < n; ++i) {
        if (!out.hit[i]) continue;
        int id = -1;
        for (const auto& [t, tid] : seen)
            if (t == out.labels[i]) { id = tid; break; }
        if (id < 0) {
            id = static_cast<int>(seen.size());
            seen.emplace_back(out.labels[i], id);
        }
        out.seg_ids[i] = id;
    }
    return out;
}

// Wraps an analytic render into the sampling module's input format: synthetic
// GT depth behaves exactly like sensor depth downstream.
inline std::pair<DepthImage, Camera> scene_to_depth_input(const AnalyticScene& s,
                                                          const Camera& cam) {
    AnalyticRender r = analytic_render(s, cam);
    return {std::move(r.depth), cam};
}

// Hand-constructed smoothed model matching the scene: the delta -> 0 limit of
// the model class reproduces the hard geometry. Parameters are mapped through
// `transform` (offsets and delta are distances and scale with it).
inline CsgModel to_csg_model(const AnalyticScene& s, double delta, double sigma,
                             const Transform& transform = {}) {
    CsgModel m;
    m.sharpness_sigma = sigma;
    m.scene_transform = transform;
    auto convert = [&](const HardPolytope& hp) {
        ConvexPrimitive p;
        p.symmetric = false;
        p.center = transform.apply(hp.center);
        p.normals = hp.normals;
        for (double d : hp.offsets) p.offsets.push_back(d * transform.scale);
        p.blend_delta = delta;
        return p;
    };
    for (const auto& hp : s.positives) m.positives.push_back(convert(hp));
    for (const auto& hp : s.negatives) m.negatives.push_back(convert(hp));
    m.validate();
    return m;
}

}  // namespace csgfit
