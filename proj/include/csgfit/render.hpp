// render.hpp - sphere-traced rendering of a CSG model.
//
// Rays are marched in the normalized frame. The approximate SDF is only
// trusted for a fixed fraction of a step, and hits are bracketed by the
// occupancy sign (csg_sdf < 0), then refined by interval halving. Depth is
// reported in raw scene units for comparability with input depth.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "csgfit/camera.hpp"
#include "csgfit/csg_core.hpp"
#include "csgfit/parallel.hpp"
#include "csgfit/vec3.hpp"

namespace csgfit {

struct MarchConfig {
    double min_step = 0.001;   // 0.0001 for beauty renders
    double step_factor = 0.8;  // fraction of the SDF trusted per step
    int max_steps = 512;
    int halving_iters = 16;
    double t_max = 6.0;  // normalized units

    void validate() const {
        if (!(min_step > 0.0)) throw std::invalid_argument("MarchConfig: min_step must be > 0");
        if (!(step_factor > 0.0) || !(step_factor < 1.0))
            throw std::invalid_argument("MarchConfig: step_factor must be in (0, 1)");
        if (max_steps < 1 || halving_iters < 0 || !(t_max > 0.0))
            throw std::invalid_argument("MarchConfig: bad step limits");
    }
};

struct RayHit {
    double t = 0.0;  // normalized units along the unit direction
    Vec3 point;      // normalized frame
};

namespace detail {

// The hit test is the occupancy sign (indicator > 0.5), not the sign of the
// approximate SDF: a soft negative near a positive shell shifts the occupancy
// isosurface the losses see, while csg_sdf only feels hard carving. The SDF
// still sizes the steps. Without negatives the two tests coincide.
inline bool occupied(const CsgModel& m, const Vec3& x) {
    return csg_indicator(m, x) > 0.5;
}

}  // namespace detail

// Marches one ray from `origin` along unit `dir` (both normalized frame).
// Returns a refined hit or nothing on a miss.
inline std::optional<RayHit> march_ray(const CsgModel& m, const Vec3& origin, const Vec3& dir,
                                       const MarchConfig& cfg) {
    if (detail::occupied(m, origin)) return RayHit{0.0, origin};  // started inside
    double t = 0.0;
    for (int step = 0; step < cfg.max_steps; ++step) {
        const double sdf = csg_sdf(m, origin + dir * t);
        const double dt = std::max(cfg.step_factor * sdf, cfg.min_step);
        const double t_next = t + dt;
        if (t_next > cfg.t_max) return std::nullopt;
        if (detail::occupied(m, origin + dir * t_next)) {
            double lo = t, hi = t_next;
            for (int i = 0; i < cfg.halving_iters; ++i) {
                const double mid = 0.5 * (lo + hi);
                (detail::occupied(m, origin + dir * mid) ? hi : lo) = mid;
            }
            const double t_hit = 0.5 * (lo + hi);
            return RayHit{t_hit, origin + dir * t_hit};
        }
        t = t_next;
    }
    return std::nullopt;
}

struct RenderBuffers {
    DepthImage depth;                // raw units; misses invalid with +inf value
    std::vector<Vec3> normals;       // unit length at hits
    std::vector<FaceTriple> labels;  // meaningful only where hit
    std::vector<std::uint8_t> hit_mask;
    double miss_depth = 0.0;  // raw-unit far plane implied by t_max

    std::size_t size() const { return hit_mask.size(); }
};

// Central-difference SDF gradient, h = 2 * min_step.
inline Vec3 sdf_normal(const CsgModel& m, const Vec3& p, double h) {
    const Vec3 g{csg_sdf(m, p + Vec3{h, 0, 0}) - csg_sdf(m, p - Vec3{h, 0, 0}),
                 csg_sdf(m, p + Vec3{0, h, 0}) - csg_sdf(m, p - Vec3{0, h, 0}),
                 csg_sdf(m, p + Vec3{0, 0, h}) - csg_sdf(m, p - Vec3{0, 0, h})};
    const double len = g.norm();
    return len > 0.0 ? g / len : Vec3{0, 0, -1};
}

// One march per pixel; scanline-parallel with disjoint writes.
inline RenderBuffers render(const CsgModel& m, const Camera& cam, const MarchConfig& cfg = {}) {
    cam.validate();
    cfg.validate();
    m.validate();
    const std::size_t n = static_cast<std::size_t>(cam.width) * cam.height;
    RenderBuffers out;
    out.depth = DepthImage(cam.width, cam.height);
    out.normals.assign(n, Vec3{});
    out.labels.assign(n, FaceTriple{});
    out.hit_mask.assign(n, 0);
    out.miss_depth = cfg.t_max / m.scene_transform.scale;

    const Vec3 origin = m.scene_transform.apply(Vec3{});  // camera sits at the raw origin
    const double inv_scale = 1.0 / m.scene_transform.scale;
    const double grad_h = 2.0 * cfg.min_step;

    parallel_chunks(static_cast<std::size_t>(cam.height), 4, [&](std::size_t v0, std::size_t v1) {
        for (std::size_t v = v0; v < v1; ++v) {
            for (int u = 0; u < cam.width; ++u) {
                const Vec3 dir = pixel_ray(cam, u, static_cast<double>(v));
                const auto hit = march_ray(m, origin, dir, cfg);
                const std::size_t i = static_cast<std::size_t>(v) * cam.width + u;
                if (!hit) {
                    out.depth.values[i] = std::numeric_limits<double>::infinity();
                    continue;
                }
                out.depth.set(u, static_cast<int>(v), hit->t * inv_scale * dir.z);
                out.hit_mask[i] = 1;
                out.normals[i] = sdf_normal(m, hit->point, grad_h);
                // Occupancy-bracketed hits on softly carved shells can sit
                // beyond the strict sdf tolerance; classify directly.
                out.labels[i] = detail::classify_surface_point(m, hit->point);
            }
        }
    });
    return out;
}

}  // namespace csgfit
