// sampling.hpp - depth images to labeled 3D sample reservoirs.
//
// A depth image is lifted to a point cloud, the cloud is renormalized to the
// unit cube, and the losses' data is built from it: paired inside/outside
// surface samples straddling the visible surface, and a free-space reservoir
// along the rays between camera and surface. Volume behind the inside band is
// unobserved and never sampled.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <unordered_set>
#include <stdexcept>
#include <vector>

#include "csgfit/camera.hpp"
#include "csgfit/rng.hpp"
#include "csgfit/vec3.hpp"

namespace csgfit {

enum class SampleKind : std::uint8_t { kSurfaceIn = 0, kSurfaceOut = 1, kFreespace = 2 };

constexpr double kDefaultSurfaceEpsilon = 0.02;  // normalized units

// Labeled query points in the normalized frame. label 1 = inside the solid.
struct SampleSet {
    std::vector<Vec3> points;
    std::vector<std::uint8_t> labels;
    std::vector<SampleKind> kinds;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    void push(const Vec3& p, std::uint8_t label, SampleKind kind) {
        points.push_back(p);
        labels.push_back(label);
        kinds.push_back(kind);
    }
    void append(const SampleSet& o) {
        points.insert(points.end(), o.points.begin(), o.points.end());
        labels.insert(labels.end(), o.labels.begin(), o.labels.end());
        kinds.insert(kinds.end(), o.kinds.begin(), o.kinds.end());
    }
};

// Lifts every valid pixel through the pinhole model. Raw units.
inline std::vector<Vec3> unproject(const DepthImage& d, const Camera& cam) {
    cam.validate();
    std::vector<Vec3> cloud;
    cloud.reserve(d.valid_count());
    for (int v = 0; v < d.height; ++v)
        for (int u = 0; u < d.width; ++u)
            if (d.is_valid(u, v)) cloud.push_back(unproject_pixel(cam, u, v, d.at(u, v)));
    if (cloud.empty()) throw std::invalid_argument("unproject: no valid depth pixels");
    return cloud;
}

// Organized variant for image-gradient normals: one entry per pixel, validity
// taken from the depth image.
inline std::vector<Vec3> unproject_organized(const DepthImage& d, const Camera& cam) {
    cam.validate();
    std::vector<Vec3> cloud(static_cast<std::size_t>(d.width) * d.height);
    for (int v = 0; v < d.height; ++v)
        for (int u = 0; u < d.width; ++u)
            if (d.is_valid(u, v)) cloud[d.index(u, v)] = unproject_pixel(cam, u, v, d.at(u, v));
    return cloud;
}

// Isotropic scale + translation taking the cloud's bounding box into
// [-0.5, 0.5]^3 with the longest axis spanning exactly 1.
inline std::pair<std::vector<Vec3>, Transform> normalize_to_unit_cube(
    const std::vector<Vec3>& points) {
    if (points.size() < 2) throw std::invalid_argument("normalize_to_unit_cube: need >= 2 points");
    Aabb box;
    for (const Vec3& p : points) box.extend(p);
    const Vec3 ext = box.extent();
    const double longest = std::max({ext.x, ext.y, ext.z});
    if (!(longest > 0.0))
        throw std::invalid_argument("normalize_to_unit_cube: degenerate bounding box");
    Transform t;
    t.scale = 1.0 / longest;
    t.translate = -box.center() * t.scale;
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const Vec3& p : points) out.push_back(t.apply(p));
    return {std::move(out), t};
}

// One inside and one outside sample per valid pixel, pushed +-epsilon along
// the normalized viewing ray. Pairs are interleaved (in, out).
inline SampleSet surface_samples(const DepthImage& d, const Camera& cam, const Transform& t,
                                 double epsilon = kDefaultSurfaceEpsilon) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("surface_samples: epsilon must be > 0");
    cam.validate();
    const Vec3 cam_n = t.apply(Vec3{});
    SampleSet s;
    s.points.reserve(2 * d.valid_count());
    for (int v = 0; v < d.height; ++v) {
        for (int u = 0; u < d.width; ++u) {
            if (!d.is_valid(u, v)) continue;
            const Vec3 p = t.apply(unproject_pixel(cam, u, v, d.at(u, v)));
            const Vec3 dir = (p - cam_n).normalized();
            s.push(p + dir * epsilon, 1, SampleKind::kSurfaceIn);
            s.push(p - dir * epsilon, 0, SampleKind::kSurfaceOut);
        }
    }
    if (s.empty()) throw std::invalid_argument("surface_samples: no valid depth pixels");
    return s;
}

// Free-space reservoir: `count` points on rays between the camera and the
// visible surface, stopping epsilon short of it so the band around the
// surface stays uncontradicted. All labeled 0.
inline SampleSet freespace_samples(const DepthImage& d, const Camera& cam, const Transform& t,
                                   std::size_t count, Rng& rng,
                                   double epsilon = kDefaultSurfaceEpsilon) {
    if (count < 1) throw std::invalid_argument("freespace_samples: count must be >= 1");
    cam.validate();
    const Vec3 cam_n = t.apply(Vec3{});
    struct Ray { Vec3 dir; double len; };
    std::vector<Ray> rays;
    rays.reserve(d.valid_count());
    for (int v = 0; v < d.height; ++v) {
        for (int u = 0; u < d.width; ++u) {
            if (!d.is_valid(u, v)) continue;
            const Vec3 p = t.apply(unproject_pixel(cam, u, v, d.at(u, v)));
            const Vec3 rel = p - cam_n;
            const double len = rel.norm();
            if (len > epsilon * (1.0 + 1e-9)) rays.push_back({rel / len, len});
        }
    }
    if (rays.empty()) throw std::invalid_argument("freespace_samples: no rays clear the margin");
    SampleSet s;
    s.points.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const Ray& r = rays[rng.uniform_index(rays.size())];
        const double dist = rng.uniform(0.0, r.len - epsilon);
        s.push(cam_n + r.dir * dist, 0, SampleKind::kFreespace);
    }
    return s;
}

namespace detail {
// Floyd's algorithm: a uniform without-replacement draw of k indices from
// [0, n) in O(k) time with no persistent state, so repeated draws from one
// reservoir are reproducible functions of the rng alone.
inline std::vector<std::uint32_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::uint32_t> out;
    out.reserve(k);
    std::unordered_set<std::uint32_t> chosen;
    chosen.reserve(k * 2);
    for (std::size_t i = n - k; i < n; ++i) {
        const std::uint32_t j = static_cast<std::uint32_t>(rng.uniform_index(i + 1));
        if (chosen.insert(j).second) {
            out.push_back(j);
        } else {
            chosen.insert(static_cast<std::uint32_t>(i));
            out.push_back(static_cast<std::uint32_t>(i));
        }
    }
    return out;
}
}  // namespace detail

// Uniform without-replacement draw of ceil(fraction * N) samples.
inline SampleSet subsample(const SampleSet& set, double fraction, Rng& rng) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::invalid_argument("subsample: fraction must be in (0, 1]");
    const std::size_t n = set.size();
    const std::size_t k = std::min(
        n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
    SampleSet out;
    out.points.reserve(k);
    for (std::uint32_t j : detail::sample_indices(n, k, rng))
        out.push(set.points[j], set.labels[j], set.kinds[j]);
    return out;
}

inline SampleSet subsample(const std::vector<SampleSet>& sets, double fraction, Rng& rng) {
    SampleSet merged;
    for (const auto& s : sets) merged.append(s);
    return subsample(merged, fraction, rng);
}

// Immutable reservoir for the fit loop; each draw is a pure function of the
// rng state, so concurrent fits and repeated fits never interfere.
class SampleReservoir {
public:
    explicit SampleReservoir(SampleSet all) : all_(std::move(all)) {}

    const SampleSet& all() const { return all_; }
    std::size_t size() const { return all_.size(); }

    SampleSet draw(double fraction, Rng& rng) const { return subsample(all_, fraction, rng); }

private:
    SampleSet all_;
};

struct SamplingConfig {
    double epsilon = kDefaultSurfaceEpsilon;
    std::size_t freespace_count = 0;  // 0 = 16 * valid pixel count
    std::uint64_t seed = 0;
};

// Everything a fit needs from one depth image: the merged sample reservoir,
// the scene transform, the normalized cloud bounds, and the raw inputs kept
// for selection scoring.
struct FitScene {
    SampleReservoir reservoir;
    Transform transform;
    Aabb cloud_bounds;  // normalized frame
    Camera camera;
    DepthImage depth;
};

inline FitScene build_fit_scene(const DepthImage& depth, const Camera& cam,
                                const SamplingConfig& cfg = {}) {
    auto cloud_raw = unproject(depth, cam);
    auto [cloud, transform] = normalize_to_unit_cube(cloud_raw);
    Aabb bounds;
    for (const Vec3& p : cloud) bounds.extend(p);

    SampleSet all = surface_samples(depth, cam, transform, cfg.epsilon);
    const std::size_t n_free =
        cfg.freespace_count > 0 ? cfg.freespace_count : 16 * depth.valid_count();
    Rng rng(hash_combine(cfg.seed, 0x66726565ULL /* "free" */));
    all.append(freespace_samples(depth, cam, transform, n_free, rng, cfg.epsilon));

    return FitScene{SampleReservoir(std::move(all)), transform, bounds, cam, depth};
}

}  // namespace csgfit
