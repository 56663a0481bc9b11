// metrics.hpp - scoring rendered buffers against ground truth.
//
// Depth: AbsRel and AUC@n (fraction of pixels within n cm). Distances:
// plain per-pixel |pred - gt| statistics (the occlusion-aware variant of the
// cuboid baseline is not reproduced; reports label these as plain distances).
// Normals: mean/median angular error in degrees. Segmentation: oracle
// accuracy after assigning each predicted face-region its majority GT label.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "csgfit/camera.hpp"
#include "csgfit/csg_core.hpp"
#include "csgfit/render.hpp"
#include "csgfit/vec3.hpp"

namespace csgfit {

struct MetricReport {
    double absrel = std::numeric_limits<double>::quiet_NaN();
    std::map<int, double> auc;  // n_cm -> fraction
    double mean_dist = std::numeric_limits<double>::quiet_NaN();
    double median_dist = std::numeric_limits<double>::quiet_NaN();
    double normal_mean_deg = std::numeric_limits<double>::quiet_NaN();
    double normal_median_deg = std::numeric_limits<double>::quiet_NaN();
    double seg_acc = std::numeric_limits<double>::quiet_NaN();
    std::size_t valid_pixel_count = 0;
};

inline const std::vector<int>& default_auc_thresholds() {
    static const std::vector<int> t = {5, 10, 20, 50};
    return t;
}

namespace detail {

inline double median_of(std::vector<double>& v) {
    const std::size_t n = v.size();
    const std::size_t mid = n / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double hi = v[mid];
    if (n % 2 == 1) return hi;
    std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
    return 0.5 * (v[mid - 1] + hi);
}

// Masked per-pixel |pred - gt|, with non-finite predictions (ray misses)
// scored at the far-plane value.
inline std::vector<double> masked_abs_errors(const std::vector<double>& pred,
                                             const std::vector<double>& gt,
                                             const std::vector<std::uint8_t>& mask,
                                             double miss_depth) {
    if (pred.size() != gt.size() || pred.size() != mask.size())
        throw std::invalid_argument("depth metrics: raster size mismatch");
    std::vector<double> err;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!mask[i]) continue;
        const double p = std::isfinite(pred[i]) ? pred[i] : miss_depth;
        err.push_back(std::abs(p - gt[i]));
    }
    if (err.empty()) throw std::invalid_argument("depth metrics: empty effective mask");
    return err;
}

}  // namespace detail

// Mean |pred - gt| / gt over masked pixels. Misses contribute at miss_depth.
inline double absrel(const std::vector<double>& pred, const std::vector<double>& gt,
                     const std::vector<std::uint8_t>& mask, double miss_depth) {
    if (pred.size() != gt.size() || pred.size() != mask.size())
        throw std::invalid_argument("absrel: raster size mismatch");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!mask[i]) continue;
        if (!(gt[i] > 0.0)) throw std::invalid_argument("absrel: gt must be > 0 on mask");
        const double p = std::isfinite(pred[i]) ? pred[i] : miss_depth;
        sum += std::abs(p - gt[i]) / gt[i];
        ++n;
    }
    if (n == 0) throw std::invalid_argument("absrel: empty effective mask");
    return sum / static_cast<double>(n);
}

// Fraction of masked pixels with |pred - gt| <= n cm. Depths are in meters
// unless a unit-to-meters factor says otherwise.
inline double auc_at(const std::vector<double>& pred, const std::vector<double>& gt,
                     const std::vector<std::uint8_t>& mask, double n_cm, double miss_depth,
                     double unit_to_meters = 1.0) {
    const auto err = detail::masked_abs_errors(pred, gt, mask, miss_depth);
    const double threshold = n_cm / 100.0 / unit_to_meters;
    std::size_t within = 0;
    for (double e : err) within += e <= threshold ? 1 : 0;
    return static_cast<double>(within) / static_cast<double>(err.size());
}

// Mean and median angle between unit normal fields, degrees.
inline std::pair<double, double> normal_errors(const std::vector<Vec3>& pred,
                                               const std::vector<Vec3>& gt,
                                               const std::vector<std::uint8_t>& mask) {
    if (pred.size() != gt.size() || pred.size() != mask.size())
        throw std::invalid_argument("normal_errors: raster size mismatch");
    std::vector<double> deg;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!mask[i]) continue;
        const double c = std::clamp(dot(pred[i], gt[i]), -1.0, 1.0);
        deg.push_back(std::acos(c) * 180.0 / M_PI);
    }
    if (deg.empty()) throw std::invalid_argument("normal_errors: empty mask");
    double sum = 0.0;
    for (double d : deg) sum += d;
    const double mean = sum / static_cast<double>(deg.size());
    return {mean, detail::median_of(deg)};
}

// Image-gradient normals from an organized point cloud: cross product of the
// central-difference tangents, oriented toward the camera. Pixels without
// four valid neighbors, or with degenerate tangents, are masked out.
inline std::pair<std::vector<Vec3>, std::vector<std::uint8_t>> gt_normals_from_depth(
    const std::vector<Vec3>& organized, const std::vector<std::uint8_t>& valid, int width,
    int height) {
    const std::size_t n = static_cast<std::size_t>(width) * height;
    if (organized.size() != n || valid.size() != n)
        throw std::invalid_argument("gt_normals_from_depth: raster size mismatch");
    std::vector<Vec3> normals(n, Vec3{});
    std::vector<std::uint8_t> mask(n, 0);
    auto at = [&](int u, int v) { return static_cast<std::size_t>(v) * width + u; };
    for (int v = 1; v + 1 < height; ++v) {
        for (int u = 1; u + 1 < width; ++u) {
            if (!valid[at(u, v)] || !valid[at(u - 1, v)] || !valid[at(u + 1, v)] ||
                !valid[at(u, v - 1)] || !valid[at(u, v + 1)])
                continue;
            const Vec3 du = organized[at(u + 1, v)] - organized[at(u - 1, v)];
            const Vec3 dv = organized[at(u, v + 1)] - organized[at(u, v - 1)];
            Vec3 nrm = cross(du, dv);
            const double len = nrm.norm();
            if (!(len > 1e-12)) continue;
            nrm = nrm / len;
            if (dot(nrm, organized[at(u, v)]) > 0.0) nrm = -nrm;  // camera-facing
            normals[at(u, v)] = nrm;
            mask[at(u, v)] = 1;
        }
    }
    return {std::move(normals), std::move(mask)};
}

// Oracle segmentation accuracy: group pixels by identical predicted region id
// (non-hit pixels form one extra region), assign each group the majority GT
// label (ties to the smallest id), and score pixel accuracy.
inline double seg_accuracy_ids(const std::vector<long long>& pred_regions,
                               const std::vector<int>& gt_seg,
                               const std::vector<std::uint8_t>& mask) {
    if (pred_regions.size() != gt_seg.size() || pred_regions.size() != mask.size())
        throw std::invalid_argument("seg_accuracy: raster size mismatch");
    std::map<long long, std::map<int, std::size_t>> counts;
    std::size_t total = 0;
    for (std::size_t i = 0; i < pred_regions.size(); ++i) {
        if (!mask[i]) continue;
        counts[pred_regions[i]][gt_seg[i]] += 1;
        ++total;
    }
    if (total == 0) throw std::invalid_argument("seg_accuracy: empty mask");
    std::size_t correct = 0;
    for (const auto& [region, hist] : counts) {
        std::size_t best = 0;
        for (const auto& [label, c] : hist) best = std::max(best, c);
        correct += best;  // std::map iterates labels ascending: ties go to the smallest id
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

inline long long region_id_of(const FaceTriple& t, bool hit) {
    if (!hit) return -1;
    // Collision-free packing (face < 2^16, indices < 2^20).
    return ((static_cast<long long>(t.face_index) << 40) |
            (static_cast<long long>(t.positive_index) << 20) |
            static_cast<long long>(t.negative_index + 1)) + 1;
}

inline double seg_accuracy(const std::vector<FaceTriple>& labels,
                           const std::vector<std::uint8_t>& hit,
                           const std::vector<int>& gt_seg,
                           const std::vector<std::uint8_t>& mask) {
    if (labels.size() != hit.size()) throw std::invalid_argument("seg_accuracy: size mismatch");
    std::vector<long long> ids(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) ids[i] = region_id_of(labels[i], hit[i]);
    return seg_accuracy_ids(ids, gt_seg, mask);
}

// Full report for a render against ground-truth rasters.
inline MetricReport evaluate_render(const RenderBuffers& pred, const DepthImage& gt_depth,
                                    const std::vector<Vec3>* gt_normals,
                                    const std::vector<std::uint8_t>* gt_normal_mask,
                                    const std::vector<int>* gt_seg,
                                    double unit_to_meters = 1.0) {
    if (pred.depth.values.size() != gt_depth.values.size())
        throw std::invalid_argument("evaluate_render: raster size mismatch");
    const std::vector<std::uint8_t>& mask = gt_depth.valid;

    MetricReport r;
    r.absrel = absrel(pred.depth.values, gt_depth.values, mask, pred.miss_depth);
    for (int n_cm : default_auc_thresholds())
        r.auc[n_cm] =
            auc_at(pred.depth.values, gt_depth.values, mask, n_cm, pred.miss_depth, unit_to_meters);
    auto err = detail::masked_abs_errors(pred.depth.values, gt_depth.values, mask, pred.miss_depth);
    double sum = 0.0;
    for (double e : err) sum += e;
    r.mean_dist = sum / static_cast<double>(err.size());
    r.median_dist = detail::median_of(err);
    std::size_t n_valid = 0;
    for (auto v : mask) n_valid += v;
    r.valid_pixel_count = n_valid;

    if (gt_normals != nullptr) {
        std::vector<std::uint8_t> both(mask.size(), 0);
        for (std::size_t i = 0; i < mask.size(); ++i)
            both[i] = mask[i] && pred.hit_mask[i] &&
                      (gt_normal_mask == nullptr || (*gt_normal_mask)[i]);
        auto [mean_deg, median_deg] = normal_errors(pred.normals, *gt_normals, both);
        r.normal_mean_deg = mean_deg;
        r.normal_median_deg = median_deg;
    }
    if (gt_seg != nullptr) r.seg_acc = seg_accuracy(pred.labels, pred.hit_mask, *gt_seg, mask);
    return r;
}

}  // namespace csgfit
