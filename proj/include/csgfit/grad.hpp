// grad.hpp - closed-form gradient of the total loss.
//
// The loss composition is fixed, so the backward pass is derived by hand and
// fused with the forward pass: per sample, the per-face softmax of the
// LogSumExp, the sigmoid factor, and the hard-max routing are recomputed only
// for the primitives that actually receive gradient. Parameters are packed
// per primitive as [center(3), stored normals(3 each), offsets(f), log delta].
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "csgfit/csg_core.hpp"
#include "csgfit/losses.hpp"
#include "csgfit/sampling.hpp"

namespace csgfit {

constexpr int kMaxPrims = 64;
// Gradient contributions below this are dropped; they sit ten orders below
// the finite-difference noise floor of any loss of order one.
constexpr double kGradCutoff = 1e-30;

struct ParamLayout {
    struct Slice {
        int offset = 0;
        int n_stored = 0;
        int faces = 0;
        int size() const { return 3 + 3 * n_stored + faces + 1; }
        int center() const { return offset; }
        int normal(int j) const { return offset + 3 + 3 * j; }
        int face_offset(int i) const { return offset + 3 + 3 * n_stored + i; }
        int log_delta() const { return offset + 3 + 3 * n_stored + faces; }
    };

    std::vector<Slice> slices;  // positives first, then negatives
    int dim = 0;

    static ParamLayout of(const CsgModel& m) {
        ParamLayout l;
        auto add = [&l](const ConvexPrimitive& p) {
            Slice s;
            s.offset = l.dim;
            s.n_stored = p.stored_normal_count();
            s.faces = p.face_count();
            l.dim += s.size();
            l.slices.push_back(s);
        };
        for (const auto& p : m.positives) add(p);
        for (const auto& p : m.negatives) add(p);
        return l;
    }
};

inline std::vector<double> pack_params(const CsgModel& m) {
    const ParamLayout layout = ParamLayout::of(m);
    std::vector<double> x(layout.dim);
    int k = 0;
    auto put = [&](const ConvexPrimitive& p) {
        const auto& sl = layout.slices[k++];
        x[sl.center() + 0] = p.center.x;
        x[sl.center() + 1] = p.center.y;
        x[sl.center() + 2] = p.center.z;
        for (int j = 0; j < sl.n_stored; ++j) {
            x[sl.normal(j) + 0] = p.normals[j].x;
            x[sl.normal(j) + 1] = p.normals[j].y;
            x[sl.normal(j) + 2] = p.normals[j].z;
        }
        for (int i = 0; i < sl.faces; ++i) x[sl.face_offset(i)] = p.offsets[i];
        x[sl.log_delta()] = std::log(p.blend_delta);
    };
    for (const auto& p : m.positives) put(p);
    for (const auto& p : m.negatives) put(p);
    return x;
}

inline void unpack_params(const std::vector<double>& x, CsgModel& m) {
    const ParamLayout layout = ParamLayout::of(m);
    if (static_cast<int>(x.size()) != layout.dim)
        throw std::invalid_argument("unpack_params: size mismatch");
    int k = 0;
    auto get = [&](ConvexPrimitive& p) {
        const auto& sl = layout.slices[k++];
        p.center = {x[sl.center() + 0], x[sl.center() + 1], x[sl.center() + 2]};
        for (int j = 0; j < sl.n_stored; ++j)
            p.normals[j] = {x[sl.normal(j) + 0], x[sl.normal(j) + 1], x[sl.normal(j) + 2]};
        for (int i = 0; i < sl.faces; ++i) p.offsets[i] = x[sl.face_offset(i)];
        p.blend_delta = std::exp(x[sl.log_delta()]);
    };
    for (auto& p : m.positives) get(p);
    for (auto& p : m.negatives) get(p);
}

// Weight decay applies to offsets and log-delta only, never to centers or
// normal directions.
inline std::vector<std::uint8_t> decay_mask(const CsgModel& m) {
    const ParamLayout layout = ParamLayout::of(m);
    std::vector<std::uint8_t> mask(layout.dim, 0);
    for (const auto& sl : layout.slices) {
        for (int i = 0; i < sl.faces; ++i) mask[sl.face_offset(i)] = 1;
        mask[sl.log_delta()] = 1;
    }
    return mask;
}

namespace detail {

// Forward Phi with the softmax cached for the backward call.
struct PhiEval {
    double phi = 0.0;
    double weighted_a = 0.0;      // sum_i w_i a_i
    double w[kMaxFaces] = {};     // softmax over faces
};

inline PhiEval phi_eval(const ConvexPrimitive& p, const Vec3& x) {
    PhiEval ev;
    const int f = p.face_count();
    double a[kMaxFaces];
    const Vec3 rel = x - p.center;
    double amax = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < f; ++i) {
        a[i] = dot(p.face_normal(i), rel) - p.offsets[i];
        if (a[i] > amax) amax = a[i];
    }
    if (!std::isfinite(amax)) throw EvaluationError("phi_eval: non-finite face value");
    const double inv_delta = 1.0 / p.blend_delta;
    double sum = 0.0;
    for (int i = 0; i < f; ++i) {
        const double e = (a[i] - amax) * inv_delta;
        ev.w[i] = e > kExpCutoff ? std::exp(e) : 0.0;
        sum += ev.w[i];
    }
    const double inv_sum = 1.0 / sum;
    ev.phi = amax + p.blend_delta * std::log(sum);
    for (int i = 0; i < f; ++i) {
        ev.w[i] *= inv_sum;
        ev.weighted_a += ev.w[i] * a[i];
    }
    return ev;
}

// Accumulates dL/dtheta for one primitive given dL/dPhi at x.
inline void phi_backward(const ConvexPrimitive& p, const ParamLayout::Slice& sl, const Vec3& x,
                         double dphi, double* g) {
    if (std::abs(dphi) < kGradCutoff) return;
    const PhiEval ev = phi_eval(p, x);
    const Vec3 rel = x - p.center;
    const int f = p.face_count();
    Vec3 g_center{};
    for (int i = 0; i < f; ++i) {
        const double wi = ev.w[i];
        if (wi == 0.0) continue;
        const int j = p.face_stored_index(i);
        const double sign = p.face_sign(i);
        g_center -= p.normals[j] * (sign * wi);
        g[sl.face_offset(i)] -= dphi * wi;
        const double c = dphi * wi * sign;
        g[sl.normal(j) + 0] += c * rel.x;
        g[sl.normal(j) + 1] += c * rel.y;
        g[sl.normal(j) + 2] += c * rel.z;
    }
    g[sl.center() + 0] += dphi * g_center.x;
    g[sl.center() + 1] += dphi * g_center.y;
    g[sl.center() + 2] += dphi * g_center.z;
    g[sl.log_delta()] += dphi * (ev.phi - ev.weighted_a);
}

struct GradAcc {
    double sample_sum = 0.0;
    double overlap_sum = 0.0;
    std::vector<double> grad;

    GradAcc& operator+=(const GradAcc& o) {
        sample_sum += o.sample_sum;
        overlap_sum += o.overlap_sum;
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += o.grad[i];
        return *this;
    }
};

}  // namespace detail

struct GradResult {
    LossBreakdown breakdown;
    std::vector<double> grad;
};

// Exact gradient of total_loss with respect to every packed parameter.
// Argmax routing (hard union, relu, nearest-neighbor sets) follows the chosen
// branch; ties route to the lowest index.
inline GradResult grad_total_loss(const CsgModel& m, const SampleSet& s, const LossWeights& w,
                                  UnionMode mode = UnionMode::kHardMax,
                                  int guidance_neighbors = kDefaultGuidanceNeighbors) {
    if (s.empty()) throw std::invalid_argument("grad_total_loss: empty batch");
    w.validate();
    guidance_neighbors = std::max(1, guidance_neighbors);
    const int kp = m.k_pos(), kn = m.k_neg();
    if (kp + kn > kMaxPrims) throw std::invalid_argument("grad_total_loss: too many primitives");
    const ParamLayout layout = ParamLayout::of(m);
    const double sigma = m.sharpness_sigma;
    const double n_inv = 1.0 / static_cast<double>(s.size());

    const ConvexPrimitive* prims[kMaxPrims];
    for (int k = 0; k < kp; ++k) prims[k] = &m.positives[k];
    for (int j = 0; j < kn; ++j) prims[kp + j] = &m.negatives[j];

    auto acc = detail::blocked_reduce<detail::GradAcc>(
        s.size(),
        [&] {
            detail::GradAcc a;
            a.grad.assign(layout.dim, 0.0);
            return a;
        },
        [&](detail::GradAcc& a, std::size_t i) {
            const Vec3& x = s.points[i];
            double phi[kMaxPrims], C[kMaxPrims];
            for (int k = 0; k < kp + kn; ++k) {
                phi[k] = convex_phi(*prims[k], x);
                C[k] = indicator_from_phi(phi[k], sigma);
            }

            // Union indicators.
            double o_pos = 0.0, o_neg = 0.0;
            int arg_pos = 0, arg_neg = -1;
            double pos_sum = 0.0;
            if (mode == UnionMode::kHardMax) {
                for (int k = 0; k < kp; ++k) {
                    pos_sum += C[k];
                    if (C[k] > o_pos || k == 0) { o_pos = C[k]; arg_pos = k; }
                }
                for (int j = 0; j < kn; ++j)
                    if (arg_neg < 0 || C[kp + j] > o_neg) { o_neg = C[kp + j]; arg_neg = j; }
            } else {
                double miss_p = 1.0, miss_n = 1.0;
                for (int k = 0; k < kp; ++k) { pos_sum += C[k]; miss_p *= 1.0 - C[k]; }
                for (int j = 0; j < kn; ++j) miss_n *= 1.0 - C[kp + j];
                o_pos = 1.0 - miss_p;
                o_neg = kn > 0 ? 1.0 - miss_n : 0.0;
            }
            const double occ = std::max(0.0, o_pos - o_neg);
            const double r = occ - static_cast<double>(s.labels[i]);
            a.sample_sum += r * r;
            const double excess = std::max(0.0, pos_sum - 1.0);
            a.overlap_sum += excess * excess;

            // dL/dC_k assembled from the sample and overlap paths.
            double dC[kMaxPrims] = {};
            const double d_occ = w.w_sample * 2.0 * r * n_inv;
            if (o_pos - o_neg > 0.0 && d_occ != 0.0) {
                if (mode == UnionMode::kHardMax) {
                    dC[arg_pos] += d_occ;
                    if (arg_neg >= 0) dC[kp + arg_neg] -= d_occ;
                } else {
                    for (int k = 0; k < kp; ++k) {
                        double prod = 1.0;
                        for (int k2 = 0; k2 < kp; ++k2)
                            if (k2 != k) prod *= 1.0 - C[k2];
                        dC[k] += d_occ * prod;
                    }
                    for (int j = 0; j < kn; ++j) {
                        double prod = 1.0;
                        for (int j2 = 0; j2 < kn; ++j2)
                            if (j2 != j) prod *= 1.0 - C[kp + j2];
                        dC[kp + j] -= d_occ * prod;
                    }
                }
            }
            if (excess > 0.0) {
                const double d_over = w.w_overlap * 2.0 * excess * n_inv;
                for (int k = 0; k < kp; ++k) dC[k] += d_over;
            }

            for (int k = 0; k < kp + kn; ++k) {
                if (dC[k] == 0.0) continue;
                // dC/dPhi = -sigma C (1 - C)
                const double dphi = dC[k] * (-sigma * C[k] * (1.0 - C[k]));
                detail::phi_backward(*prims[k], layout.slices[k], x, dphi,
                                     a.grad.data());
            }
        });

    GradResult out;
    out.grad = std::move(acc.grad);
    LossBreakdown& b = out.breakdown;
    b.sample = acc.sample_sum * n_inv;
    b.overlap = acc.overlap_sum * n_inv;

    // Unique parametrization term (no sample dependence).
    {
        std::size_t off_n = 0, norm_n = 0;
        for (int k = 0; k < kp + kn; ++k) {
            off_n += prims[k]->face_count();
            norm_n += prims[k]->stored_normal_count();
        }
        double off_sum = 0.0, norm_sum = 0.0;
        for (int k = 0; k < kp + kn; ++k) {
            const auto& sl = layout.slices[k];
            const ConvexPrimitive& p = *prims[k];
            for (int i = 0; i < p.face_count(); ++i) {
                const double d = p.offsets[i];
                if (d < 0.0) {
                    off_sum += d * d;
                    out.grad[sl.face_offset(i)] += w.w_unique * 2.0 * d / off_n;
                }
            }
            for (int j = 0; j < p.stored_normal_count(); ++j) {
                const double len = p.normals[j].norm();
                const double res = len - 1.0;
                norm_sum += res * res;
                if (len > 1e-12) {
                    const double c = w.w_unique * 2.0 * res / (len * norm_n);
                    out.grad[sl.normal(j) + 0] += c * p.normals[j].x;
                    out.grad[sl.normal(j) + 1] += c * p.normals[j].y;
                    out.grad[sl.normal(j) + 2] += c * p.normals[j].z;
                }
            }
        }
        b.unique = (off_n ? off_sum / off_n : 0.0) + (norm_n ? norm_sum / norm_n : 0.0);
    }

    // Guidance and localization: per-primitive terms over the batch's
    // surface-inside samples; sequential, the candidate sets are small.
    const auto cand = detail::surface_in_indices(s);
    if (!cand.empty()) {
        std::vector<std::pair<double, std::uint32_t>> scratch;
        const double k_inv = 1.0 / static_cast<double>(kp + kn);
        double g_sum = 0.0, l_sum = 0.0;
        for (int k = 0; k < kp + kn; ++k) {
            const ConvexPrimitive& p = *prims[k];
            const auto& sl = layout.slices[k];
            detail::nearest_candidates(s, cand, p.center,
                                       static_cast<std::size_t>(guidance_neighbors), scratch);
            const double m_inv = 1.0 / static_cast<double>(scratch.size());
            double acc_g = 0.0;
            for (const auto& [d2, si] : scratch) {
                const double phi = convex_phi(p, s.points[si]);
                acc_g += phi * phi;
                detail::phi_backward(p, sl, s.points[si],
                                     w.w_guidance * 2.0 * phi * m_inv * k_inv, out.grad.data());
            }
            g_sum += acc_g * m_inv;

            // Nearest sample to the center (localization); scratch is sorted
            // by distance to the center already.
            const Vec3 nearest = s.points[scratch.front().second];
            l_sum += (p.center - nearest).squared_norm();
            const Vec3 dl = (p.center - nearest) * (w.w_localization * 2.0 * k_inv);
            out.grad[sl.center() + 0] += dl.x;
            out.grad[sl.center() + 1] += dl.y;
            out.grad[sl.center() + 2] += dl.z;
        }
        b.guidance = g_sum * k_inv;
        b.localization = l_sum * k_inv;
    }

    b.total = b.weighted_sum(w);
    return out;
}

}  // namespace csgfit
