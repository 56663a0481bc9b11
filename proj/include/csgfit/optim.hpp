// optim.hpp - random-start / warm-start descent on primitive parameters.
//
// One fit: subsample 10% of the reservoir, take the exact gradient of the
// total loss, apply an AdamW step under a warmup-then-halving schedule,
// renormalize stored normals and clamp log-delta, repeat. A non-finite loss
// rewinds to the last checkpoint with a halved learning rate; a second
// divergence aborts.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "csgfit/csg_core.hpp"
#include "csgfit/grad.hpp"
#include "csgfit/losses.hpp"
#include "csgfit/rng.hpp"
#include "csgfit/sampling.hpp"

namespace csgfit {

struct FitConfig {
    int k_total = 12;
    int k_neg = 0;
    int faces = 6;
    bool symmetric = true;
    int steps = 2000;            // refinement runs use 200
    double base_lr = 0.01;
    double warmup_frac = 0.25;
    double halve_at[2] = {0.5, 0.75};
    double weight_decay = 0.01;
    double subsample_fraction = 0.10;
    double sigma = kDefaultSigma;
    std::uint64_t seed = 0;
    LossWeights weights;
    UnionMode union_mode = UnionMode::kHardMax;
    int guidance_neighbors = kDefaultGuidanceNeighbors;

    void validate() const {
        if (k_total < 1) throw std::invalid_argument("FitConfig: k_total must be >= 1");
        if (k_neg < 0 || k_neg > k_total - 1)
            throw std::invalid_argument("FitConfig: k_neg must be < k_total (and >= 0)");
        if (faces < 4) throw std::invalid_argument("FitConfig: faces must be >= 4");
        if (symmetric && faces % 2 != 0)
            throw std::invalid_argument("FitConfig: symmetric mode needs an even face count");
        if (steps < 1) throw std::invalid_argument("FitConfig: steps must be >= 1");
        if (!(base_lr > 0.0)) throw std::invalid_argument("FitConfig: base_lr must be > 0");
        if (!(warmup_frac > 0.0) || warmup_frac > 1.0 || !(subsample_fraction > 0.0) ||
            subsample_fraction > 1.0)
            throw std::invalid_argument("FitConfig: fractions must be in (0, 1]");
        if (!(sigma > 0.0)) throw std::invalid_argument("FitConfig: sigma must be > 0");
        weights.validate();
    }
};

// Piecewise learning-rate rule: linear warmup over the first quarter, halve
// at one half, halve again at three quarters.
inline double lr_at(int t, int total, double base, double warmup_frac = 0.25,
                    double halve1 = 0.5, double halve2 = 0.75) {
    if (t < 0 || t >= total) throw std::invalid_argument("lr_at: step out of range");
    const double td = static_cast<double>(t), totald = static_cast<double>(total);
    if (td < warmup_frac * totald) return base * (td + 1.0) / (warmup_frac * totald);
    if (td < halve1 * totald) return base;
    if (td < halve2 * totald) return 0.5 * base;
    return 0.25 * base;
}

// Decoupled-weight-decay adaptive moments. Decay applies only where the mask
// is set (offsets and log-delta).
struct OptimizerState {
    std::vector<double> m1, m2;
    long long step = 0;

    explicit OptimizerState(std::size_t dim) : m1(dim, 0.0), m2(dim, 0.0) {}
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline void adamw_step(OptimizerState& state, std::vector<double>& params,
                       const std::vector<double>& grads, double lr, double weight_decay,
                       const std::vector<std::uint8_t>& decay, const AdamConfig& cfg = {}) {
    if (params.size() != grads.size() || params.size() != state.m1.size() ||
        params.size() != decay.size())
        throw std::invalid_argument("adamw_step: shape mismatch");
    state.step += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m1[i] = cfg.beta1 * state.m1[i] + (1.0 - cfg.beta1) * g;
        state.m2[i] = cfg.beta2 * state.m2[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m1[i] / c1;
        const double vhat = state.m2[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        if (decay[i]) params[i] -= lr * weight_decay * params[i];
    }
}

// Evenly spread unit directions (golden-angle spiral); rotated copies seed
// the initial normal frames for face counts other than 6.
inline std::vector<Vec3> fibonacci_directions(int n) {
    std::vector<Vec3> dirs;
    dirs.reserve(n);
    const double ga = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        dirs.push_back({r * std::cos(ga * i), r * std::sin(ga * i), z});
    }
    return dirs;
}

// Random start: centers uniform in the cloud bounds, randomly rotated
// near-cubic boxes, delta = 0.02. Negatives start at (perturbed) positive
// centers so they have something to carve.
inline CsgModel init_random(const FitConfig& cfg, const std::vector<Vec3>& cloud, Rng& rng) {
    cfg.validate();
    if (cloud.empty()) throw std::invalid_argument("init_random: empty cloud");
    Aabb bounds;
    for (const Vec3& p : cloud) bounds.extend(p);

    const int k_pos = cfg.k_total - cfg.k_neg;
    CsgModel m;
    m.sharpness_sigma = cfg.sigma;

    auto make_prim = [&](const Vec3& center) {
        ConvexPrimitive p;
        p.symmetric = cfg.symmetric;
        p.center = center;
        p.blend_delta = 0.02;
        const Mat3 rot = rng.random_rotation();
        const int stored = cfg.symmetric ? cfg.faces / 2 : cfg.faces;
        if (cfg.faces == 6) {
            const Vec3 axes[3] = {rot * Vec3{1, 0, 0}, rot * Vec3{0, 1, 0}, rot * Vec3{0, 0, 1}};
            for (int j = 0; j < 3; ++j) p.normals.push_back(axes[j]);
            if (!cfg.symmetric)
                for (int j = 0; j < 3; ++j) p.normals.push_back(-axes[j]);
        } else {
            for (const Vec3& d : fibonacci_directions(stored)) p.normals.push_back(rot * d);
        }
        for (int i = 0; i < cfg.faces; ++i) p.offsets.push_back(rng.uniform(0.05, 0.15));
        return p;
    };

    for (int k = 0; k < k_pos; ++k) m.positives.push_back(make_prim(rng.uniform_in_box(bounds)));
    for (int j = 0; j < cfg.k_neg; ++j) {
        const Vec3 base = m.positives[j % k_pos].center;
        m.negatives.push_back(make_prim(base + rng.normal_vec3() * 0.05));
    }
    m.validate();
    return m;
}

struct FitTrace {
    struct Entry {
        int step;
        double lr;
        LossBreakdown loss;
    };
    std::vector<Entry> entries;
    std::vector<std::pair<int, double>> absrel_checkpoints;  // optional, filled by callers
    double wall_seconds = 0.0;
};

class FitDivergenceError : public std::runtime_error {
public:
    FitDivergenceError(int step, const std::string& what)
        : std::runtime_error("fit diverged at step " + std::to_string(step) + ": " + what),
          step_(step) {}
    int step() const { return step_; }

private:
    int step_;
};

constexpr int kCheckpointInterval = 50;

// Runs the descent loop. A warm-start model skips init_random (polishing).
inline std::pair<CsgModel, FitTrace> fit(const FitScene& scene, const FitConfig& cfg,
                                         const std::optional<CsgModel>& warm_start = {}) {
    cfg.validate();
    const auto t_begin = std::chrono::steady_clock::now();
    Rng rng(hash_combine(cfg.seed, 0x464954ULL /* "FIT" */));

    CsgModel model;
    if (warm_start) {
        model = *warm_start;
        model.validate();
    } else {
        std::vector<Vec3> corners = {scene.cloud_bounds.min, scene.cloud_bounds.max};
        model = init_random(cfg, corners, rng);
        model.scene_transform = scene.transform;
    }

    const ParamLayout layout = ParamLayout::of(model);
    std::vector<double> params = pack_params(model);
    const std::vector<std::uint8_t> decay = decay_mask(model);
    OptimizerState state(params.size());

    const double log_delta_lo = std::log(kBlendDeltaMin), log_delta_hi = std::log(kBlendDeltaMax);
    auto project = [&] {
        for (const auto& sl : layout.slices) {
            for (int j = 0; j < sl.n_stored; ++j) {
                Vec3 n{params[sl.normal(j)], params[sl.normal(j) + 1], params[sl.normal(j) + 2]};
                const double len = n.norm();
                if (len > 1e-12) {
                    params[sl.normal(j) + 0] = n.x / len;
                    params[sl.normal(j) + 1] = n.y / len;
                    params[sl.normal(j) + 2] = n.z / len;
                }
            }
            params[sl.log_delta()] =
                std::clamp(params[sl.log_delta()], log_delta_lo, log_delta_hi);
        }
    };

    struct Checkpoint {
        std::vector<double> params;
        OptimizerState state;
        Rng rng;
        int step;
    };
    Checkpoint ckpt{params, state, rng, 0};

    FitTrace trace;
    trace.entries.reserve(cfg.steps);
    double lr_scale = 1.0;
    int divergences = 0;
    int t = 0;
    while (t < cfg.steps) {
        if (t % kCheckpointInterval == 0) ckpt = {params, state, rng, t};

        const SampleSet batch = scene.reservoir.draw(cfg.subsample_fraction, rng);
        GradResult res;
        bool diverged = false;
        try {
            res = grad_total_loss(model, batch, cfg.weights, cfg.union_mode,
                                  cfg.guidance_neighbors);
        } catch (const EvaluationError&) {
            diverged = true;  // overflowed parameters surface as eval errors
        }
        if (diverged || !std::isfinite(res.breakdown.total)) {
            if (++divergences >= 2) throw FitDivergenceError(t, "non-finite loss");
            params = ckpt.params;
            state = ckpt.state;
            rng = ckpt.rng;
            t = ckpt.step;
            trace.entries.resize(t);
            lr_scale *= 0.5;
            unpack_params(params, model);
            continue;
        }

        const double lr = lr_at(t, cfg.steps, cfg.base_lr, cfg.warmup_frac, cfg.halve_at[0],
                                cfg.halve_at[1]) *
                          lr_scale;
        adamw_step(state, params, res.grad, lr, cfg.weight_decay, decay);
        project();
        unpack_params(params, model);
        trace.entries.push_back({t, lr, res.breakdown});
        ++t;
    }

    trace.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
    return {std::move(model), std::move(trace)};
}

}  // namespace csgfit
