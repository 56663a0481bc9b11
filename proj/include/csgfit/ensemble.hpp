// ensemble.hpp - test-time model selection over the primitive-count grid.
//
// Two strategies over the (k_total, k_neg) grid:
//   S->R: warm up every config cheaply, select by the fraction of 3D samples
//         classified incorrectly, refine only the winner.
//   R->S: refine every config, render each, select by depth AbsRel.
// The warmup fit stands in for the neural start point of the full pipeline;
// the selection mechanics are the same.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "csgfit/metrics.hpp"
#include "csgfit/optim.hpp"
#include "csgfit/parallel.hpp"
#include "csgfit/render.hpp"
#include "csgfit/sampling.hpp"

namespace csgfit {

struct ConfigGrid {
    std::vector<std::pair<int, int>> entries;  // (k_total, k_neg)

    std::size_t size() const { return entries.size(); }
};

// Cross product k_total x {0, 4, ..., k_total - 4}. The default totals
// {12, 24, 36} give the 18-entry grid.
inline ConfigGrid config_grid(const std::vector<int>& k_totals = {12, 24, 36}) {
    ConfigGrid g;
    for (int kt : k_totals) {
        if (kt < 8 || kt % 4 != 0)
            throw std::invalid_argument(
                "config_grid: k_total must be >= 8 and divisible by 4, got " +
                std::to_string(kt));
        for (int kn = 0; kn <= kt - 4; kn += 4) g.entries.emplace_back(kt, kn);
    }
    return g;
}

struct FitReport {
    int k_total = 0;
    int k_neg = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    double misclassified = std::numeric_limits<double>::quiet_NaN();  // selection signal (S->R)
    double absrel = std::numeric_limits<double>::quiet_NaN();         // selection signal (R->S)
    double seconds = 0.0;
    CsgModel model;
};

struct EnsembleReport {
    std::string strategy;  // "s2r" or "r2s"
    std::vector<FitReport> candidates;
    int chosen_index = -1;
    double selection_metric = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0.0;

    const FitReport& chosen() const { return candidates.at(chosen_index); }
};

struct EnsembleConfig {
    ConfigGrid grid = config_grid();
    int warmup_steps = 300;
    int refine_steps = 200;
    std::uint64_t scene_seed = 0;
    std::size_t eval_samples = 100000;  // fixed draw for the S->R signal
    FitConfig base;                     // faces, lr, weights, ... shared by all configs
    MarchConfig march;
};

namespace detail {

inline FitConfig config_for(const EnsembleConfig& cfg, int k_total, int k_neg, int steps) {
    FitConfig fc = cfg.base;
    fc.k_total = k_total;
    fc.k_neg = k_neg;
    fc.steps = steps;
    fc.seed = hash_combine(hash_combine(cfg.scene_seed, static_cast<std::uint64_t>(k_total)),
                           static_cast<std::uint64_t>(k_neg));
    return fc;
}

}  // namespace detail

// Fraction of samples whose rounded indicator disagrees with the label.
inline double misclassified_fraction(const CsgModel& m, const SampleSet& s,
                                     UnionMode mode = UnionMode::kHardMax) {
    if (s.empty()) throw std::invalid_argument("misclassified_fraction: empty sample set");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const int pred = csg_indicator(m, s.points[i], mode) > 0.5 ? 1 : 0;
        wrong += pred != s.labels[i] ? 1 : 0;
    }
    return static_cast<double>(wrong) / static_cast<double>(s.size());
}

// Select then refine: warm up all, pick the best sample classifier, refine it.
inline EnsembleReport select_then_refine(const FitScene& scene, const EnsembleConfig& cfg) {
    if (cfg.grid.entries.empty()) throw std::invalid_argument("select_then_refine: empty grid");
    const auto t_begin = std::chrono::steady_clock::now();

    Rng eval_rng(hash_combine(cfg.scene_seed, 0x6576616cULL /* "eval" */));
    const double frac = std::min(
        1.0, static_cast<double>(cfg.eval_samples) / static_cast<double>(scene.reservoir.size()));
    const SampleSet eval_draw = scene.reservoir.draw(frac, eval_rng);

    EnsembleReport report;
    report.strategy = "s2r";
    report.candidates.resize(cfg.grid.size());
    parallel_blocks(cfg.grid.size(), [&](std::size_t i) {
        const auto [kt, kn] = cfg.grid.entries[i];
        FitReport& fr = report.candidates[i];
        fr.k_total = kt;
        fr.k_neg = kn;
        const FitConfig fc = detail::config_for(cfg, kt, kn, cfg.warmup_steps);
        fr.seed = fc.seed;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            auto [model, trace] = fit(scene, fc);
            fr.model = std::move(model);
            fr.final_loss = trace.entries.back().loss.total;
            fr.misclassified = misclassified_fraction(fr.model, eval_draw, fc.union_mode);
            fr.ok = true;
        } catch (const std::exception& e) {
            fr.error = e.what();
        }
        fr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    });

    int best = -1;
    for (std::size_t i = 0; i < report.candidates.size(); ++i) {
        const FitReport& fr = report.candidates[i];
        if (!fr.ok) continue;
        if (best < 0 || fr.misclassified < report.candidates[best].misclassified)
            best = static_cast<int>(i);
    }
    if (best < 0) throw std::runtime_error("select_then_refine: every warmup diverged");

    FitReport& winner = report.candidates[best];
    FitConfig rc = detail::config_for(cfg, winner.k_total, winner.k_neg, cfg.refine_steps);
    rc.seed = hash_combine(winner.seed, 0x726566ULL /* "ref" */);
    const auto t0 = std::chrono::steady_clock::now();
    auto [refined, trace] = fit(scene, rc, winner.model);
    winner.model = std::move(refined);
    winner.final_loss = trace.entries.back().loss.total;
    winner.seconds +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    report.chosen_index = best;
    report.selection_metric = winner.misclassified;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
    return report;
}

// Refine then select: fully fit every config, render, choose by AbsRel
// against the scene's own depth.
inline EnsembleReport refine_then_select(const FitScene& scene, const EnsembleConfig& cfg) {
    if (cfg.grid.entries.empty()) throw std::invalid_argument("refine_then_select: empty grid");
    const auto t_begin = std::chrono::steady_clock::now();

    EnsembleReport report;
    report.strategy = "r2s";
    report.candidates.resize(cfg.grid.size());
    parallel_blocks(cfg.grid.size(), [&](std::size_t i) {
        const auto [kt, kn] = cfg.grid.entries[i];
        FitReport& fr = report.candidates[i];
        fr.k_total = kt;
        fr.k_neg = kn;
        const FitConfig warm_cfg = detail::config_for(cfg, kt, kn, cfg.warmup_steps);
        fr.seed = warm_cfg.seed;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            auto [warm_model, warm_trace] = fit(scene, warm_cfg);
            FitConfig rc = detail::config_for(cfg, kt, kn, cfg.refine_steps);
            rc.seed = hash_combine(warm_cfg.seed, 0x726566ULL);
            auto [model, trace] = fit(scene, rc, warm_model);
            fr.model = std::move(model);
            fr.final_loss = trace.entries.back().loss.total;
            const RenderBuffers buf = render(fr.model, scene.camera, cfg.march);
            fr.absrel = absrel(buf.depth.values, scene.depth.values, scene.depth.valid,
                               buf.miss_depth);
            fr.ok = true;
        } catch (const std::exception& e) {
            fr.error = e.what();
        }
        fr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    });

    int best = -1;
    for (std::size_t i = 0; i < report.candidates.size(); ++i) {
        const FitReport& fr = report.candidates[i];
        if (!fr.ok) continue;
        if (best < 0 || fr.absrel < report.candidates[best].absrel) best = static_cast<int>(i);
    }
    if (best < 0) throw std::runtime_error("refine_then_select: every fit failed");

    report.chosen_index = best;
    report.selection_metric = report.candidates[best].absrel;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
    return report;
}

// Frequency of chosen configs plus the mean selected k_neg/k_total ratio.
struct RatioReport {
    std::vector<std::pair<std::pair<int, int>, int>> histogram;  // config -> count
    double mean_ratio = 0.0;
    int scenes = 0;
};

inline RatioReport ratio_report(const std::vector<EnsembleReport>& reports,
                                const ConfigGrid& grid) {
    if (reports.empty()) throw std::invalid_argument("ratio_report: no reports");
    RatioReport out;
    for (const auto& e : grid.entries) out.histogram.emplace_back(e, 0);
    double ratio_sum = 0.0;
    for (const auto& rep : reports) {
        const FitReport& chosen = rep.chosen();
        for (auto& [conf, count] : out.histogram)
            if (conf.first == chosen.k_total && conf.second == chosen.k_neg) ++count;
        ratio_sum += static_cast<double>(chosen.k_neg) / chosen.k_total;
        ++out.scenes;
    }
    out.mean_ratio = ratio_sum / static_cast<double>(out.scenes);
    return out;
}

}  // namespace csgfit
