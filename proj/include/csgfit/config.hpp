// config.hpp - run configuration: TOML sections applied onto the module
// configs, plus the reproducibility header embedded in every report.
#pragma once

#include <cstdint>
#include <string>

#include "csgfit/ensemble.hpp"
#include "csgfit/io.hpp"
#include "csgfit/optim.hpp"
#include "csgfit/parallel.hpp"
#include "csgfit/sampling.hpp"

namespace csgfit {

struct RunConfig {
    FitConfig fit;
    MarchConfig march;
    SamplingConfig sampling;
    std::string depth_path;
    std::string camera_path;
    std::string out_dir;
    int workers = 0;  // 0 = library default

    void validate() const { fit.validate(); march.validate(); }
};

namespace detail {

template <typename Fn>
void for_section(const TomlTable& t, const std::string& name, Fn&& fn) {
    const auto it = t.find(name);
    if (it == t.end()) return;
    for (const auto& [key, value] : it->second) fn(key, value);
}

}  // namespace detail

// Applies [loss], [fit], [march], and [sampling] sections. Unknown keys are
// rejected so typos fail loudly.
inline void apply_toml(const TomlTable& t, RunConfig& cfg) {
    for (const auto& [section, entries] : t)
        if (section != "loss" && section != "fit" && section != "march" && section != "sampling")
            throw std::runtime_error("config: unknown section [" + section + "]");

    detail::for_section(t, "loss", [&](const std::string& k, const TomlValue& v) {
        LossWeights& w = cfg.fit.weights;
        if (k == "w_sample") w.w_sample = detail::toml_number(v, k);
        else if (k == "w_overlap") w.w_overlap = detail::toml_number(v, k);
        else if (k == "w_unique") w.w_unique = detail::toml_number(v, k);
        else if (k == "w_guidance") w.w_guidance = detail::toml_number(v, k);
        else if (k == "w_localization") w.w_localization = detail::toml_number(v, k);
        else throw std::runtime_error("config: unknown [loss] key '" + k + "'");
    });

    detail::for_section(t, "fit", [&](const std::string& k, const TomlValue& v) {
        FitConfig& f = cfg.fit;
        if (k == "k_total") f.k_total = static_cast<int>(detail::toml_int(v, k));
        else if (k == "k_neg") f.k_neg = static_cast<int>(detail::toml_int(v, k));
        else if (k == "faces") f.faces = static_cast<int>(detail::toml_int(v, k));
        else if (k == "symmetric") f.symmetric = detail::toml_bool(v, k);
        else if (k == "steps") f.steps = static_cast<int>(detail::toml_int(v, k));
        else if (k == "base_lr") f.base_lr = detail::toml_number(v, k);
        else if (k == "warmup_frac") f.warmup_frac = detail::toml_number(v, k);
        else if (k == "halve_at") {
            const auto& arr = std::get<std::vector<double>>(v);
            if (arr.size() != 2) throw std::runtime_error("config: halve_at needs 2 entries");
            f.halve_at[0] = arr[0];
            f.halve_at[1] = arr[1];
        } else if (k == "weight_decay") f.weight_decay = detail::toml_number(v, k);
        else if (k == "subsample_fraction") f.subsample_fraction = detail::toml_number(v, k);
        else if (k == "sigma") f.sigma = detail::toml_number(v, k);
        else if (k == "seed") f.seed = static_cast<std::uint64_t>(detail::toml_int(v, k));
        else if (k == "smooth_union")
            f.union_mode = detail::toml_bool(v, k) ? UnionMode::kSmooth : UnionMode::kHardMax;
        else if (k == "guidance_neighbors")
            f.guidance_neighbors = static_cast<int>(detail::toml_int(v, k));
        else throw std::runtime_error("config: unknown [fit] key '" + k + "'");
    });

    detail::for_section(t, "march", [&](const std::string& k, const TomlValue& v) {
        MarchConfig& m = cfg.march;
        if (k == "min_step") m.min_step = detail::toml_number(v, k);
        else if (k == "step_factor") m.step_factor = detail::toml_number(v, k);
        else if (k == "max_steps") m.max_steps = static_cast<int>(detail::toml_int(v, k));
        else if (k == "halving_iters") m.halving_iters = static_cast<int>(detail::toml_int(v, k));
        else if (k == "t_max") m.t_max = detail::toml_number(v, k);
        else throw std::runtime_error("config: unknown [march] key '" + k + "'");
    });

    detail::for_section(t, "sampling", [&](const std::string& k, const TomlValue& v) {
        SamplingConfig& s = cfg.sampling;
        if (k == "epsilon") s.epsilon = detail::toml_number(v, k);
        else if (k == "freespace_count")
            s.freespace_count = static_cast<std::size_t>(detail::toml_int(v, k));
        else throw std::runtime_error("config: unknown [sampling] key '" + k + "'");
    });
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["fit"] = {{"k_total", cfg.fit.k_total},
                {"k_neg", cfg.fit.k_neg},
                {"faces", cfg.fit.faces},
                {"symmetric", cfg.fit.symmetric},
                {"steps", cfg.fit.steps},
                {"base_lr", cfg.fit.base_lr},
                {"warmup_frac", cfg.fit.warmup_frac},
                {"halve_at", {cfg.fit.halve_at[0], cfg.fit.halve_at[1]}},
                {"weight_decay", cfg.fit.weight_decay},
                {"subsample_fraction", cfg.fit.subsample_fraction},
                {"sigma", cfg.fit.sigma},
                {"seed", cfg.fit.seed},
                {"smooth_union", cfg.fit.union_mode == UnionMode::kSmooth},
                {"guidance_neighbors", cfg.fit.guidance_neighbors}};
    j["loss"] = {{"w_sample", cfg.fit.weights.w_sample},
                 {"w_overlap", cfg.fit.weights.w_overlap},
                 {"w_unique", cfg.fit.weights.w_unique},
                 {"w_guidance", cfg.fit.weights.w_guidance},
                 {"w_localization", cfg.fit.weights.w_localization}};
    j["march"] = {{"min_step", cfg.march.min_step},
                  {"step_factor", cfg.march.step_factor},
                  {"max_steps", cfg.march.max_steps},
                  {"halving_iters", cfg.march.halving_iters},
                  {"t_max", cfg.march.t_max}};
    j["sampling"] = {{"epsilon", cfg.sampling.epsilon},
                     {"freespace_count", cfg.sampling.freespace_count}};
    j["paths"] = {{"depth", cfg.depth_path}, {"camera", cfg.camera_path}, {"out", cfg.out_dir}};
    return j;
}

// Reproducibility header carried by every persisted report.
inline nlohmann::json report_header(const RunConfig& cfg) {
    nlohmann::json j;
    j["version"] = kArtifactVersion;
    j["seed"] = cfg.fit.seed;
    j["workers"] = worker_count();
    j["config"] = run_config_to_json(cfg);
    return j;
}

inline void write_trace_csv(const std::string& path, const FitTrace& trace) {
    std::ostringstream out;
    out << "step,lr,total,sample,overlap,unique,guidance,localization\n";
    out.precision(12);
    for (const auto& e : trace.entries)
        out << e.step << "," << e.lr << "," << e.loss.total << "," << e.loss.sample << ","
            << e.loss.overlap << "," << e.loss.unique << "," << e.loss.guidance << ","
            << e.loss.localization << "\n";
    detail::write_file(path, out.str());
}

inline nlohmann::json ensemble_report_to_json(const EnsembleReport& rep) {
    nlohmann::json j;
    j["strategy"] = rep.strategy;
    j["chosen_index"] = rep.chosen_index;
    j["selection_metric"] = rep.selection_metric;
    j["wall_seconds"] = rep.wall_seconds;
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : rep.candidates) {
        nlohmann::json cj;
        cj["k_total"] = c.k_total;
        cj["k_neg"] = c.k_neg;
        cj["seed"] = c.seed;
        cj["ok"] = c.ok;
        if (!c.ok) cj["error"] = c.error;
        auto put = [&cj](const char* key, double v) {
            if (std::isnan(v)) cj[key] = nullptr;
            else cj[key] = v;
        };
        put("final_loss", c.final_loss);
        put("misclassified", c.misclassified);
        put("absrel", c.absrel);
        cj["seconds"] = c.seconds;
        cands.push_back(std::move(cj));
    }
    j["candidates"] = std::move(cands);
    if (rep.chosen_index >= 0) {
        j["chosen"] = {{"k_total", rep.chosen().k_total}, {"k_neg", rep.chosen().k_neg}};
    }
    // Histogram-ready rows: one per grid config, 1 where chosen.
    nlohmann::json hist = nlohmann::json::array();
    for (std::size_t i = 0; i < rep.candidates.size(); ++i)
        hist.push_back({{"k_total", rep.candidates[i].k_total},
                        {"k_neg", rep.candidates[i].k_neg},
                        {"chosen", static_cast<int>(i) == rep.chosen_index ? 1 : 0}});
    j["histogram"] = std::move(hist);
    return j;
}

}  // namespace csgfit
