// csgfit - command-line driver: synth / fit / render / eval / ensemble.
//
// Exit codes: 0 success, 1 domain error (bad data, diverged fit, bad config
// values), 2 usage error (unknown flags, missing arguments).
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "csgfit/config.hpp"
#include "csgfit/csg_core.hpp"
#include "csgfit/ensemble.hpp"
#include "csgfit/io.hpp"
#include "csgfit/metrics.hpp"
#include "csgfit/optim.hpp"
#include "csgfit/parallel.hpp"
#include "csgfit/render.hpp"
#include "csgfit/sampling.hpp"
#include "csgfit/scenegen.hpp"

namespace fs = std::filesystem;
using namespace csgfit;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void prepare_out_dir(const std::string& out, bool force) {
    if (fs::exists(out) && !fs::is_empty(out) && !force)
        throw std::runtime_error("output directory '" + out +
                                 "' is not empty; pass --force to reuse it");
    fs::create_directories(out);
}

std::pair<int, int> parse_resolution(const std::string& res) {
    const auto x = res.find('x');
    if (x == std::string::npos) throw UsageError("--res expects WxH, e.g. 64x64");
    return {std::stoi(res.substr(0, x)), std::stoi(res.substr(x + 1))};
}

void write_render_outputs(const std::string& dir, const RenderBuffers& buf, const Camera& cam) {
    write_pfm(dir + "/depth.pfm", depth_to_pfm(buf.depth));
    write_pfm(dir + "/normals.pfm", normals_to_pfm(buf.normals, cam.width, cam.height));
    write_label_ppm(dir + "/labels.ppm", buf.labels, buf.hit_mask, cam.width, cam.height);
}

RunConfig load_run_config(const std::string& config_path) {
    RunConfig cfg;
    if (!config_path.empty()) apply_toml(read_toml_file(config_path), cfg);
    return cfg;
}

int cmd_synth(const std::string& scene_name, const std::string& res, const std::string& out,
              bool force) {
    prepare_out_dir(out, force);
    const auto [w, h] = parse_resolution(res);
    const AnalyticScene scene = builtin_scene(scene_name);
    const Camera cam = scene.camera.scaled_to(w, h);
    const AnalyticRender gt = analytic_render(scene, cam);

    write_pfm(out + "/depth.pfm", depth_to_pfm(gt.depth));
    write_camera_json(out + "/camera.json", cam);
    write_pfm(out + "/gt_normals.pfm", normals_to_pfm(gt.normals, w, h));
    write_label_ppm(out + "/gt_labels.ppm", gt.labels, gt.hit, w, h);
    write_ply(out + "/cloud.ply", unproject(gt.depth, cam));

    nlohmann::json j;
    j["version"] = kArtifactVersion;
    j["scene"] = scene_name;
    j["resolution"] = {w, h};
    j["valid_pixels"] = gt.depth.valid_count();
    detail::write_file(out + "/scene.json", j.dump(2) + "\n");
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_fit(RunConfig cfg, const std::string& warm_start_path, bool force) {
    cfg.validate();
    prepare_out_dir(cfg.out_dir, force);
    const DepthImage depth = read_depth_any(cfg.depth_path);
    const Camera cam = cfg.camera_path.empty() ? Camera::default_for(depth.width, depth.height)
                                               : read_camera_json(cfg.camera_path);
    cfg.sampling.seed = cfg.fit.seed;
    const FitScene scene = build_fit_scene(depth, cam, cfg.sampling);

    std::optional<CsgModel> warm;
    if (!warm_start_path.empty()) warm = read_model_json(warm_start_path);
    auto [model, trace] = fit(scene, cfg.fit, warm);

    write_model_json(cfg.out_dir + "/model.json", model);
    write_trace_csv(cfg.out_dir + "/trace.csv", trace);

    nlohmann::json report = report_header(cfg);
    report["final_loss"] = trace.entries.back().loss.total;
    report["wall_seconds"] = trace.wall_seconds;
    report["k_total"] = cfg.fit.k_total;
    report["k_neg"] = cfg.fit.k_neg;
    report["warm_start"] = !warm_start_path.empty();
    detail::write_file(cfg.out_dir + "/report.json", report.dump(2) + "\n");
    std::cout << report.dump() << "\n";
    return 0;
}

int cmd_render(const std::string& model_path, const std::string& camera_path,
               const RunConfig& cfg, const std::string& out, bool force) {
    prepare_out_dir(out, force);
    const CsgModel model = read_model_json(model_path);
    const Camera cam = read_camera_json(camera_path);
    const RenderBuffers buf = render(model, cam, cfg.march);
    write_render_outputs(out, buf, cam);

    std::size_t hits = 0;
    for (auto h : buf.hit_mask) hits += h;
    nlohmann::json j = report_header(cfg);
    j["model"] = model_path;
    j["hit_pixels"] = hits;
    j["miss_depth"] = buf.miss_depth;
    detail::write_file(out + "/render.json", j.dump(2) + "\n");
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_eval(const std::string& pred_depth_path, const std::string& gt_depth_path,
             const std::string& pred_normals_path, const std::string& gt_normals_path,
             const std::string& pred_labels_path, const std::string& gt_seg_path,
             double miss_depth, const std::string& out_path) {
    const DepthImage gt_depth = read_depth_any(gt_depth_path);
    const PfmImage pred_pfm = read_pfm(pred_depth_path);
    if (pred_pfm.channels != 1) throw std::runtime_error("eval: pred depth must be grayscale");
    if (pred_pfm.width != gt_depth.width || pred_pfm.height != gt_depth.height)
        throw std::runtime_error("eval: pred/gt resolution mismatch");

    RenderBuffers pred;
    pred.depth = pfm_to_depth(pred_pfm);
    const std::size_t n = pred.depth.values.size();
    pred.hit_mask.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) pred.hit_mask[i] = pred.depth.valid[i];
    if (miss_depth > 0.0) {
        pred.miss_depth = miss_depth;
    } else {
        double far = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (gt_depth.valid[i]) far = std::max(far, gt_depth.values[i]);
        pred.miss_depth = 2.0 * far;
    }

    std::vector<Vec3> gtn;
    std::vector<std::uint8_t> gtn_mask;
    if (!gt_normals_path.empty() && !pred_normals_path.empty()) {
        const PfmImage gn = read_pfm(gt_normals_path);
        const PfmImage pn = read_pfm(pred_normals_path);
        if (gn.channels != 3 || pn.channels != 3)
            throw std::runtime_error("eval: normals must be 3-channel PFM");
        auto unpack_normals = [n](const PfmImage& img, std::vector<Vec3>& dst,
                                  std::vector<std::uint8_t>& mask) {
            dst.resize(n);
            mask.assign(n, 0);
            for (std::size_t i = 0; i < n; ++i) {
                dst[i] = {img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]};
                mask[i] = dst[i].squared_norm() > 0.5;  // zero vector = no normal
            }
        };
        unpack_normals(gn, gtn, gtn_mask);
        std::vector<std::uint8_t> pn_mask;
        unpack_normals(pn, pred.normals, pn_mask);
        for (std::size_t i = 0; i < n; ++i)
            gtn_mask[i] = gtn_mask[i] && pn_mask[i];
    }

    MetricReport report = evaluate_render(pred, gt_depth, gtn.empty() ? nullptr : &gtn,
                                          gtn_mask.empty() ? nullptr : &gtn_mask, nullptr);
    if (!gt_seg_path.empty() && !pred_labels_path.empty()) {
        // Packed label colors serve directly as region ids (black = miss).
        auto [gt_ids, gt_size] = read_ppm_ids(gt_seg_path);
        auto [pred_ids, pred_size] = read_ppm_ids(pred_labels_path);
        if (gt_size != std::make_pair(gt_depth.width, gt_depth.height) || pred_size != gt_size)
            throw std::runtime_error("eval: segmentation raster size mismatch");
        std::vector<long long> regions(n);
        for (std::size_t i = 0; i < n; ++i) regions[i] = pred_ids[i];
        report.seg_acc = seg_accuracy_ids(regions, gt_ids, gt_depth.valid);
    }

    const nlohmann::json j = metric_report_to_json(report);
    if (!out_path.empty()) detail::write_file(out_path, j.dump(2) + "\n");
    std::cout << metric_report_tsv_header() << "\n"
              << metric_report_tsv(report) << "\n"
              << j.dump() << "\n";
    return 0;
}

int cmd_ensemble(RunConfig cfg, const std::string& strategy, const std::string& grid_spec,
                 int warmup, int refine, const std::string& out_path) {
    const DepthImage depth = read_depth_any(cfg.depth_path);
    const Camera cam = cfg.camera_path.empty() ? Camera::default_for(depth.width, depth.height)
                                               : read_camera_json(cfg.camera_path);
    cfg.sampling.seed = cfg.fit.seed;
    const FitScene scene = build_fit_scene(depth, cam, cfg.sampling);

    std::vector<int> k_totals;
    std::stringstream ss(grid_spec);
    std::string item;
    while (std::getline(ss, item, ',')) k_totals.push_back(std::stoi(item));

    EnsembleConfig ecfg;
    ecfg.grid = config_grid(k_totals);
    ecfg.warmup_steps = warmup;
    ecfg.refine_steps = refine;
    ecfg.scene_seed = cfg.fit.seed;
    ecfg.base = cfg.fit;
    ecfg.march = cfg.march;

    EnsembleReport rep;
    if (strategy == "s2r") rep = select_then_refine(scene, ecfg);
    else if (strategy == "r2s") rep = refine_then_select(scene, ecfg);
    else throw UsageError("--strategy must be s2r or r2s");

    nlohmann::json j = report_header(cfg);
    j.update(ensemble_report_to_json(rep));
    if (!out_path.empty()) detail::write_file(out_path, j.dump(2) + "\n");
    std::cout << j.dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CSG primitive fitting: depth images to unions of smoothed convex polytopes "
                 "minus negative polytopes"};
    app.require_subcommand(1);
    app.fallthrough();  // top-level options may follow the subcommand
    int workers = 0;
    app.add_option("--workers", workers, "worker thread cap (also CSGFIT_WORKERS)");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic scene with ground truth");
    std::string scene_name, res = "64x64", out_dir;
    bool force = false;
    synth->add_option("--scene", scene_name, "builtin scene name")->required();
    synth->add_option("--res", res, "resolution WxH");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_flag("--force", force, "allow writing into a non-empty directory");

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "fit primitives to a depth image");
    std::string depth_path, camera_path, config_path, warm_start;
    int k_total = 12, k_neg = 0, faces = 6, steps = 2000;
    std::uint64_t seed = 0;
    double sigma = kDefaultSigma;
    fit_cmd->add_option("--depth", depth_path, "input depth (PFM or CDPT)")->required();
    fit_cmd->add_option("--camera", camera_path, "camera JSON (defaults assumed if absent)");
    fit_cmd->add_option("--config", config_path, "TOML config");
    fit_cmd->add_option("--k-total", k_total, "total primitive count");
    fit_cmd->add_option("--k-neg", k_neg, "negative primitive count");
    fit_cmd->add_option("--faces", faces, "faces per polytope");
    fit_cmd->add_option("--steps", steps, "descent steps");
    fit_cmd->add_option("--seed", seed, "random seed");
    fit_cmd->add_option("--sigma", sigma, "indicator sharpness");
    fit_cmd->add_option("--warm-start", warm_start, "model JSON to polish");
    fit_cmd->add_option("--out", out_dir, "output directory")->required();
    fit_cmd->add_flag("--force", force, "allow writing into a non-empty directory");

    // render
    auto* render_cmd = app.add_subcommand("render", "raymarch a model to depth/normals/labels");
    std::string model_path;
    double min_step = 0.001;
    render_cmd->add_option("--model", model_path, "model JSON")->required();
    render_cmd->add_option("--camera", camera_path, "camera JSON")->required();
    render_cmd->add_option("--min-step", min_step, "march minimum step (normalized units)");
    render_cmd->add_option("--config", config_path, "TOML config");
    render_cmd->add_option("--out", out_dir, "output directory")->required();
    render_cmd->add_flag("--force", force, "allow writing into a non-empty directory");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "score rendered buffers against ground truth");
    std::string pred_depth, gt_depth, pred_normals, gt_normals, pred_labels, gt_seg, out_json;
    double miss_depth = 0.0;
    eval_cmd->add_option("--pred-depth", pred_depth, "predicted depth PFM")->required();
    eval_cmd->add_option("--gt-depth", gt_depth, "ground-truth depth (PFM or CDPT)")->required();
    eval_cmd->add_option("--pred-normals", pred_normals, "predicted normals PFM");
    eval_cmd->add_option("--gt-normals", gt_normals, "ground-truth normals PFM");
    eval_cmd->add_option("--pred-labels", pred_labels, "predicted labels PPM");
    eval_cmd->add_option("--gt-seg", gt_seg, "ground-truth segmentation PPM");
    eval_cmd->add_option("--miss-depth", miss_depth,
                         "depth charged to ray misses (default: 2x max GT depth)");
    eval_cmd->add_option("--out", out_json, "metric report JSON path");

    // ensemble
    auto* ens_cmd = app.add_subcommand("ensemble", "fit a config grid and select the best");
    std::string strategy = "r2s", grid_spec = "12,24,36";
    int warmup = 300, refine = 200;
    ens_cmd->add_option("--depth", depth_path, "input depth (PFM or CDPT)")->required();
    ens_cmd->add_option("--camera", camera_path, "camera JSON");
    ens_cmd->add_option("--config", config_path, "TOML config");
    ens_cmd->add_option("--strategy", strategy, "s2r or r2s");
    ens_cmd->add_option("--grid", grid_spec, "comma-separated k_total list");
    ens_cmd->add_option("--warmup", warmup, "warmup steps per config");
    ens_cmd->add_option("--refine", refine, "refinement steps");
    ens_cmd->add_option("--seed", seed, "scene seed");
    ens_cmd->add_option("--sigma", sigma, "indicator sharpness");
    ens_cmd->add_option("--out", out_json, "report JSON path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (workers > 0) set_worker_count(workers);
        RunConfig cfg = load_run_config(config_path);
        cfg.depth_path = depth_path;
        cfg.camera_path = camera_path;
        cfg.out_dir = out_dir;
        if (*synth) return cmd_synth(scene_name, res, out_dir, force);
        if (*fit_cmd) {
            // CLI flags override the TOML values.
            if (fit_cmd->count("--k-total")) cfg.fit.k_total = k_total;
            if (fit_cmd->count("--k-neg")) cfg.fit.k_neg = k_neg;
            if (fit_cmd->count("--faces")) cfg.fit.faces = faces;
            if (fit_cmd->count("--steps")) cfg.fit.steps = steps;
            if (fit_cmd->count("--seed")) cfg.fit.seed = seed;
            if (fit_cmd->count("--sigma")) cfg.fit.sigma = sigma;
            return cmd_fit(cfg, warm_start, force);
        }
        if (*render_cmd) {
            if (render_cmd->count("--min-step")) cfg.march.min_step = min_step;
            return cmd_render(model_path, camera_path, cfg, out_dir, force);
        }
        if (*eval_cmd)
            return cmd_eval(pred_depth, gt_depth, pred_normals, gt_normals, pred_labels, gt_seg,
                            miss_depth, out_json);
        if (*ens_cmd) {
            if (ens_cmd->count("--seed")) cfg.fit.seed = seed;
            if (ens_cmd->count("--sigma")) cfg.fit.sigma = sigma;
            return cmd_ensemble(cfg, strategy, grid_spec, warmup, refine, out_json);
        }
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
