// Single entry point for the toolkit: synthetic data generation, mesh
// curation, 4D fitting, rendering, toy denoiser training, evaluation, and
// the built-in selftest. Every subcommand is deterministic given its seed,
// config, and inputs, and drops a run manifest describing what it did.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "s4tk/checkpoint.hpp"
#include "s4tk/config.hpp"
#include "s4tk/curation.hpp"
#include "s4tk/diffusion.hpp"
#include "s4tk/dyn_nerf.hpp"
#include "s4tk/image_matrix.hpp"
#include "s4tk/metrics.hpp"
#include "s4tk/optim4d.hpp"
#include "s4tk/sdf_scene.hpp"
#include "s4tk/selftest.hpp"
#include "s4tk/tensor_io.hpp"
#include "s4tk/toy_train.hpp"
#include "s4tk/version.hpp"
#include "vendor/CLI11.hpp"
#include "vendor/json.hpp"

namespace {

using namespace s4tk;
using core::Tape;
using core::Tensor;

// ---------------------------------------------------------------------------
// run manifests
// ---------------------------------------------------------------------------

struct RunContext {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    uint64_t seed = 0;
    int threads = 1;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    std::vector<std::string> outputs;
};

void write_run_manifest(const std::string& dir, const RunContext& ctx) {
    nlohmann::json j;
    j["command"] = ctx.command;
    j["config_hash"] = cfg::config_hash(ctx.config);
    j["config"] = ctx.config;
    j["seed"] = ctx.seed;
    j["threads"] = ctx.threads;
    j["toolkit_version"] = kVersion;
    j["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.t0).count();
    j["outputs"] = ctx.outputs;
    std::filesystem::create_directories(dir);
    ckpt::detail::write_atomic(dir + "/run_manifest.json", j.dump(2) + "\n");
}

void write_json_atomic(const std::string& path, const nlohmann::json& j) {
    if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
    ckpt::detail::write_atomic(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// config adapters
// ---------------------------------------------------------------------------

nerf::DynNerfConfig nerf_config_from(const nlohmann::json& j, int frames) {
    nerf::DynNerfConfig c;
    c.frames = frames;
    c.grid.levels = cfg::get_or(j, "grid_levels", c.grid.levels);
    c.grid.features_per_level = cfg::get_or(j, "grid_features_per_level", c.grid.features_per_level);
    c.grid.table_size_log2 = cfg::get_or(j, "grid_table_size_log2", c.grid.table_size_log2);
    c.grid.base_resolution = cfg::get_or(j, "grid_base_resolution", c.grid.base_resolution);
    c.grid.per_level_scale = cfg::get_or(j, "grid_per_level_scale", c.grid.per_level_scale);
    c.time_embed_dim = cfg::get_or(j, "time_embed_dim", c.time_embed_dim);
    c.hidden_width = cfg::get_or(j, "hidden_width", c.hidden_width);
    c.posenc_freqs = cfg::get_or(j, "posenc_freqs", c.posenc_freqs);
    return c;
}

nlohmann::json nerf_config_to_json(const nerf::DynNerfConfig& c) {
    return {{"grid_levels", c.grid.levels},
            {"grid_features_per_level", c.grid.features_per_level},
            {"grid_table_size_log2", c.grid.table_size_log2},
            {"grid_base_resolution", c.grid.base_resolution},
            {"grid_per_level_scale", c.grid.per_level_scale},
            {"frames", c.frames},
            {"time_embed_dim", c.time_embed_dim},
            {"hidden_width", c.hidden_width},
            {"posenc_freqs", c.posenc_freqs}};
}

optim::OptimConfig optim_config_from(const nlohmann::json& j) {
    optim::OptimConfig c;
    c.lr = cfg::get_or(j, "lr", c.lr);
    c.stage1_iters = cfg::get_or(j, "stage1_iters", c.stage1_iters);
    c.stage2_iters = cfg::get_or(j, "stage2_iters", c.stage2_iters);
    c.stage2_noise_step = cfg::get_or(j, "stage2_noise_step", c.stage2_noise_step);
    c.rays_per_step = cfg::get_or(j, "rays_per_step", c.rays_per_step);
    c.patch_size = cfg::get_or(j, "patch_size", c.patch_size);
    c.frames_per_step = cfg::get_or(j, "frames_per_step", c.frames_per_step);
    c.render_samples = cfg::get_or(j, "render_samples", c.render_samples);
    c.lambda_mse = cfg::get_or(j, "lambda_mse", c.lambda_mse);
    c.lambda_lpips = cfg::get_or(j, "lambda_lpips", c.lambda_lpips);
    c.lambda_mask = cfg::get_or(j, "lambda_mask", c.lambda_mask);
    c.lambda_normal = cfg::get_or(j, "lambda_normal", c.lambda_normal);
    c.lambda_depth_smooth = cfg::get_or(j, "lambda_depth_smooth", c.lambda_depth_smooth);
    c.lambda_normal_smooth = cfg::get_or(j, "lambda_normal_smooth", c.lambda_normal_smooth);
    c.view_jitter = cfg::get_or(j, "view_jitter", c.view_jitter);
    c.seed = cfg::get_or(j, "seed", c.seed);
    return c;
}

// ---------------------------------------------------------------------------
// image/tensor bridging
// ---------------------------------------------------------------------------

Tensor image_to_tensor(const img::ImageF& im) {
    return Tensor::constant({im.height, im.width, im.channels}, im.data);
}

img::ImageF tensor_to_image(const Tensor& t) {
    if (t.rank() != 3) throw DimensionError("image tensor must be rank 3, got " + core::shape_str(t.shape()));
    img::ImageF im(t.dim(0), t.dim(1), t.dim(2));
    im.data = t.data();
    return im;
}

std::string aux_filename(int view, int frame, const char* kind) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "v%02d_f%03d_%s.bin", view, frame, kind);
    return buf;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string scene = "demo";
    std::string out;
    int views = 4, frames = 8, size = 64;
    float elevation = 10.0f;
    bool no_aux = false;
};

int run_synth(const SynthArgs& a) {
    RunContext ctx;
    ctx.command = "synth";
    ctx.config = {{"scene", a.scene},   {"views", a.views},         {"frames", a.frames},
                  {"size", a.size},     {"elevation", a.elevation}, {"aux", !a.no_aux}};

    sdf::SdfScene scene = a.scene == "demo" ? sdf::make_demo_scene() : sdf::load_scene_spec(a.scene);
    sdf::PseudoDataset ds =
        sdf::render_pseudo_dataset(scene, a.views, a.frames, a.size, a.size, a.elevation);
    img::save_image_matrix(a.out, ds.images);
    ctx.outputs.push_back(a.out);

    if (!a.no_aux) {
        for (int v = 0; v < a.views; ++v)
            for (int f = 0; f < a.frames; ++f) {
                core::save_tensor(a.out + "/" + aux_filename(v, f, "depth"),
                                  image_to_tensor(ds.depth_cell(v, f)));
                core::save_tensor(a.out + "/" + aux_filename(v, f, "normal"),
                                  image_to_tensor(ds.normal_cell(v, f)));
            }
    }
    write_run_manifest(a.out, ctx);
    std::printf("synth: wrote %dx%d image matrix (%dpx) to %s\n", a.views, a.frames, a.size,
                a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// curate
// ---------------------------------------------------------------------------

struct CurateArgs {
    std::string meshes;
    std::string out;
    std::string report;
    float quantile = 0.25f;
    float motion_threshold = 0.02f;
    float scale_tolerance = 1.5f;
};

int run_curate(const CurateArgs& a) {
    RunContext ctx;
    ctx.command = "curate";
    ctx.config = {{"meshes", a.meshes},
                  {"quantile", a.quantile},
                  {"motion_threshold", a.motion_threshold},
                  {"scale_tolerance", a.scale_tolerance}};

    std::ifstream mf(a.meshes);
    if (!mf) throw IoError("cannot open mesh manifest: " + a.meshes);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad mesh manifest " + a.meshes + ": " + e.what());
    }
    if (!manifest.contains("objects") || !manifest["objects"].is_array())
        throw IoError("mesh manifest must contain an 'objects' array");

    curate::CurationConfig ccfg;
    ccfg.static_quantile = a.quantile;
    ccfg.motion_threshold = a.motion_threshold;
    ccfg.scale_tolerance = a.scale_tolerance;

    std::filesystem::path base = std::filesystem::path(a.meshes).parent_path();
    std::vector<std::pair<std::string, curate::CurationReport>> rows;
    int accepted = 0;
    for (const auto& obj : manifest["objects"]) {
        std::string id = obj.value("id", "");
        std::string dir = obj.value("dir", "");
        if (id.empty() || dir.empty())
            throw IoError("manifest object needs both 'id' and 'dir'");
        std::filesystem::path mesh_dir =
            std::filesystem::path(dir).is_absolute() ? std::filesystem::path(dir) : base / dir;
        curate::AnimatedMesh mesh = mesh::load_animated_mesh(mesh_dir.string());
        auto [rectified, report] = curate::rectify(mesh, ccfg);
        if (report.accepted) {
            std::string out_dir = a.out + "/" + id;
            mesh::save_animated_mesh(out_dir, rectified);
            ctx.outputs.push_back(out_dir);
            ++accepted;
        }
        rows.emplace_back(id, report);
    }
    std::string report_path = a.report.empty() ? a.out + "/report.csv" : a.report;
    if (auto parent = std::filesystem::path(report_path).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
    curate::write_curation_csv(report_path, rows);
    ctx.outputs.push_back(report_path);
    write_run_manifest(a.out, ctx);
    std::printf("curate: %d/%zu objects accepted, report at %s\n", accepted, rows.size(),
                report_path.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// fit4d
// ---------------------------------------------------------------------------

// Input directories carry RGBA cells; depth/normal tensors ride alongside
// when the source renderer produced them. Without normals the visibility
// weights fall back to the silhouette and the normal losses switch off.
optim::PseudoGroundTruth load_ground_truth(const std::string& dir, optim::OptimConfig& ocfg,
                                           const cam::OrbitalCamera& camera) {
    optim::PseudoGroundTruth gt;
    gt.matrix = img::load_image_matrix(dir);

    bool have_normals = true;
    for (int v = 0; v < gt.matrix.views && have_normals; ++v)
        for (int f = 0; f < gt.matrix.frames && have_normals; ++f)
            have_normals = std::filesystem::exists(dir + "/" + aux_filename(v, f, "normal"));

    if (have_normals) {
        for (int v = 0; v < gt.matrix.views; ++v)
            for (int f = 0; f < gt.matrix.frames; ++f) {
                img::ImageF n = tensor_to_image(core::load_tensor(dir + "/" + aux_filename(v, f, "normal")));
                gt.normals.push_back(n);
                gt.visibility.push_back(
                    optim::visibility_map(gt.matrix.poses[static_cast<size_t>(v)], n, camera));
            }
    } else {
        if (ocfg.lambda_normal > 0.0f || ocfg.lambda_normal_smooth > 0.0f)
            std::fprintf(stderr,
                         "fit4d: input has no normal maps; disabling normal losses "
                         "(lambda_normal, lambda_normal_smooth)\n");
        ocfg.lambda_normal = 0.0f;
        ocfg.lambda_normal_smooth = 0.0f;
        for (const auto& cell : gt.matrix.cells) {
            img::ImageF w(cell.height, cell.width, 1);
            for (int r = 0; r < cell.height; ++r)
                for (int c = 0; c < cell.width; ++c) {
                    float alpha = cell.at(r, c, 3);
                    w.at(r, c, 0) = alpha <= 0.0f ? 0.0f : std::min(alpha, 1.0f - 1e-3f);
                }
            gt.visibility.push_back(std::move(w));
        }
    }
    gt.validate();
    return gt;
}

void write_loss_csv(const std::string& path, const std::vector<optim::LossBreakdown>& stage1,
                    const std::vector<optim::LossBreakdown>& stage2) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write: " + path);
    f << "stage,step,total,mse,lpips,mask,normal,depth_smooth,normal_smooth\n";
    auto dump = [&f](int stage, const std::vector<optim::LossBreakdown>& rows) {
        for (size_t i = 0; i < rows.size(); ++i) {
            const auto& b = rows[i];
            f << stage << "," << i << "," << b.total << "," << b.mse << "," << b.lpips << "," << b.mask
              << "," << b.normal << "," << b.depth_smooth << "," << b.normal_smooth << "\n";
        }
    };
    dump(1, stage1);
    dump(2, stage2);
    if (!f) throw IoError("short write: " + path);
}

std::vector<std::pair<std::string, Tensor>> model_tensors(const nerf::DynNerfModel& model) {
    return model.named_parameters();
}

struct Fit4dArgs {
    std::string input;
    std::string config;
    std::string refiner = "identity";
    std::string out;
    std::string denoiser_checkpoint;
    double oracle_blend = -1.0; // <0 means "use config / default"
    uint64_t seed = 0;
    bool seed_set = false;
};

int run_fit4d(const Fit4dArgs& a) {
    RunContext ctx;
    ctx.command = "fit4d";
    nlohmann::json config =
        a.config.empty() ? nlohmann::json::object() : cfg::load_config(a.config);
    ctx.config = config;

    optim::OptimConfig ocfg = optim_config_from(config.value("optimize", nlohmann::json::object()));
    if (a.seed_set) ocfg.seed = a.seed;
    ctx.seed = ocfg.seed;
    ocfg.validate();

    cam::OrbitalCamera camera;
    optim::PseudoGroundTruth gt = load_ground_truth(a.input, ocfg, camera);
    const int views = gt.matrix.views, frames = gt.matrix.frames;
    const int H = gt.matrix.cells[0].height, W = gt.matrix.cells[0].width;

    Tape tape;
    nerf::DynNerfConfig mcfg =
        nerf_config_from(config.value("model", nlohmann::json::object()), frames);
    Rng init_rng = Rng(ocfg.seed).stream("model-init");
    nerf::DynNerfModel model = nerf::DynNerfModel::init(tape, mcfg, init_rng);

    float blend = a.oracle_blend >= 0.0
                      ? static_cast<float>(a.oracle_blend)
                      : cfg::get_or(config.value("refiner", nlohmann::json::object()), "blend", 0.5f);
    optim::Refiner refiner;
    if (a.refiner == "identity") {
        refiner = optim::identity_refiner();
    } else if (a.refiner == "oracle") {
        refiner = optim::oracle_refiner(gt.matrix, blend);
    } else if (a.refiner == "toy-denoiser") {
        diff::ToyDenoiserConfig dcfg;
        dcfg.channels = 4;
        diff::ToyDenoiserParams params;
        if (!a.denoiser_checkpoint.empty()) {
            ckpt::Checkpoint c = ckpt::load_checkpoint(a.denoiser_checkpoint);
            Rng drng = Rng(ocfg.seed).stream("denoiser-init");
            params = diff::ToyDenoiserParams::init(tape, dcfg, drng);
            ckpt::restore_parameters(c, params.named_parameters());
        } else {
            Rng drng = Rng(ocfg.seed).stream("denoiser-init");
            params = diff::ToyDenoiserParams::init(tape, dcfg, drng);
        }
        refiner = optim::toy_denoiser_refiner(params, dcfg, ocfg.seed);
    } else {
        throw ConfigError("unknown refiner '" + a.refiner + "' (identity | oracle | toy-denoiser)");
    }

    nerf::RenderConfig eval_rc = optim::eval_render_config(ocfg);

    std::printf("fit4d: stage 1, %d steps on %dx%d grid at %dx%d\n", ocfg.stage1_iters, views, frames,
                H, W);
    std::vector<optim::LossBreakdown> stage1_terms, stage2_terms;
    optim::optimize_stage(model, gt, ocfg, 1, camera, &stage1_terms);

    optim::PseudoGroundTruth stage1_targets = optim::render_model_targets(
        model, gt.matrix.poses, frames, H, W, camera, eval_rc);
    stage1_targets.matrix.frame_indices = gt.matrix.frame_indices;
    img::save_image_matrix(a.out + "/stage1_renders", stage1_targets.matrix);
    ctx.outputs.push_back(a.out + "/stage1_renders");
    double stage1_mse = metrics::matrix_mse(stage1_targets.matrix, gt.matrix);

    std::printf("fit4d: refining targets (%s, noise step %d)\n", a.refiner.c_str(),
                ocfg.stage2_noise_step);
    optim::PseudoGroundTruth refined =
        optim::stage2_refine_targets(model, gt.matrix.poses, frames, H, W, refiner,
                                     ocfg.stage2_noise_step, camera, eval_rc);
    refined.matrix.frame_indices = gt.matrix.frame_indices;

    std::printf("fit4d: stage 2, %d steps\n", ocfg.stage2_iters);
    optim::optimize_stage(model, refined, ocfg, 2, camera, &stage2_terms);

    optim::PseudoGroundTruth stage2_targets = optim::render_model_targets(
        model, gt.matrix.poses, frames, H, W, camera, eval_rc);
    stage2_targets.matrix.frame_indices = gt.matrix.frame_indices;
    img::save_image_matrix(a.out + "/stage2_renders", stage2_targets.matrix);
    ctx.outputs.push_back(a.out + "/stage2_renders");
    double stage2_mse = metrics::matrix_mse(stage2_targets.matrix, gt.matrix);

    nlohmann::json meta;
    meta["kind"] = "dyn-nerf";
    meta["model"] = nerf_config_to_json(mcfg);
    meta["seed"] = ocfg.seed;
    meta["render_samples"] = ocfg.render_samples;
    meta["stage1_mse_vs_input"] = stage1_mse;
    meta["stage2_mse_vs_input"] = stage2_mse;
    ckpt::save_checkpoint(a.out + "/checkpoint", model_tensors(model), meta);
    ctx.outputs.push_back(a.out + "/checkpoint");

    write_loss_csv(a.out + "/loss.csv", stage1_terms, stage2_terms);
    ctx.outputs.push_back(a.out + "/loss.csv");
    write_run_manifest(a.out, ctx);
    std::printf("fit4d: MSE vs input — stage 1: %.6f, stage 2: %.6f\n", stage1_mse, stage2_mse);
    return 0;
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

struct RenderArgs {
    std::string checkpoint;
    std::string out;
    int views = 4, frames = 0, size = 64, samples = 0;
    float elevation = 10.0f;
    std::string azimuths; // comma-separated override
};

int run_render(const RenderArgs& a) {
    RunContext ctx;
    ctx.command = "render";
    ctx.config = {{"checkpoint", a.checkpoint}, {"views", a.views},   {"frames", a.frames},
                  {"size", a.size},             {"samples", a.samples}, {"elevation", a.elevation},
                  {"azimuths", a.azimuths}};

    ckpt::Checkpoint c = ckpt::load_checkpoint(a.checkpoint);
    if (c.meta.value("kind", "") != "dyn-nerf")
        throw ContractError("checkpoint at " + a.checkpoint + " is not a dyn-nerf model");
    int ckpt_frames = cfg::get_or(c.meta["model"], "frames", 1);
    int frames = a.frames > 0 ? a.frames : ckpt_frames;
    if (frames > ckpt_frames)
        throw ConfigError("checkpoint holds " + std::to_string(ckpt_frames) + " frames, requested " +
                          std::to_string(frames));

    Tape tape;
    nerf::DynNerfConfig mcfg = nerf_config_from(c.meta["model"], ckpt_frames);
    Rng rng(0); // placeholder weights, immediately overwritten
    nerf::DynNerfModel model = nerf::DynNerfModel::init(tape, mcfg, rng);
    ckpt::restore_parameters(c, model.named_parameters());

    std::vector<cam::CameraPose> poses;
    if (!a.azimuths.empty()) {
        std::stringstream ss(a.azimuths);
        std::string part;
        while (std::getline(ss, part, ','))
            poses.push_back({a.elevation, std::stof(part)});
    } else {
        for (int v = 0; v < a.views; ++v)
            poses.push_back({a.elevation, 360.0f * static_cast<float>(v) / static_cast<float>(a.views)});
    }
    if (poses.empty()) throw ConfigError("render needs at least one pose");

    nerf::RenderConfig rc;
    rc.jitter = false;
    rc.n_samples = a.samples > 0 ? a.samples : cfg::get_or(c.meta, "render_samples", 64);

    cam::OrbitalCamera camera;
    optim::PseudoGroundTruth rendered =
        optim::render_model_targets(model, poses, frames, a.size, a.size, camera, rc);
    img::save_image_matrix(a.out, rendered.matrix);
    for (int v = 0; v < rendered.matrix.views; ++v)
        for (int f = 0; f < rendered.matrix.frames; ++f)
            core::save_tensor(a.out + "/" + aux_filename(v, f, "normal"),
                              image_to_tensor(rendered.normal_cell(v, f)));
    ctx.outputs.push_back(a.out);
    write_run_manifest(a.out, ctx);
    std::printf("render: %zu views x %d frames at %dpx to %s\n", poses.size(), frames, a.size,
                a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string generated;
    std::string reference;
    std::string metrics = "psnr,ssim,mse";
    std::string out = "report.json";
};

int run_eval(const EvalArgs& a) {
    RunContext ctx;
    ctx.command = "eval";
    ctx.config = {{"generated", a.generated}, {"reference", a.reference}, {"metrics", a.metrics}};

    img::ImageMatrix gen = img::load_image_matrix(a.generated);
    img::ImageMatrix ref = img::load_image_matrix(a.reference);

    metrics::SequenceEmbedder emb;
    nlohmann::json results = nlohmann::json::object();
    std::stringstream ss(a.metrics);
    std::string name;
    while (std::getline(ss, name, ',')) {
        if (name.empty()) continue;
        if (name == "psnr") results["psnr"] = metrics::matrix_psnr(gen, ref);
        else if (name == "ssim") results["ssim"] = metrics::matrix_ssim(gen, ref);
        else if (name == "mse") results["mse"] = metrics::matrix_mse(gen, ref);
        else if (name == "fvd-f") results["fvd-f"] = metrics::fvd_variant(metrics::ScanKind::F, gen, ref, emb);
        else if (name == "fvd-v") results["fvd-v"] = metrics::fvd_variant(metrics::ScanKind::V, gen, ref, emb);
        else if (name == "fvd-diag")
            results["fvd-diag"] = metrics::fvd_variant(metrics::ScanKind::Diag, gen, ref, emb);
        else if (name == "fv4d")
            results["fv4d"] = metrics::fvd_variant(metrics::ScanKind::FV4D, gen, ref, emb);
        else throw ConfigError("unknown metric '" + name + "'");
    }

    nlohmann::json report;
    report["generated"] = a.generated;
    report["reference"] = a.reference;
    report["grid"] = {{"views", gen.views}, {"frames", gen.frames}};
    report["metrics"] = results;
    write_json_atomic(a.out, report);
    ctx.outputs.push_back(a.out);
    std::printf("eval: %s\n", results.dump().c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// train-toy
// ---------------------------------------------------------------------------

struct TrainToyArgs {
    std::vector<std::string> datasets;
    std::string config;
    std::string out;
    uint64_t seed = 0;
    bool seed_set = false;
};

int run_train_toy(const TrainToyArgs& a) {
    RunContext ctx;
    ctx.command = "train-toy";
    nlohmann::json config =
        a.config.empty() ? nlohmann::json::object() : cfg::load_config(a.config);
    ctx.config = config;
    nlohmann::json train = config.value("train", nlohmann::json::object());

    toytrain::ToyTrainConfig tcfg;
    tcfg.phase1_steps = cfg::get_or(train, "phase1_steps", tcfg.phase1_steps);
    tcfg.phase2_steps = cfg::get_or(train, "phase2_steps", tcfg.phase2_steps);
    tcfg.lr = cfg::get_or(train, "lr", tcfg.lr);
    tcfg.seed = a.seed_set ? a.seed : cfg::get_or(train, "seed", uint64_t{0});
    int latent_size = cfg::get_or(train, "latent_size", 16);
    ctx.seed = tcfg.seed;

    tcfg.denoiser.channels = 4;
    tcfg.denoiser.p_mask = cfg::get_or(train, "p_mask", tcfg.denoiser.p_mask);
    tcfg.denoiser.sigma_levels = cfg::get_or(train, "sigma_levels", tcfg.denoiser.sigma_levels);
    tcfg.denoiser.alpha_3d_init = cfg::get_or(train, "alpha_3d_init", tcfg.denoiser.alpha_3d_init);

    if (a.datasets.empty()) throw ConfigError("train-toy needs at least one --dataset");
    std::vector<toytrain::SceneLatents> scenes;
    for (const auto& dir : a.datasets)
        scenes.push_back(toytrain::build_scene_latents(img::load_image_matrix(dir), latent_size));

    nlohmann::json meta;
    meta["kind"] = "toy-denoiser";
    meta["channels"] = tcfg.denoiser.channels;
    meta["seed"] = tcfg.seed;

    std::printf("train-toy: phase 1, %d steps (single-frame, frame path frozen)\n",
                tcfg.phase1_steps);
    Tape tape;
    diff::ToyDenoiserParams params;
    toytrain::ToyTrainResult result = toytrain::train_toy_denoiser(
        tape, scenes, tcfg, params,
        [&](int phase, const diff::ToyDenoiserParams& p) {
            if (phase == 1) {
                meta["phase"] = 1;
                ckpt::save_checkpoint(a.out + "/checkpoint_phase1", p.named_parameters(), meta);
                ctx.outputs.push_back(a.out + "/checkpoint_phase1");
                std::printf("train-toy: phase 2, %d steps (full clips)\n", tcfg.phase2_steps);
            } else {
                meta["phase"] = 2;
                ckpt::save_checkpoint(a.out + "/checkpoint", p.named_parameters(), meta);
                ctx.outputs.push_back(a.out + "/checkpoint");
            }
        });

    {
        std::ofstream f(a.out + "/loss.csv", std::ios::trunc);
        if (!f) throw IoError("cannot write: " + a.out + "/loss.csv");
        f << "phase,step,loss\n";
        for (const auto& row : result.history)
            f << row.phase << "," << row.step << "," << row.loss << "\n";
    }
    ctx.outputs.push_back(a.out + "/loss.csv");
    write_run_manifest(a.out, ctx);
    std::printf("train-toy: loss %.6f -> %.6f\n", result.first_loss, result.last_loss);
    return 0;
}

// ---------------------------------------------------------------------------
// selftest
// ---------------------------------------------------------------------------

int run_selftest(bool corrupt_gradient) {
    selftest::Registry reg = selftest::build_registry(corrupt_gradient);
    std::vector<selftest::CheckResult> results = selftest::run_registry(reg);
    size_t width = 0;
    for (const auto& r : results) width = std::max(width, r.name.size());
    int failures = 0;
    for (const auto& r : results) {
        std::printf("  %-*s  %s  (%.1f ms)\n", static_cast<int>(width), r.name.c_str(),
                    r.pass ? "PASS" : "FAIL", r.millis);
        if (!r.pass) {
            std::printf("      %s\n", r.detail.c_str());
            ++failures;
        }
    }
    std::printf("selftest: %zu checks, %d failed\n", results.size(), failures);
    return failures == 0 ? 0 : 4;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale multi-view video toolkit"};
    app.set_version_flag("--version", std::string("s4tk ") + s4tk::kVersion +
                                          " (checkpoint format s4tk-checkpoint-v1, tensor format S4TK)");
    int threads = 1;
    app.add_option("--threads", threads, "cap on worker threads")->check(CLI::PositiveNumber);
    app.require_subcommand(1);

    SynthArgs synth;
    auto* cmd_synth = app.add_subcommand("synth", "render an analytic scene to an image-matrix directory");
    cmd_synth->add_option("--scene", synth.scene, "scene spec JSON path, or 'demo'");
    cmd_synth->add_option("--views", synth.views)->check(CLI::PositiveNumber);
    cmd_synth->add_option("--frames", synth.frames)->check(CLI::PositiveNumber);
    cmd_synth->add_option("--size", synth.size)->check(CLI::PositiveNumber);
    cmd_synth->add_option("--elevation", synth.elevation);
    cmd_synth->add_flag("--no-aux", synth.no_aux, "skip depth/normal tensor sidecars");
    cmd_synth->add_option("--out", synth.out)->required();

    CurateArgs curate_args;
    auto* cmd_curate = app.add_subcommand("curate", "rectify and filter animated mesh sequences");
    cmd_curate->add_option("--meshes", curate_args.meshes, "JSON manifest with an 'objects' array")->required();
    cmd_curate->add_option("--out", curate_args.out)->required();
    cmd_curate->add_option("--report", curate_args.report, "CSV path (default <out>/report.csv)");
    cmd_curate->add_option("--quantile", curate_args.quantile);
    cmd_curate->add_option("--motion-threshold", curate_args.motion_threshold);
    cmd_curate->add_option("--scale-tolerance", curate_args.scale_tolerance);

    Fit4dArgs fit;
    auto* cmd_fit = app.add_subcommand("fit4d", "two-stage 4D optimization against an image matrix");
    cmd_fit->add_option("--input", fit.input, "image-matrix directory")->required();
    cmd_fit->add_option("--config", fit.config, "TOML or JSON config");
    cmd_fit->add_option("--refiner", fit.refiner, "identity | oracle | toy-denoiser");
    cmd_fit->add_option("--oracle-blend", fit.oracle_blend, "oracle refiner blend in [0,1]");
    cmd_fit->add_option("--denoiser-checkpoint", fit.denoiser_checkpoint,
                        "trained toy-denoiser checkpoint for --refiner toy-denoiser");
    cmd_fit->add_option("--seed", fit.seed)->each([&fit](const std::string&) { fit.seed_set = true; });
    cmd_fit->add_option("--out", fit.out)->required();

    RenderArgs render;
    auto* cmd_render = app.add_subcommand("render", "render a fitted model to an image-matrix directory");
    cmd_render->add_option("--checkpoint", render.checkpoint)->required();
    cmd_render->add_option("--views", render.views)->check(CLI::PositiveNumber);
    cmd_render->add_option("--frames", render.frames, "default: all frames in the checkpoint");
    cmd_render->add_option("--size", render.size)->check(CLI::PositiveNumber);
    cmd_render->add_option("--samples", render.samples, "ray samples (default from checkpoint)");
    cmd_render->add_option("--elevation", render.elevation);
    cmd_render->add_option("--azimuths", render.azimuths, "comma-separated azimuth override");
    cmd_render->add_option("--out", render.out)->required();

    EvalArgs eval_args;
    auto* cmd_eval = app.add_subcommand("eval", "score a generated image matrix against a reference");
    cmd_eval->add_option("--generated", eval_args.generated)->required();
    cmd_eval->add_option("--reference", eval_args.reference)->required();
    cmd_eval->add_option("--metrics", eval_args.metrics,
                         "comma list: psnr,ssim,mse,fvd-f,fvd-v,fvd-diag,fv4d");
    cmd_eval->add_option("--out", eval_args.out, "report JSON path");

    TrainToyArgs toy;
    auto* cmd_toy = app.add_subcommand("train-toy", "progressive two-phase toy denoiser training");
    cmd_toy->add_option("--dataset", toy.datasets, "image-matrix directory (repeatable)")->required();
    cmd_toy->add_option("--config", toy.config, "TOML or JSON config");
    cmd_toy->add_option("--seed", toy.seed)->each([&toy](const std::string&) { toy.seed_set = true; });
    cmd_toy->add_option("--out", toy.out)->required();

    bool corrupt_gradient = false;
    auto* cmd_selftest = app.add_subcommand("selftest", "run the built-in invariant suite");
    cmd_selftest->add_flag("--corrupt-gradient-hook", corrupt_gradient,
                           "negative control: break a derivative and expect a failure");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (cmd_synth->parsed()) return run_synth(synth);
        if (cmd_curate->parsed()) return run_curate(curate_args);
        if (cmd_fit->parsed()) return run_fit4d(fit);
        if (cmd_render->parsed()) return run_render(render);
        if (cmd_eval->parsed()) return run_eval(eval_args);
        if (cmd_toy->parsed()) return run_train_toy(toy);
        if (cmd_selftest->parsed()) return run_selftest(corrupt_gradient);
    } catch (const s4tk::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
    return 0;
}
