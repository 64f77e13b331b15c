#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "s4tk/adam.hpp"
#include "s4tk/camera.hpp"
#include "s4tk/diffusion.hpp"
#include "s4tk/dyn_nerf.hpp"
#include "s4tk/errors.hpp"
#include "s4tk/features.hpp"
#include "s4tk/image_matrix.hpp"
#include "s4tk/ops.hpp"
#include "s4tk/rng.hpp"
#include "s4tk/sdf_scene.hpp"

// Photogrammetry-style optimizer for the dynamic NeRF: a weighted loss stack
// over rendered patches, near-orthogonal view sampling, a static-to-dynamic
// frame schedule, and a two-stage loop whose second stage retrains against
// refiner-polished renders of the first.

namespace s4tk::optim {

using core::Tape;
using core::Tensor;

// ---------------------------------------------------------------------------
// pseudo ground truth
// ---------------------------------------------------------------------------

struct PseudoGroundTruth {
    img::ImageMatrix matrix;             // V x F RGBA cells + poses
    std::vector<img::ImageF> visibility; // V*F maps, H x W x 1, in [0, 1]
    std::vector<img::ImageF> normals;    // empty, or V*F maps, H x W x 3

    const img::ImageF& vis_cell(int v, int f) const {
        return visibility[static_cast<size_t>(v) * matrix.frames + f];
    }
    const img::ImageF& normal_cell(int v, int f) const {
        return normals[static_cast<size_t>(v) * matrix.frames + f];
    }
    bool has_normals() const { return !normals.empty(); }

    void validate() const {
        matrix.validate();
        size_t cells = static_cast<size_t>(matrix.views) * matrix.frames;
        if (visibility.size() != cells) throw DimensionError("visibility map count != V*F");
        if (!normals.empty() && normals.size() != cells)
            throw DimensionError("normal map count != V*F");
        for (const auto& w : visibility) {
            if (w.height != matrix.cells[0].height || w.width != matrix.cells[0].width || w.channels != 1)
                throw DimensionError("visibility map shape mismatch");
            for (float v : w.data)
                if (!(v >= 0.0f && v <= 1.0f)) throw NumericError("visibility weight outside [0, 1]");
        }
    }
};

// Per-pixel confidence: W = clamp(v . n, eps, 1 - eps) with v the unit
// direction from the surface toward the camera; zero-normal pixels get 0.
inline img::ImageF visibility_map(const cam::CameraPose& pose, const img::ImageF& normal_map,
                                  const cam::OrbitalCamera& camera = {}) {
    if (normal_map.channels != 3) throw DimensionError("visibility_map expects H x W x 3 normals");
    const float eps = 1e-3f;
    img::ImageF out(normal_map.height, normal_map.width, 1);
    for (int r = 0; r < normal_map.height; ++r)
        for (int c = 0; c < normal_map.width; ++c) {
            geom::Vec3 n{normal_map.at(r, c, 0), normal_map.at(r, c, 1), normal_map.at(r, c, 2)};
            float len = geom::norm(n);
            if (len < 1e-6f) continue; // background
            n = (1.0f / len) * n;
            cam::Ray ray = camera.pixel_ray(pose, r, c, normal_map.height, normal_map.width);
            geom::Vec3 v = -1.0f * ray.direction; // unit: toward the camera
            float w = std::clamp(geom::dot(v, n), eps, 1.0f - eps);
            out.at(r, c, 0) = w;
        }
    return out;
}

// Analytic scenes come with exact normals, so the confidence maps are free.
inline PseudoGroundTruth from_pseudo_dataset(const sdf::PseudoDataset& ds,
                                             const cam::OrbitalCamera& camera = {}) {
    PseudoGroundTruth gt;
    gt.matrix = ds.images;
    gt.normals = ds.normal;
    for (int v = 0; v < ds.images.views; ++v)
        for (int f = 0; f < ds.images.frames; ++f)
            gt.visibility.push_back(
                visibility_map(ds.images.poses[static_cast<size_t>(v)], ds.normal_cell(v, f), camera));
    gt.validate();
    return gt;
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct OptimConfig {
    float lr = 0.01f;
    int stage1_iters = 1500;
    int stage2_iters = 500;
    int stage2_noise_step = 25; // of the denoiser's sigma grid
    int rays_per_step = 4096;   // split evenly over sampled (view, frame) cells
    int patch_size = 8;         // contiguous patch per cell for spatial terms
    int frames_per_step = 2;
    int render_samples = 32;
    float lambda_mse = 1.0f;
    float lambda_lpips = 0.1f;
    float lambda_mask = 0.5f;
    float lambda_normal = 0.05f;
    float lambda_depth_smooth = 0.01f;
    float lambda_normal_smooth = 0.005f;
    std::vector<std::pair<int, int>> frame_window_schedule; // optional (step, window) override
    bool view_jitter = true;
    uint64_t seed = 0;

    void validate() const {
        if (!(lr > 0.0f)) throw ConfigError("lr must be positive");
        if (stage1_iters < 0 || stage2_iters < 0) throw ConfigError("iteration counts must be >= 0");
        if (rays_per_step < 1) throw ConfigError("rays_per_step must be >= 1");
        if (patch_size < 4 || patch_size % 4) throw ConfigError("patch_size must be a multiple of 4");
        if (frames_per_step < 1) throw ConfigError("frames_per_step must be >= 1");
        if (render_samples < 2) throw ConfigError("render_samples must be >= 2");
        for (float l : {lambda_mse, lambda_lpips, lambda_mask, lambda_normal, lambda_depth_smooth,
                        lambda_normal_smooth})
            if (!(l >= 0.0f)) throw ConfigError("loss weights must be >= 0");
        for (size_t i = 0; i < frame_window_schedule.size(); ++i) {
            if (frame_window_schedule[i].second < 1)
                throw ConfigError("frame window must be >= 1");
            if (i > 0 && (frame_window_schedule[i].first <= frame_window_schedule[i - 1].first ||
                          frame_window_schedule[i].second < frame_window_schedule[i - 1].second))
                throw ConfigError("frame window schedule must be monotone in step and window");
        }
    }

    bool all_weights_zero() const {
        return lambda_mse == 0.0f && lambda_lpips == 0.0f && lambda_mask == 0.0f &&
               lambda_normal == 0.0f && lambda_depth_smooth == 0.0f && lambda_normal_smooth == 0.0f;
    }
};

struct LossBreakdown {
    float mse = 0.0f;
    float lpips = 0.0f;
    float mask = 0.0f;
    float normal = 0.0f;
    float depth_smooth = 0.0f;
    float normal_smooth = 0.0f;
    float total = 0.0f; // weighted sum; the named terms are raw (pre-weight)
};

// ---------------------------------------------------------------------------
// sampling schedules
// ---------------------------------------------------------------------------

namespace detail {

inline float circ_dist_deg(float a, float b) {
    float d = std::fmod(std::fabs(a - b), 360.0f);
    return d > 180.0f ? 360.0f - d : d;
}

} // namespace detail

// Nearest views to azimuths {0, 90, 180, 270}; one slot per step gets a
// seeded target offset in (-7.5, 7.5) degrees so dense rings rotate through
// their neighbors over time. Fewer than 4 views: all of them.
inline std::vector<int> sample_training_views(int step, const std::vector<cam::CameraPose>& poses,
                                              Rng rng, bool jitter = true) {
    int V = static_cast<int>(poses.size());
    if (V == 0) throw ConfigError("view sampling needs at least one pose");
    if (V <= 4) {
        std::vector<int> all(static_cast<size_t>(V));
        for (int v = 0; v < V; ++v) all[static_cast<size_t>(v)] = v;
        return all;
    }
    float targets[4] = {0.0f, 90.0f, 180.0f, 270.0f};
    if (jitter) targets[step % 4] += rng.uniform(-7.5f, 7.5f);
    std::vector<int> out;
    std::vector<char> used(static_cast<size_t>(V), 0);
    for (float t : targets) {
        int best = -1;
        float best_d = 1e9f;
        for (int v = 0; v < V; ++v) {
            if (used[static_cast<size_t>(v)]) continue;
            float d = detail::circ_dist_deg(poses[static_cast<size_t>(v)].azimuth_deg, t);
            if (d < best_d) {
                best_d = d;
                best = v;
            }
        }
        used[static_cast<size_t>(best)] = 1;
        out.push_back(best);
    }
    return out;
}

// Static-to-dynamic ramp: window(step) = clamp(ceil(F * step / ramp), 1, F)
// with ramp = stage1_iters / 2, unless an explicit schedule overrides it.
inline int frame_window(int step, int frames, const OptimConfig& cfg) {
    if (!cfg.frame_window_schedule.empty()) {
        int w = 1;
        for (const auto& [s, win] : cfg.frame_window_schedule)
            if (s <= step) w = win;
        return std::min(w, frames);
    }
    int ramp = std::max(1, cfg.stage1_iters / 2);
    float frac = std::min(1.0f, static_cast<float>(step) / static_cast<float>(ramp));
    int w = static_cast<int>(std::ceil(static_cast<float>(frames) * frac));
    return std::clamp(w, 1, frames);
}

// Seeded frames from [0, window); frame 0 rides along until the window is
// full so the static anchor never drops out early. Sorted, deduplicated.
inline std::vector<int> sample_training_frames(int step, int frames, const OptimConfig& cfg, Rng rng) {
    if (frames < 1) throw ConfigError("frame sampling needs frames >= 1");
    int w = frame_window(step, frames, cfg);
    std::vector<int> out;
    for (int i = 0; i < cfg.frames_per_step; ++i) out.push_back(rng.uniform_int(w));
    if (w < frames) out[0] = 0;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// evaluation-side loss (plain images)
// ---------------------------------------------------------------------------

struct GtCellView {
    const img::ImageF* rgba = nullptr;       // H x W x 4
    const img::ImageF* visibility = nullptr; // H x W x 1
    const img::ImageF* normal = nullptr;     // optional, H x W x 3
};

inline LossBreakdown reconstruction_loss(const nerf::RenderOutput& render, const GtCellView& gt,
                                         const OptimConfig& cfg) {
    if (!gt.rgba || !gt.visibility) throw DimensionError("reconstruction_loss: missing ground truth");
    int H = render.rgb.height, W = render.rgb.width;
    if (gt.rgba->height != H || gt.rgba->width != W || gt.rgba->channels != 4)
        throw DimensionError("reconstruction_loss: rgba shape mismatch");
    if (gt.visibility->height != H || gt.visibility->width != W || gt.visibility->channels != 1)
        throw DimensionError("reconstruction_loss: visibility shape mismatch");
    if (gt.normal && (gt.normal->height != H || gt.normal->width != W || gt.normal->channels != 3))
        throw DimensionError("reconstruction_loss: normal map shape mismatch");

    LossBreakdown out;
    double mse = 0.0, mask = 0.0;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            float w = gt.visibility->at(r, c, 0);
            for (int k = 0; k < 3; ++k) {
                float e = gt.rgba->at(r, c, k) - render.rgb.at(r, c, k);
                mse += static_cast<double>(w) * w * e * e;
            }
            float es = gt.rgba->at(r, c, 3) - render.silhouette.at(r, c, 0);
            mask += static_cast<double>(es) * es;
        }
    out.mse = static_cast<float>(mse / (static_cast<double>(H) * W * 3));
    out.mask = static_cast<float>(mask / (static_cast<double>(H) * W));

    if (cfg.lambda_lpips > 0.0f) {
        img::ImageF gt_rgb(H, W, 3);
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c)
                for (int k = 0; k < 3; ++k) gt_rgb.at(r, c, k) = gt.rgba->at(r, c, k);
        out.lpips = feature_distance(render.rgb, gt_rgb);
    }

    auto fg = [&](int r, int c) { return gt.rgba->at(r, c, 3) > 0.5f; };
    if (gt.normal && cfg.lambda_normal > 0.0f) {
        double acc = 0.0;
        int count = 0;
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                geom::Vec3 nb{gt.normal->at(r, c, 0), gt.normal->at(r, c, 1), gt.normal->at(r, c, 2)};
                if (!fg(r, c) || geom::norm(nb) < 0.5f) continue;
                geom::Vec3 n{render.normal.at(r, c, 0), render.normal.at(r, c, 1),
                             render.normal.at(r, c, 2)};
                acc += 1.0 - static_cast<double>(geom::dot(n, nb));
                ++count;
            }
        out.normal = count ? static_cast<float>(acc / count) : 0.0f;
    }

    if (cfg.lambda_depth_smooth > 0.0f) {
        double acc = 0.0;
        int count = 0;
        for (int r = 1; r + 1 < H; ++r)
            for (int c = 1; c + 1 < W; ++c) {
                if (!(fg(r, c) && fg(r - 1, c) && fg(r + 1, c) && fg(r, c - 1) && fg(r, c + 1))) continue;
                float lap = 4.0f * render.depth.at(r, c, 0) - render.depth.at(r - 1, c, 0) -
                            render.depth.at(r + 1, c, 0) - render.depth.at(r, c - 1, 0) -
                            render.depth.at(r, c + 1, 0);
                acc += static_cast<double>(lap) * lap;
                ++count;
            }
        out.depth_smooth = count ? static_cast<float>(acc / count) : 0.0f;
    }

    if (cfg.lambda_normal_smooth > 0.0f) {
        double acc = 0.0;
        int count = 0;
        auto pair_term = [&](int r0, int c0, int r1, int c1) {
            if (!(fg(r0, c0) && fg(r1, c1))) return;
            float gi = 0.0f;
            for (int k = 0; k < 3; ++k) gi += std::fabs(gt.rgba->at(r0, c0, k) - gt.rgba->at(r1, c1, k));
            float damp = std::exp(-10.0f * gi);
            float d2 = 0.0f;
            for (int k = 0; k < 3; ++k) {
                float d = render.normal.at(r0, c0, k) - render.normal.at(r1, c1, k);
                d2 += d * d;
            }
            acc += static_cast<double>(damp) * d2;
            ++count;
        };
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                if (c + 1 < W) pair_term(r, c, r, c + 1);
                if (r + 1 < H) pair_term(r, c, r + 1, c);
            }
        out.normal_smooth = count ? static_cast<float>(acc / count) : 0.0f;
    }

    out.total = cfg.lambda_mse * out.mse + cfg.lambda_lpips * out.lpips + cfg.lambda_mask * out.mask +
                cfg.lambda_normal * out.normal + cfg.lambda_depth_smooth * out.depth_smooth +
                cfg.lambda_normal_smooth * out.normal_smooth;
    return out;
}

// ---------------------------------------------------------------------------
// differentiable training-step loss over one (view, frame) cell
// ---------------------------------------------------------------------------

namespace detail {

struct CellLoss {
    Tensor total; // weighted scalar
    LossBreakdown values;
};

// Pixels: the first ps*ps entries are a row-major contiguous patch (spatial
// terms), any remainder is scattered (mse/mask only).
inline CellLoss cell_loss(const nerf::DynNerfModel& model, const PseudoGroundTruth& gt, int view,
                          int frame, const std::vector<std::pair<int, int>>& pixels, int ps,
                          const OptimConfig& cfg, const cam::OrbitalCamera& camera, bool static_phase) {
    const img::ImageF& gt_rgba = gt.matrix.cell(view, frame);
    const img::ImageF& gt_vis = gt.vis_cell(view, frame);
    int H = gt_rgba.height, W = gt_rgba.width;
    int P = static_cast<int>(pixels.size());
    int patch_n = ps * ps;

    std::vector<cam::Ray> rays;
    rays.reserve(pixels.size());
    std::vector<float> gt_rgb_v, gt_a_v, w_v;
    for (auto [r, c] : pixels) {
        rays.push_back(camera.pixel_ray(gt.matrix.poses[static_cast<size_t>(view)], r, c, H, W));
        for (int k = 0; k < 3; ++k) gt_rgb_v.push_back(gt_rgba.at(r, c, k));
        gt_a_v.push_back(gt_rgba.at(r, c, 3));
        w_v.push_back(gt_vis.at(r, c, 0));
    }

    float fframe = static_cast<float>(frame);
    nerf::RayBatchRender rb = nerf::render_rays(model, rays, fframe, cfg.render_samples, nullptr);
    Tensor white = core::add_scalar(core::neg(rb.alpha), 1.0f); // (P, 1)
    Tensor rgbw = core::add(rb.rgb, white);                     // composite onto white

    Tensor gt_rgb = Tensor::constant({P, 3}, std::move(gt_rgb_v));
    Tensor gt_alpha = Tensor::constant({P, 1}, std::move(gt_a_v));
    Tensor wvis = Tensor::constant({P, 1}, std::move(w_v));

    CellLoss out;
    Tensor total = Tensor::zeros({1});

    Tensor mse = core::reduce_mean(core::mul(core::square(wvis), core::square(core::sub(rgbw, gt_rgb))));
    out.values.mse = mse.item();
    if (cfg.lambda_mse > 0.0f) total = core::add(total, core::mul_scalar(mse, cfg.lambda_mse));

    float lam_mask = cfg.lambda_mask * (static_phase && frame == 0 ? 2.0f : 1.0f);
    Tensor mask = core::reduce_mean(core::square(core::sub(rb.alpha, gt_alpha)));
    out.values.mask = mask.item();
    if (lam_mask > 0.0f) total = core::add(total, core::mul_scalar(mask, lam_mask));

    if (cfg.lambda_lpips > 0.0f && patch_n <= P && ps >= 4) {
        Tensor patch = core::reshape(core::slice(rgbw, 0, 0, patch_n), {ps, ps, 3});
        Tensor gt_patch = core::reshape(core::slice(gt_rgb, 0, 0, patch_n), {ps, ps, 3});
        Tensor lp = feature_distance_t(patch, gt_patch);
        out.values.lpips = lp.item();
        total = core::add(total, core::mul_scalar(lp, cfg.lambda_lpips));
    }

    auto gt_fg = [&](int i) { return gt_rgba.at(pixels[static_cast<size_t>(i)].first,
                                                pixels[static_cast<size_t>(i)].second, 3) > 0.5f; };

    if (cfg.lambda_depth_smooth > 0.0f && patch_n <= P && ps >= 3) {
        std::vector<int> ic, iu, id, il, ir;
        std::vector<float> valid;
        for (int r = 1; r + 1 < ps; ++r)
            for (int c = 1; c + 1 < ps; ++c) {
                int i = r * ps + c;
                ic.push_back(i);
                iu.push_back(i - ps);
                id.push_back(i + ps);
                il.push_back(i - 1);
                ir.push_back(i + 1);
                bool ok = gt_fg(i) && gt_fg(i - ps) && gt_fg(i + ps) && gt_fg(i - 1) && gt_fg(i + 1);
                valid.push_back(ok ? 1.0f : 0.0f);
            }
        float n_valid = std::accumulate(valid.begin(), valid.end(), 0.0f);
        if (n_valid > 0.0f) {
            int Q = static_cast<int>(ic.size());
            Tensor lap = core::sub(core::mul_scalar(core::gather(rb.depth, 0, ic), 4.0f),
                                   core::add(core::add(core::gather(rb.depth, 0, iu),
                                                       core::gather(rb.depth, 0, id)),
                                             core::add(core::gather(rb.depth, 0, il),
                                                       core::gather(rb.depth, 0, ir))));
            Tensor vmask = Tensor::constant({Q, 1}, std::move(valid));
            Tensor ds = core::mul_scalar(core::reduce_sum(core::mul(vmask, core::square(lap))),
                                         1.0f / n_valid);
            out.values.depth_smooth = ds.item();
            total = core::add(total, core::mul_scalar(ds, cfg.lambda_depth_smooth));
        }
    }

    bool want_normals = (cfg.lambda_normal > 0.0f || cfg.lambda_normal_smooth > 0.0f) &&
                        gt.has_normals() && patch_n <= P;
    if (want_normals) {
        const img::ImageF& gt_nrm = gt.normal_cell(view, frame);
        const float h = 1e-3f;
        std::vector<float> probes(static_cast<size_t>(patch_n) * 6 * 3);
        for (int i = 0; i < patch_n; ++i) {
            const cam::Ray& ray = rays[static_cast<size_t>(i)];
            geom::Vec3 p = ray.origin + rb.depth.at({i, 0}) * ray.direction;
            for (int k = 0; k < 3; ++k)
                for (int s = 0; s < 2; ++s) {
                    geom::Vec3 q = p;
                    float& comp = k == 0 ? q.x : k == 1 ? q.y : q.z;
                    comp += s == 0 ? h : -h;
                    size_t o = (static_cast<size_t>(i) * 6 + static_cast<size_t>(k * 2 + s)) * 3;
                    probes[o] = q.x;
                    probes[o + 1] = q.y;
                    probes[o + 2] = q.z;
                }
        }
        Tensor pts = Tensor::constant({patch_n * 6, 3}, std::move(probes));
        Tensor sig6 = core::reshape(nerf::query_field(model, pts, fframe).sigma, {patch_n, 6});
        auto axis_grad = [&](int col) {
            return core::mul_scalar(core::sub(core::slice(sig6, 1, col, 1),
                                              core::slice(sig6, 1, col + 1, 1)),
                                    1.0f / (2.0f * h));
        };
        Tensor g_raw = core::concat({axis_grad(0), axis_grad(2), axis_grad(4)}, 1); // (patch_n, 3)
        Tensor g_norm = core::sqrt(
            core::add_scalar(core::reduce_sum_axis(core::square(g_raw), 1, true), 1e-12f));
        Tensor n_hat = core::div(core::neg(g_raw), g_norm); // outward: against the density gradient

        std::vector<float> nbar_v, fg_v;
        for (int i = 0; i < patch_n; ++i) {
            auto [r, c] = pixels[static_cast<size_t>(i)];
            geom::Vec3 nb{gt_nrm.at(r, c, 0), gt_nrm.at(r, c, 1), gt_nrm.at(r, c, 2)};
            bool ok = gt_fg(i) && geom::norm(nb) > 0.5f;
            fg_v.push_back(ok ? 1.0f : 0.0f);
            nbar_v.push_back(nb.x);
            nbar_v.push_back(nb.y);
            nbar_v.push_back(nb.z);
        }
        float n_fg = std::accumulate(fg_v.begin(), fg_v.end(), 0.0f);
        Tensor nbar = Tensor::constant({patch_n, 3}, std::move(nbar_v));
        Tensor fg_mask = Tensor::constant({patch_n, 1}, std::move(fg_v));

        if (cfg.lambda_normal > 0.0f && n_fg > 0.0f) {
            Tensor dots = core::reduce_sum_axis(core::mul(n_hat, nbar), 1, true);
            Tensor nt = core::mul_scalar(
                core::reduce_sum(core::mul(fg_mask, core::add_scalar(core::neg(dots), 1.0f))),
                1.0f / n_fg);
            out.values.normal = nt.item();
            total = core::add(total, core::mul_scalar(nt, cfg.lambda_normal));
        }

        if (cfg.lambda_normal_smooth > 0.0f) {
            std::vector<int> ia, ib;
            std::vector<float> damp;
            auto add_pair = [&](int i, int j) {
                if (!(gt_fg(i) && gt_fg(j))) return;
                auto [r0, c0] = pixels[static_cast<size_t>(i)];
                auto [r1, c1] = pixels[static_cast<size_t>(j)];
                float gi = 0.0f;
                for (int k = 0; k < 3; ++k) gi += std::fabs(gt_rgba.at(r0, c0, k) - gt_rgba.at(r1, c1, k));
                ia.push_back(i);
                ib.push_back(j);
                damp.push_back(std::exp(-10.0f * gi));
            };
            for (int r = 0; r < ps; ++r)
                for (int c = 0; c < ps; ++c) {
                    if (c + 1 < ps) add_pair(r * ps + c, r * ps + c + 1);
                    if (r + 1 < ps) add_pair(r * ps + c, (r + 1) * ps + c);
                }
            if (!ia.empty()) {
                int Q = static_cast<int>(ia.size());
                Tensor diff = core::sub(core::gather(n_hat, 0, ia), core::gather(n_hat, 0, ib));
                Tensor sq = core::reduce_sum_axis(core::square(diff), 1, true); // (Q, 1)
                Tensor dampt = Tensor::constant({Q, 1}, std::move(damp));
                Tensor ns = core::mul_scalar(core::reduce_sum(core::mul(dampt, sq)),
                                             1.0f / static_cast<float>(Q));
                out.values.normal_smooth = ns.item();
                total = core::add(total, core::mul_scalar(ns, cfg.lambda_normal_smooth));
            }
        }
    }

    out.total = total;
    out.values.total = total.item();
    return out;
}

inline void check_finite(const LossBreakdown& b, int step) {
    auto bad = [&](float v, const char* name) {
        if (!std::isfinite(v))
            throw NumericError("non-finite " + std::string(name) + " loss at step " +
                               std::to_string(step));
    };
    bad(b.mse, "mse");
    bad(b.lpips, "lpips");
    bad(b.mask, "mask");
    bad(b.normal, "normal");
    bad(b.depth_smooth, "depth_smooth");
    bad(b.normal_smooth, "normal_smooth");
    bad(b.total, "total");
}

} // namespace detail

// ---------------------------------------------------------------------------
// stage optimizer
// ---------------------------------------------------------------------------

// Adam over sampled views/frames/rays. Returns the per-step weighted loss;
// optionally fills per-step averaged term breakdowns.
inline std::vector<float> optimize_stage(nerf::DynNerfModel& model, const PseudoGroundTruth& gt,
                                         const OptimConfig& cfg, int stage,
                                         const cam::OrbitalCamera& camera = {},
                                         std::vector<LossBreakdown>* breakdowns = nullptr) {
    if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
    cfg.validate();
    gt.validate();
    int F = gt.matrix.frames;
    int H = gt.matrix.cells[0].height, W = gt.matrix.cells[0].width;
    int iters = stage == 1 ? cfg.stage1_iters : cfg.stage2_iters;
    int ps = std::min({cfg.patch_size, H / 4 * 4, W / 4 * 4});
    if (ps < 4) throw ConfigError("images too small for the configured patch");

    std::vector<float> history;
    history.reserve(static_cast<size_t>(iters));
    if (cfg.all_weights_zero()) { // no active objective: a deliberate no-op
        history.assign(static_cast<size_t>(iters), 0.0f);
        if (breakdowns) breakdowns->assign(static_cast<size_t>(iters), LossBreakdown{});
        return history;
    }

    core::Adam adam(model.parameters(), cfg.lr); // fresh moments per stage
    Rng base(cfg.seed ^ (stage == 2 ? 0x9d2c5680ULL : 0));
    Rng views_rng = base.stream("views");
    Rng frames_rng = base.stream("frames");
    Rng pixels_rng = base.stream("pixels");

    for (int s = 0; s < iters; ++s) {
        int sched_step = stage == 1 ? s : cfg.stage1_iters; // stage 2 trains the full window
        std::vector<int> views =
            sample_training_views(s, gt.matrix.poses, views_rng.substream(static_cast<uint64_t>(s)),
                                  cfg.view_jitter);
        std::vector<int> frames =
            sample_training_frames(sched_step, F, cfg, frames_rng.substream(static_cast<uint64_t>(s)));
        bool static_phase = frame_window(sched_step, F, cfg) == 1;

        int n_cells = static_cast<int>(views.size() * frames.size());
        int per_cell = std::max(ps * ps, cfg.rays_per_step / n_cells);
        Rng prng = pixels_rng.substream(static_cast<uint64_t>(s));

        Tape tape;
        Tape::Scope scope(tape);
        adam.zero_grad();
        Tensor step_total = Tensor::zeros({1});
        LossBreakdown step_values;
        for (int v : views)
            for (int f : frames) {
                std::vector<std::pair<int, int>> pixels;
                int r0 = prng.uniform_int(H - ps + 1);
                int c0 = prng.uniform_int(W - ps + 1);
                for (int r = 0; r < ps; ++r)
                    for (int c = 0; c < ps; ++c) pixels.emplace_back(r0 + r, c0 + c);
                for (int i = ps * ps; i < per_cell; ++i)
                    pixels.emplace_back(prng.uniform_int(H), prng.uniform_int(W));

                detail::CellLoss cl =
                    detail::cell_loss(model, gt, v, f, pixels, ps, cfg, camera, static_phase);
                step_total = core::add(step_total, cl.total);
                step_values.mse += cl.values.mse;
                step_values.lpips += cl.values.lpips;
                step_values.mask += cl.values.mask;
                step_values.normal += cl.values.normal;
                step_values.depth_smooth += cl.values.depth_smooth;
                step_values.normal_smooth += cl.values.normal_smooth;
            }
        step_total = core::mul_scalar(step_total, 1.0f / static_cast<float>(n_cells));
        float inv = 1.0f / static_cast<float>(n_cells);
        step_values.mse *= inv;
        step_values.lpips *= inv;
        step_values.mask *= inv;
        step_values.normal *= inv;
        step_values.depth_smooth *= inv;
        step_values.normal_smooth *= inv;
        step_values.total = step_total.item();
        detail::check_finite(step_values, s);

        tape.backward(step_total);
        adam.step();
        history.push_back(step_values.total);
        if (breakdowns) breakdowns->push_back(step_values);
    }
    return history;
}

// ---------------------------------------------------------------------------
// stage-2 refinement
// ---------------------------------------------------------------------------

using Refiner = std::function<img::ImageMatrix(const img::ImageMatrix&, int)>;

inline Refiner identity_refiner() {
    return [](const img::ImageMatrix& m, int) { return m; };
}

// Blends rendered cells toward a held-out reference matrix; blend 1 returns
// the reference outright.
inline Refiner oracle_refiner(img::ImageMatrix reference, float blend) {
    if (!(blend >= 0.0f && blend <= 1.0f)) throw ConfigError("oracle blend must be in [0, 1]");
    return [reference = std::move(reference), blend](const img::ImageMatrix& m, int) {
        if (m.views != reference.views || m.frames != reference.frames)
            throw ContractError("oracle refiner: reference grid does not match input");
        img::ImageMatrix out = m;
        for (size_t i = 0; i < out.cells.size(); ++i) {
            if (!out.cells[i].same_shape(reference.cells[i]))
                throw ContractError("oracle refiner: reference cell shape mismatch");
            for (size_t j = 0; j < out.cells[i].data.size(); ++j)
                out.cells[i].data[j] =
                    (1.0f - blend) * out.cells[i].data[j] + blend * reference.cells[i].data[j];
        }
        return out;
    };
}

// Runs the multi-view video denoiser once at the requested noise level:
// noise the RGBA grid, predict the noise, subtract it back out.
inline Refiner toy_denoiser_refiner(diff::ToyDenoiserParams params, diff::ToyDenoiserConfig dcfg,
                                    uint64_t seed) {
    if (params.channels != 4)
        throw ConfigError("toy refiner needs a 4-channel denoiser to digest RGBA grids");
    return [params = std::move(params), dcfg, seed](const img::ImageMatrix& m, int noise_step) {
        int V = m.views, F = m.frames, H = m.cells[0].height, W = m.cells[0].width;
        std::vector<float> sigmas = diff::sigma_grid(dcfg.sigma_levels, dcfg.sigma_min, dcfg.sigma_max);
        float sigma = sigmas[static_cast<size_t>(std::clamp(noise_step, 0, dcfg.sigma_levels - 1))];

        std::vector<float> vals(static_cast<size_t>(F) * V * H * W * 4);
        for (int f = 0; f < F; ++f)
            for (int v = 0; v < V; ++v)
                for (int r = 0; r < H; ++r)
                    for (int c = 0; c < W; ++c)
                        for (int k = 0; k < 4; ++k)
                            vals[(((static_cast<size_t>(f) * V + v) * H + r) * W + c) * 4 +
                                 static_cast<size_t>(k)] = m.cell(v, f).at(r, c, k);
        Tensor x = Tensor::constant({F, V, H, W, 4}, std::move(vals));
        Rng rng = Rng(seed).stream("refiner-noise");
        Tensor eps = Tensor::constant({F, V, H, W, 4}, rng.normal_vec(static_cast<size_t>(x.size())));
        Tensor noisy = core::add(x, core::mul_scalar(eps, sigma));

        diff::CameraTrajectory traj;
        traj.poses = m.poses;
        diff::LatentBlock pred = diff::toy_denoiser_forward(params, diff::LatentBlock(noisy), sigma, {},
                                                            traj, m.frame_indices, {});
        Tensor denoised = core::clamp(core::sub(noisy, core::mul_scalar(pred.values, sigma)), 0.0f, 1.0f);

        img::ImageMatrix out = m;
        for (int f = 0; f < F; ++f)
            for (int v = 0; v < V; ++v)
                for (int r = 0; r < H; ++r)
                    for (int c = 0; c < W; ++c)
                        for (int k = 0; k < 4; ++k)
                            out.cell(v, f).at(r, c, k) = denoised.at({f, v, r, c, k});
        return out;
    };
}

inline nerf::RenderConfig eval_render_config(const OptimConfig& cfg) {
    nerf::RenderConfig rc;
    rc.n_samples = cfg.render_samples;
    rc.jitter = false;
    return rc;
}

// Renders every (view, frame) cell from the model and wraps it as pseudo
// ground truth: RGBA from the render, normals from the density probe,
// visibility recomputed from those normals.
inline PseudoGroundTruth render_model_targets(const nerf::DynNerfModel& model,
                                              const std::vector<cam::CameraPose>& poses, int frames,
                                              int height, int width,
                                              const cam::OrbitalCamera& camera = {},
                                              const nerf::RenderConfig& rc = {}) {
    if (poses.empty() || frames < 1) throw ConfigError("target rendering needs poses and frames");
    PseudoGroundTruth gt;
    gt.matrix = img::ImageMatrix(static_cast<int>(poses.size()), frames, height, width);
    gt.matrix.poses = poses;
    for (int v = 0; v < gt.matrix.views; ++v)
        for (int f = 0; f < frames; ++f) {
            nerf::RenderOutput ro =
                nerf::render_view(model, poses[static_cast<size_t>(v)], static_cast<float>(f), height,
                                  width, camera, rc);
            img::ImageF& cell = gt.matrix.cell(v, f);
            for (int r = 0; r < height; ++r)
                for (int c = 0; c < width; ++c) {
                    for (int k = 0; k < 3; ++k) cell.at(r, c, k) = ro.rgb.at(r, c, k);
                    cell.at(r, c, 3) = ro.silhouette.at(r, c, 0);
                }
            gt.normals.push_back(ro.normal);
            gt.visibility.push_back(visibility_map(poses[static_cast<size_t>(v)], ro.normal, camera));
        }
    return gt;
}

inline PseudoGroundTruth stage2_refine_targets(const nerf::DynNerfModel& model,
                                               const std::vector<cam::CameraPose>& poses, int frames,
                                               int height, int width, const Refiner& refiner,
                                               int noise_step, const cam::OrbitalCamera& camera = {},
                                               const nerf::RenderConfig& rc = {}) {
    PseudoGroundTruth gt = render_model_targets(model, poses, frames, height, width, camera, rc);
    img::ImageMatrix refined = refiner(gt.matrix, noise_step);
    if (refined.views != gt.matrix.views || refined.frames != gt.matrix.frames)
        throw ContractError("refiner changed the grid shape");
    for (size_t i = 0; i < refined.cells.size(); ++i)
        if (!refined.cells[i].same_shape(gt.matrix.cells[i]))
            throw ContractError("refiner changed a cell shape");
    refined.poses = gt.matrix.poses;
    refined.frame_indices = gt.matrix.frame_indices;
    gt.matrix = std::move(refined);
    return gt;
}

// ---------------------------------------------------------------------------
// two-stage driver
// ---------------------------------------------------------------------------

struct FitResult {
    std::vector<float> stage1_loss, stage2_loss;
    std::vector<LossBreakdown> stage1_terms, stage2_terms;
    PseudoGroundTruth stage2_targets;
};

inline FitResult fit_4d(nerf::DynNerfModel& model, const PseudoGroundTruth& gt, const OptimConfig& cfg,
                        const Refiner& refiner, const cam::OrbitalCamera& camera = {}) {
    FitResult r;
    r.stage1_loss = optimize_stage(model, gt, cfg, 1, camera, &r.stage1_terms);
    int H = gt.matrix.cells[0].height, W = gt.matrix.cells[0].width;
    r.stage2_targets = stage2_refine_targets(model, gt.matrix.poses, gt.matrix.frames, H, W, refiner,
                                             cfg.stage2_noise_step, camera, eval_render_config(cfg));
    r.stage2_loss = optimize_stage(model, r.stage2_targets, cfg, 2, camera, &r.stage2_terms);
    return r;
}

} // namespace s4tk::optim
