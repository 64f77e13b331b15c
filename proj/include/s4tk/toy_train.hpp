// Progressive two-phase training loop for the toy multi-view denoiser.
// Phase 1 trains on single-frame batches with the frame-attention path
// hard-bypassed (alpha_f pinned to 0 and excluded from the optimizer);
// phase 2 unfreezes it on full clips.
#pragma once

#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "s4tk/adam.hpp"
#include "s4tk/diffusion.hpp"
#include "s4tk/errors.hpp"
#include "s4tk/image.hpp"
#include "s4tk/image_matrix.hpp"
#include "s4tk/ops.hpp"
#include "s4tk/rng.hpp"
#include "s4tk/tensor.hpp"

namespace s4tk::toytrain {

using core::Tape;
using core::Tensor;
using s4tk::Rng;
namespace diff = s4tk::diff;
namespace img = s4tk::img;

// One training scene: clean latents plus the conditioning channels derived
// from them (view-0 column as video condition, frame-0 row as reference).
struct SceneLatents {
    diff::LatentBlock clean;   // (F, V, S, S, 4)
    Tensor video_cond;         // (F, S, S, 4)
    Tensor ref_latents;        // (V, S, S, 4)
    diff::CameraTrajectory cam;
    std::vector<int> frame_indices;
};

// Downsample an image matrix to latent_size x latent_size RGBA latents.
inline SceneLatents build_scene_latents(const img::ImageMatrix& m, int latent_size) {
    if (latent_size < 2) throw ConfigError("latent_size must be >= 2");
    int V = m.views, F = m.frames, S = latent_size;
    std::vector<float> clean(static_cast<size_t>(F) * V * S * S * 4);
    std::vector<float> cond(static_cast<size_t>(F) * S * S * 4);
    std::vector<float> ref(static_cast<size_t>(V) * S * S * 4);
    for (int v = 0; v < V; ++v)
        for (int f = 0; f < F; ++f) {
            img::ImageF small = img::resize_bilinear(m.cell(v, f), S, S);
            for (int i = 0; i < S * S * 4; ++i) {
                size_t base = ((static_cast<size_t>(f) * V + v) * S * S * 4) + static_cast<size_t>(i);
                clean[base] = small.data[static_cast<size_t>(i)];
                if (v == 0)
                    cond[static_cast<size_t>(f) * S * S * 4 + static_cast<size_t>(i)] =
                        small.data[static_cast<size_t>(i)];
                if (f == 0)
                    ref[static_cast<size_t>(v) * S * S * 4 + static_cast<size_t>(i)] =
                        small.data[static_cast<size_t>(i)];
            }
        }
    SceneLatents out;
    out.clean = diff::LatentBlock(Tensor::constant({F, V, S, S, 4}, std::move(clean)));
    out.video_cond = Tensor::constant({F, S, S, 4}, std::move(cond));
    out.ref_latents = Tensor::constant({V, S, S, 4}, std::move(ref));
    out.cam.poses = m.poses;
    out.frame_indices = m.frame_indices;
    return out;
}

struct ToyTrainConfig {
    int phase1_steps = 200;
    int phase2_steps = 200;
    float lr = 3e-3f;
    uint64_t seed = 0;
    diff::ToyDenoiserConfig denoiser; // caller sets channels (4 for RGBA latents)
};

struct LossRow {
    int phase; // 1 or 2
    int step;  // step index within its phase
    float loss;
};

struct ToyTrainResult {
    std::vector<LossRow> history;
    float first_loss = -1.0f;
    float last_loss = -1.0f;
};

// Runs both phases. Parameters are created on `tape` and trained in place;
// on_phase_end (optional) fires after each phase with the live parameters, so
// callers can checkpoint intermediate state.
inline ToyTrainResult train_toy_denoiser(
    Tape& tape, const std::vector<SceneLatents>& scenes, const ToyTrainConfig& tcfg,
    diff::ToyDenoiserParams& params_out,
    const std::function<void(int phase, const diff::ToyDenoiserParams&)>& on_phase_end = {}) {
    if (scenes.empty()) throw ConfigError("toy training needs at least one scene");
    if (tcfg.phase1_steps < 0 || tcfg.phase2_steps < 0)
        throw ConfigError("training step counts must be >= 0");

    Rng seed_rng(tcfg.seed);
    Rng init_rng = seed_rng.stream("denoiser-init");
    params_out = diff::ToyDenoiserParams::init(tape, tcfg.denoiser, init_rng);
    params_out.attnf.alpha_f.mutable_data()[0] = 0.0f;

    std::vector<float> sigmas =
        diff::sigma_grid(tcfg.denoiser.sigma_levels, tcfg.denoiser.sigma_min, tcfg.denoiser.sigma_max);
    ToyTrainResult result;

    auto train_phase = [&](int phase, int steps, const std::vector<Tensor>& opt_params) {
        core::Adam adam(opt_params, tcfg.lr);
        Rng phase_rng = seed_rng.stream(phase == 1 ? "phase1" : "phase2");
        for (int s = 0; s < steps; ++s) {
            Rng step_rng = phase_rng.substream(static_cast<uint64_t>(s));
            const SceneLatents& scene = scenes[static_cast<size_t>(s) % scenes.size()];
            int F = scene.clean.frames();

            diff::LatentBlock batch = scene.clean;
            std::optional<Tensor> cond = scene.video_cond;
            std::vector<int> frame_idx = scene.frame_indices;
            if (phase == 1) {
                int f = static_cast<int>(step_rng.uniform_int(static_cast<uint64_t>(F)));
                batch = diff::LatentBlock(core::gather(scene.clean.values, 0, {f}));
                cond = core::gather(scene.video_cond, 0, {f});
                frame_idx = {scene.frame_indices[static_cast<size_t>(f)]};
            }

            diff::ReferenceCondition ref;
            ref.reference_latents = scene.ref_latents;
            Rng mask_rng = step_rng.substream(1);
            ref = diff::apply_random_ref_masking(ref, tcfg.denoiser.p_mask, mask_rng);

            float sigma =
                sigmas[static_cast<size_t>(step_rng.uniform_int(static_cast<uint64_t>(sigmas.size())))];
            Rng noise_rng = step_rng.substream(2);
            Tensor eps = Tensor::constant(
                batch.values.shape(), noise_rng.normal_vec(static_cast<size_t>(batch.values.size())));

            Tape step_tape;
            Tape::Scope scope(step_tape);
            adam.zero_grad();
            Tensor loss = diff::diffusion_eps_loss(params_out, batch, sigma, eps, cond, scene.cam,
                                                   frame_idx, ref);
            float lv = loss.item();
            if (!std::isfinite(lv))
                throw NumericError("non-finite training loss at phase " + std::to_string(phase) +
                                   " step " + std::to_string(s));
            if (result.first_loss < 0.0f) result.first_loss = lv;
            result.last_loss = lv;
            result.history.push_back({phase, s, lv});
            step_tape.backward(loss);
            adam.step();
        }
    };

    std::vector<Tensor> phase1_params;
    for (const auto& [name, t] : params_out.named_parameters())
        if (name != "attnf.alpha_f") phase1_params.push_back(t);
    train_phase(1, tcfg.phase1_steps, phase1_params);
    if (on_phase_end) on_phase_end(1, params_out);

    train_phase(2, tcfg.phase2_steps, params_out.parameters());
    if (on_phase_end) on_phase_end(2, params_out);
    return result;
}

} // namespace s4tk::toytrain
