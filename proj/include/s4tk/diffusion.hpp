#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "s4tk/camera.hpp"
#include "s4tk/errors.hpp"
#include "s4tk/ops.hpp"
#include "s4tk/rng.hpp"
#include "s4tk/tensor.hpp"

// Multi-view video denoiser building blocks: exact attention reshape layouts
// over (F, V, H, W, C) latents, alpha-blended 3D and frame attention with
// camera / frame-index conditioning, reference masking, the CFG ramp, and the
// autoregressive window plan. Attention operators apply projections directly
// to their (embedding-injected) inputs; any normalization is the enclosing
// stack's choice. That keeps the bypass and single-key identities exact.

namespace s4tk::diff {

using core::Shape;
using core::Tape;
using core::Tensor;

// ---------------------------------------------------------------------------
// sinusoidal encodings
// ---------------------------------------------------------------------------

inline constexpr int kEncPairs = 8;
inline constexpr int kPoseEncDim = 6 * kEncPairs;  // elevation 16 + azimuth 32
inline constexpr int kScalarEncDim = 2 * kEncPairs;

// sin/cos ladder with frequencies base, 2*base, 4*base, ...
inline void sinusoidal_pairs(std::vector<float>& out, float t, float base_freq) {
    float f = base_freq;
    for (int k = 0; k < kEncPairs; ++k) {
        out.push_back(std::sin(f * t));
        out.push_back(std::cos(f * t));
        f *= 2.0f;
    }
}

// Azimuth passes through (sin, cos) first so 0 and 360 encode identically.
inline std::vector<float> encode_pose(cam::CameraPose p) {
    cam::CameraPose n = cam::normalized(p);
    std::vector<float> enc;
    enc.reserve(kPoseEncDim);
    float e = geom::deg2rad(n.elevation_deg);
    float a = geom::deg2rad(n.azimuth_deg);
    sinusoidal_pairs(enc, e, 1.0f);
    sinusoidal_pairs(enc, std::sin(a), 1.0f);
    sinusoidal_pairs(enc, std::cos(a), 1.0f);
    return enc;
}

inline std::vector<float> encode_frame_index(int idx) {
    std::vector<float> enc;
    enc.reserve(kScalarEncDim);
    sinusoidal_pairs(enc, static_cast<float>(idx), 0.1f);
    return enc;
}

inline std::vector<float> encode_noise_level(float sigma) {
    std::vector<float> enc;
    enc.reserve(kScalarEncDim);
    sinusoidal_pairs(enc, sigma, 1.0f);
    return enc;
}

// ---------------------------------------------------------------------------
// domain types
// ---------------------------------------------------------------------------

struct LatentBlock {
    Tensor values; // (F, V, H, W, C)

    LatentBlock() : values(Tensor::zeros({1, 1, 1, 1, 1})) {}
    explicit LatentBlock(Tensor t) : values(std::move(t)) {
        if (values.rank() != 5)
            throw DimensionError("latent block must be rank 5 (F,V,H,W,C), got " +
                                 core::shape_str(values.shape()));
    }

    int frames() const { return values.dim(0); }
    int views() const { return values.dim(1); }
    int height() const { return values.dim(2); }
    int width() const { return values.dim(3); }
    int channels() const { return values.dim(4); }
};

struct CameraTrajectory {
    std::vector<cam::CameraPose> poses; // pose 0 is the input view by convention

    static CameraTrajectory orbit(int views, float elevation_deg = 0.0f) {
        CameraTrajectory t;
        for (int v = 0; v < views; ++v)
            t.poses.push_back({elevation_deg, 360.0f * static_cast<float>(v) / static_cast<float>(views)});
        return t;
    }
};

struct AttentionBlockParams {
    int channels = 0;
    Tensor wq, wk, wv, wo;  // (C, C)
    Tensor alpha_3d, alpha_f;     // scalars, clamped to [0,1] at use
    Tensor camera_embed;          // (kPoseEncDim, C)
    Tensor frame_embed;           // (kScalarEncDim, C)

    static AttentionBlockParams init(Tape& tape, int channels, Rng& rng, float alpha_3d_init = 0.5f,
                                     float alpha_f_init = 0.01f) {
        AttentionBlockParams p;
        p.channels = channels;
        float scale = 1.0f / std::sqrt(static_cast<float>(channels));
        auto w = [&](int rows) {
            std::vector<float> data = rng.normal_vec(static_cast<size_t>(rows) * channels);
            for (auto& v : data) v *= scale;
            return tape.leaf({rows, channels}, std::move(data));
        };
        p.wq = w(channels);
        p.wk = w(channels);
        p.wv = w(channels);
        p.wo = w(channels);
        p.alpha_3d = tape.leaf({1}, {alpha_3d_init});
        p.alpha_f = tape.leaf({1}, {alpha_f_init});
        p.camera_embed = w(kPoseEncDim);
        p.frame_embed = w(kScalarEncDim);
        return p;
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const {
        return {{prefix + ".wq", wq},           {prefix + ".wk", wk},
                {prefix + ".wv", wv},           {prefix + ".wo", wo},
                {prefix + ".alpha_3d", alpha_3d}, {prefix + ".alpha_f", alpha_f},
                {prefix + ".camera_embed", camera_embed}, {prefix + ".frame_embed", frame_embed}};
    }
};

struct ReferenceCondition {
    std::optional<Tensor> reference_latents; // (V, H, W, C), frame 0 across views
    bool mask_flag = false;

    bool active() const { return reference_latents.has_value() && !mask_flag; }

    // What downstream cross-attention would receive: zeros when masked.
    Tensor conditioning(int views, int height, int width, int channels) const {
        Shape s{views, height, width, channels};
        if (!reference_latents || mask_flag) return Tensor::zeros(s);
        if (reference_latents->shape() != s)
            throw DimensionError("reference latents shape " + core::shape_str(reference_latents->shape()) +
                                 " does not match " + core::shape_str(s));
        return *reference_latents;
    }
};

// ---------------------------------------------------------------------------
// reshapes between the block layout and attention layouts
// ---------------------------------------------------------------------------

// (F,V,H,W,C) -> ((F*H*W), V, C): tokens are spatial locations across time,
// the sequence axis runs over views.
inline Tensor reshape_for_view_attention(const LatentBlock& l) {
    int F = l.frames(), V = l.views(), H = l.height(), W = l.width(), C = l.channels();
    Tensor t = core::permute(l.values, {0, 2, 3, 1, 4}); // (F,H,W,V,C)
    return core::reshape(t, {F * H * W, V, C});
}

inline LatentBlock inverse_view_attention_reshape(const Tensor& t, int F, int V, int H, int W, int C) {
    Tensor x = core::reshape(t, {F, H, W, V, C});
    return LatentBlock(core::permute(x, {0, 3, 1, 2, 4}));
}

// (F,V,H,W,C) -> (F, (V*H*W), C): per-frame attention over merged view and
// spatial axes. The middle axes are already contiguous, so this is a reshape.
inline Tensor reshape_for_3d_attention(const LatentBlock& l) {
    int F = l.frames(), V = l.views(), H = l.height(), W = l.width(), C = l.channels();
    return core::reshape(l.values, {F, V * H * W, C});
}

inline LatentBlock inverse_3d_attention_reshape(const Tensor& t, int F, int V, int H, int W, int C) {
    return LatentBlock(core::reshape(t, {F, V, H, W, C}));
}

// (F,V,H,W,C) -> ((V*H*W), F, C): sequence axis runs over frames.
inline Tensor reshape_for_frame_attention(const LatentBlock& l) {
    int F = l.frames(), V = l.views(), H = l.height(), W = l.width(), C = l.channels();
    Tensor t = core::permute(l.values, {1, 2, 3, 0, 4}); // (V,H,W,F,C)
    return core::reshape(t, {V * H * W, F, C});
}

inline LatentBlock inverse_frame_attention_reshape(const Tensor& t, int F, int V, int H, int W, int C) {
    Tensor x = core::reshape(t, {V, H, W, F, C});
    return LatentBlock(core::permute(x, {3, 0, 1, 2, 4}));
}

// ---------------------------------------------------------------------------
// attention
// ---------------------------------------------------------------------------

// Scaled dot-product attention over (B, S, C). When extra_condition is given,
// its tokens join the key/value set (cross-attention for reference latents).
inline Tensor attention(const Tensor& seq, const AttentionBlockParams& p,
                        const std::optional<Tensor>& extra_condition = {}) {
    if (seq.rank() != 3) throw DimensionError("attention expects (B,S,C), got " + core::shape_str(seq.shape()));
    int C = seq.dim(2);
    if (C != p.channels)
        throw DimensionError("attention channels " + std::to_string(C) + " vs params " +
                             std::to_string(p.channels));
    Tensor kv_src = seq;
    if (extra_condition) {
        if (extra_condition->rank() != 3 || extra_condition->dim(0) != seq.dim(0) ||
            extra_condition->dim(2) != C)
            throw DimensionError("attention condition shape " + core::shape_str(extra_condition->shape()) +
                                 " incompatible with " + core::shape_str(seq.shape()));
        kv_src = core::concat({seq, *extra_condition}, 1);
    }
    Tensor q = core::matmul(seq, p.wq);
    Tensor k = core::matmul(kv_src, p.wk);
    Tensor v = core::matmul(kv_src, p.wv);
    Tensor scores = core::mul_scalar(core::matmul(q, core::permute(k, {0, 2, 1})),
                                     1.0f / std::sqrt(static_cast<float>(C)));
    Tensor att = core::softmax(scores, 2);
    return core::matmul(core::matmul(att, v), p.wo);
}

// Pure per-image attention over the H*W axis, one sequence per (frame, view).
inline LatentBlock spatial_attention(const LatentBlock& l, const AttentionBlockParams& p) {
    int F = l.frames(), V = l.views(), H = l.height(), W = l.width(), C = l.channels();
    Tensor seq = core::reshape(l.values, {F * V, H * W, C});
    Tensor att = attention(seq, p);
    return LatentBlock(core::reshape(att, {F, V, H, W, C}));
}

namespace detail {

inline Tensor alpha_blend(const Tensor& attended, const Tensor& skip, const Tensor& alpha_raw) {
    Tensor a = core::clamp(alpha_raw, 0.0f, 1.0f);
    Tensor one_minus = core::sub(Tensor::scalar(1.0f), a);
    return core::add(core::mul(a, attended), core::mul(one_minus, skip));
}

} // namespace detail

// out = alpha_3d * attn_3d(l + camera_embedding) + (1 - alpha_3d) * l
inline LatentBlock blended_3d_attention(const LatentBlock& l, const AttentionBlockParams& p,
                                        const CameraTrajectory& cam) {
    int F = l.frames(), V = l.views(), H = l.height(), W = l.width(), C = l.channels();
    if (static_cast<int>(cam.poses.size()) != V)
        throw DimensionError("camera trajectory has " + std::to_string(cam.poses.size()) + " poses for " +
                             std::to_string(V) + " views");

    std::vector<float> enc;
    enc.reserve(static_cast<size_t>(V) * kPoseEncDim);
    for (const auto& pose : cam.poses) {
        auto e = encode_pose(pose);
        enc.insert(enc.end(), e.begin(), e.end());
    }
    Tensor enc_t = Tensor::constant({V, kPoseEncDim}, std::move(enc));
    Tensor emb = core::reshape(core::matmul(enc_t, p.camera_embed), {1, V, 1, 1, C});
    Tensor x = core::add(l.values, emb);

    Tensor seq = reshape_for_3d_attention(LatentBlock(x));
    Tensor att = attention(seq, p);
    Tensor gamma = core::reshape(att, {F, V, H, W, C});
    return LatentBlock(detail::alpha_blend(gamma, l.values, p.alpha_3d));
}

// out = alpha_f * attn_frames(l + frame_embedding) + (1 - alpha_f) * l
// Present, unmasked reference latents contribute one extra key/value token
// per view-position; a masked or absent reference leaves plain self-attention.
inline LatentBlock blended_frame_attention(const LatentBlock& l, const AttentionBlockParams& p,
                                           const std::vector<int>& frame_indices,
                                           const ReferenceCondition& ref) {
    int F = l.frames(), V = l.views(), H = l.height(), W = l.width(), C = l.channels();
    if (static_cast<int>(frame_indices.size()) != F)
        throw DimensionError("frame index list has " + std::to_string(frame_indices.size()) +
                             " entries for F=" + std::to_string(F));

    std::vector<float> enc;
    enc.reserve(static_cast<size_t>(F) * kScalarEncDim);
    for (int idx : frame_indices) {
        auto e = encode_frame_index(idx);
        enc.insert(enc.end(), e.begin(), e.end());
    }
    Tensor enc_t = Tensor::constant({F, kScalarEncDim}, std::move(enc));
    Tensor emb = core::reshape(core::matmul(enc_t, p.frame_embed), {F, 1, 1, 1, C});
    Tensor x = core::add(l.values, emb);

    Tensor seq = reshape_for_frame_attention(LatentBlock(x));
    std::optional<Tensor> extra;
    if (ref.active()) {
        const Tensor& r = *ref.reference_latents;
        if (r.shape() != Shape{V, H, W, C})
            throw DimensionError("reference latents " + core::shape_str(r.shape()) + " for block " +
                                 core::shape_str(l.values.shape()));
        extra = core::reshape(r, {V * H * W, 1, C});
    }
    Tensor att = attention(seq, p, extra);
    Tensor gamma = inverse_frame_attention_reshape(att, F, V, H, W, C).values;
    return LatentBlock(detail::alpha_blend(gamma, l.values, p.alpha_f));
}

// ---------------------------------------------------------------------------
// reference masking / CFG / windows
// ---------------------------------------------------------------------------

inline ReferenceCondition apply_random_ref_masking(ReferenceCondition ref, float p_mask, Rng& rng) {
    if (p_mask < 0.0f || p_mask > 1.0f)
        throw ConfigError("p_mask " + std::to_string(p_mask) + " outside [0, 1]");
    ref.mask_flag = rng.bernoulli(p_mask);
    return ref;
}

// Linear ramp from s_min at the anchor cell, driven by whichever of the view
// or frame index is proportionally farther along.
inline float cfg_scale_schedule(float s_min, float s_max, int view_idx, int views, int frame_idx, int frames) {
    if (views < 1 || frames < 1) throw ConfigError("cfg schedule: V and F must be >= 1");
    if (s_min > s_max) throw ConfigError("cfg schedule: s_min > s_max");
    if (view_idx < 0 || view_idx >= views)
        throw ConfigError("cfg schedule: view index " + std::to_string(view_idx) + " outside [0, " +
                          std::to_string(views) + ")");
    if (frame_idx < 0 || frame_idx >= frames)
        throw ConfigError("cfg schedule: frame index " + std::to_string(frame_idx) + " outside [0, " +
                          std::to_string(frames) + ")");
    float vd = views > 1 ? static_cast<float>(view_idx) / static_cast<float>(views - 1) : 0.0f;
    float fd = frames > 1 ? static_cast<float>(frame_idx) / static_cast<float>(frames - 1) : 0.0f;
    return s_min + (s_max - s_min) * std::max(vd, fd);
}

struct ExtensionWindow {
    int start = 0, end = 0;  // frame range [start, end)
    int anchor_frame = -1;   // -1: unconditioned first window (masked ref)
};

// Tiles [0, total) with windows overlapping by one frame; each window after
// the first is anchored on the previous window's last frame.
inline std::vector<ExtensionWindow> autoregressive_extension_plan(int total_frames, int window_frames) {
    if (window_frames < 2) throw ConfigError("extension plan: window must span at least 2 frames");
    if (total_frames < 1) throw ConfigError("extension plan: need at least 1 frame");
    std::vector<ExtensionWindow> plan;
    if (total_frames <= window_frames) {
        plan.push_back({0, total_frames, -1});
        return plan;
    }
    plan.push_back({0, window_frames, -1});
    while (plan.back().end < total_frames) {
        int start = plan.back().end - 1;
        int end = std::min(start + window_frames, total_frames);
        plan.push_back({start, end, start});
    }
    return plan;
}

// ---------------------------------------------------------------------------
// noise schedule and training objective
// ---------------------------------------------------------------------------

inline std::vector<float> sigma_grid(int levels, float sigma_min = 0.02f, float sigma_max = 1.0f) {
    if (levels < 1) throw ConfigError("sigma grid needs at least 1 level");
    if (sigma_min <= 0.0f || sigma_min > sigma_max) throw ConfigError("sigma grid: bad range");
    std::vector<float> g(static_cast<size_t>(levels));
    for (int i = 0; i < levels; ++i)
        g[static_cast<size_t>(i)] =
            levels > 1 ? sigma_min + (sigma_max - sigma_min) * static_cast<float>(i) / static_cast<float>(levels - 1)
                       : sigma_min;
    return g;
}

// ---------------------------------------------------------------------------
// toy denoiser
// ---------------------------------------------------------------------------

struct ToyDenoiserConfig {
    int channels = 8;
    float alpha_3d_init = 0.5f;
    float alpha_f_init = 0.01f;
    float p_mask = 0.5f;
    float cfg_min = 1.5f;
    float cfg_max = 3.0f;
    int sigma_levels = 50;
    float sigma_min = 0.02f;
    float sigma_max = 1.0f;
};

struct ToyDenoiserParams {
    int channels = 0;
    Tensor w_in, b_in;   // channel projection in
    Tensor w_cond;       // input-video conditioning projection
    Tensor w_noise;      // noise-level embedding projection
    AttentionBlockParams spatial, attn3d, attnf;
    Tensor w_out, b_out; // zero-initialized: predicted noise starts at 0

    static ToyDenoiserParams init(Tape& tape, const ToyDenoiserConfig& cfg, Rng& rng) {
        ToyDenoiserParams p;
        int C = cfg.channels;
        p.channels = C;
        float scale = 1.0f / std::sqrt(static_cast<float>(C));
        auto w = [&](int rows) {
            std::vector<float> data = rng.normal_vec(static_cast<size_t>(rows) * C);
            for (auto& v : data) v *= scale;
            return tape.leaf({rows, C}, std::move(data));
        };
        p.w_in = w(C);
        p.b_in = tape.leaf({C}, std::vector<float>(static_cast<size_t>(C), 0.0f));
        p.w_cond = w(C);
        p.w_noise = w(kScalarEncDim);
        p.spatial = AttentionBlockParams::init(tape, C, rng, cfg.alpha_3d_init, cfg.alpha_f_init);
        p.attn3d = AttentionBlockParams::init(tape, C, rng, cfg.alpha_3d_init, cfg.alpha_f_init);
        p.attnf = AttentionBlockParams::init(tape, C, rng, cfg.alpha_3d_init, cfg.alpha_f_init);
        p.w_out = tape.leaf({C, C}, std::vector<float>(static_cast<size_t>(C) * C, 0.0f));
        p.b_out = tape.leaf({C}, std::vector<float>(static_cast<size_t>(C), 0.0f));
        return p;
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out = {
            {"w_in", w_in}, {"b_in", b_in}, {"w_cond", w_cond}, {"w_noise", w_noise},
            {"w_out", w_out}, {"b_out", b_out}};
        for (auto& [n, t] : spatial.named_parameters("spatial")) out.emplace_back(n, t);
        for (auto& [n, t] : attn3d.named_parameters("attn3d")) out.emplace_back(n, t);
        for (auto& [n, t] : attnf.named_parameters("attnf")) out.emplace_back(n, t);
        return out;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (auto& [n, t] : named_parameters()) out.push_back(t);
        return out;
    }
};

namespace detail {

inline Tensor channel_project(const Tensor& block, const Tensor& w, const Tensor* bias = nullptr) {
    Shape s = block.shape();
    int C = s.back();
    int64_t n = block.size() / C;
    Tensor flat = core::reshape(block, {static_cast<int>(n), C});
    Tensor out = core::matmul(flat, w);
    if (bias) out = core::add(out, *bias);
    return core::reshape(out, s);
}

} // namespace detail

// conv-in -> spatial attention (residual) -> blended 3D attention ->
// blended frame attention -> conv-out, with noise-level and optional
// input-video conditioning added channel-wise after conv-in.
inline LatentBlock toy_denoiser_forward(const ToyDenoiserParams& p, const LatentBlock& noisy, float noise_level,
                                        const std::optional<Tensor>& input_video_cond,
                                        const CameraTrajectory& cam, const std::vector<int>& frame_indices,
                                        const ReferenceCondition& ref) {
    int F = noisy.frames(), V = noisy.views(), H = noisy.height(), W = noisy.width(), C = noisy.channels();
    if (C != p.channels)
        throw DimensionError("denoiser channels " + std::to_string(p.channels) + " vs latent " +
                             std::to_string(C));

    Tensor x = detail::channel_project(noisy.values, p.w_in, &p.b_in);

    if (input_video_cond) {
        if (input_video_cond->shape() != Shape{F, H, W, C})
            throw DimensionError("video conditioning " + core::shape_str(input_video_cond->shape()) +
                                 " for block " + core::shape_str(noisy.values.shape()));
        Tensor vc = detail::channel_project(*input_video_cond, p.w_cond);
        x = core::add(x, core::reshape(vc, {F, 1, H, W, C}));
    }

    Tensor noise_enc = Tensor::constant({1, kScalarEncDim}, encode_noise_level(noise_level));
    Tensor noise_emb = core::reshape(core::matmul(noise_enc, p.w_noise), {C});
    x = core::add(x, noise_emb);

    LatentBlock b(x);
    b = LatentBlock(core::add(b.values, spatial_attention(b, p.spatial).values));
    b = blended_3d_attention(b, p.attn3d, cam);
    b = blended_frame_attention(b, p.attnf, frame_indices, ref);
    return LatentBlock(detail::channel_project(b.values, p.w_out, &p.b_out));
}

// Noise-prediction objective: corrupt clean latents with level-n noise and
// score the predicted noise against the sample actually used.
inline Tensor diffusion_eps_loss(const ToyDenoiserParams& p, const LatentBlock& clean, float sigma,
                                 const Tensor& eps, const std::optional<Tensor>& input_video_cond,
                                 const CameraTrajectory& cam, const std::vector<int>& frame_indices,
                                 const ReferenceCondition& ref) {
    if (eps.shape() != clean.values.shape())
        throw DimensionError("noise sample shape " + core::shape_str(eps.shape()) + " vs latents " +
                             core::shape_str(clean.values.shape()));
    Tensor noisy = core::add(clean.values, core::mul_scalar(eps, sigma));
    LatentBlock pred = toy_denoiser_forward(p, LatentBlock(noisy), sigma, input_video_cond, cam,
                                            frame_indices, ref);
    return core::mean_squared(eps, pred.values);
}

} // namespace s4tk::diff
