#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "s4tk/camera.hpp"
#include "s4tk/errors.hpp"
#include "s4tk/hash_grid.hpp"
#include "s4tk/image.hpp"
#include "s4tk/ops.hpp"
#include "s4tk/rng.hpp"

// Dynamic neural radiance field: a canonical density/color field over a
// multi-resolution hash grid, plus a time-conditioned deformation MLP that
// maps query points into canonical space. Rendering is emission-absorption
// volume integration along orbital-camera rays, batched so that a whole ray
// packet runs through a handful of fused tensor ops.

namespace s4tk::nerf {

// ---------------------------------------------------------------------------
// small MLP
// ---------------------------------------------------------------------------

struct MlpParams {
    std::vector<Tensor> weights; // layer i: (dims[i], dims[i+1])
    std::vector<Tensor> biases;  // layer i: (dims[i+1])

    // Softplus hidden activations (smooth everywhere, which keeps
    // finite-difference gradient probes honest); linear output layer.
    static MlpParams init(Tape& tape, const std::vector<int>& dims, Rng& rng, bool zero_final = false) {
        if (dims.size() < 2) throw ConfigError("mlp: need at least input and output dims");
        MlpParams m;
        for (size_t i = 0; i + 1 < dims.size(); ++i) {
            int in = dims[i], out = dims[i + 1];
            bool last = i + 2 == dims.size();
            std::vector<float> w(static_cast<size_t>(in) * out, 0.0f);
            if (!(last && zero_final)) {
                w = rng.normal_vec(w.size());
                float scale = 1.0f / std::sqrt(static_cast<float>(in));
                for (auto& v : w) v *= scale;
            }
            m.weights.push_back(tape.leaf({in, out}, std::move(w)));
            m.biases.push_back(tape.leaf({out}, std::vector<float>(static_cast<size_t>(out), 0.0f)));
        }
        return m;
    }

    Tensor forward(const Tensor& x) const {
        Tensor h = x;
        for (size_t i = 0; i < weights.size(); ++i) {
            h = core::add(core::matmul(h, weights[i]), biases[i]);
            if (i + 1 < weights.size()) h = core::softplus(h);
        }
        return h;
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (size_t i = 0; i < weights.size(); ++i) {
            out.emplace_back(prefix + ".w" + std::to_string(i), weights[i]);
            out.emplace_back(prefix + ".b" + std::to_string(i), biases[i]);
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

struct DynNerfConfig {
    HashGridConfig grid;
    int frames = 1;
    int time_embed_dim = 8;
    int hidden_width = 64;
    int posenc_freqs = 4;
};

struct DynNerfModel {
    DynNerfConfig config;
    HashGrid grid;
    MlpParams mlp_sigma;   // hash features -> density logit
    MlpParams mlp_color;   // hash features -> rgb logits
    MlpParams mlp_deform;  // posenc(x) + time embedding -> offset, zero at init
    Tensor time_embedding; // (frames, time_embed_dim)

    static DynNerfModel init(Tape& tape, const DynNerfConfig& cfg, Rng& rng) {
        if (cfg.frames < 1) throw ConfigError("dyn-nerf: frames must be >= 1");
        DynNerfModel m;
        m.config = cfg;
        m.grid = HashGrid::init(tape, cfg.grid, rng);
        int D = cfg.grid.feature_dim(), H = cfg.hidden_width;
        m.mlp_sigma = MlpParams::init(tape, {D, H, H, 1}, rng);
        m.mlp_color = MlpParams::init(tape, {D, H, H, 3}, rng);
        int deform_in = 3 + 6 * cfg.posenc_freqs + cfg.time_embed_dim;
        m.mlp_deform = MlpParams::init(tape, {deform_in, H, H, H, 3}, rng, /*zero_final=*/true);
        m.time_embedding = tape.leaf(
            {cfg.frames, cfg.time_embed_dim},
            rng.normal_vec(static_cast<size_t>(cfg.frames) * cfg.time_embed_dim, 0.0f, 0.1f));
        return m;
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (size_t l = 0; l < grid.tables.size(); ++l)
            out.emplace_back("grid.l" + std::to_string(l), grid.tables[l]);
        for (auto& [n, t] : mlp_sigma.named_parameters("sigma")) out.emplace_back(n, t);
        for (auto& [n, t] : mlp_color.named_parameters("color")) out.emplace_back(n, t);
        for (auto& [n, t] : mlp_deform.named_parameters("deform")) out.emplace_back(n, t);
        out.emplace_back("time_embedding", time_embedding);
        return out;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (auto& [n, t] : named_parameters()) out.push_back(t);
        return out;
    }
};

// ---------------------------------------------------------------------------
// field queries
// ---------------------------------------------------------------------------

struct FieldSample {
    Tensor sigma; // (N, 1), nonnegative
    Tensor color; // (N, 3) in (0, 1)
};

// [x, sin(2^k x), cos(2^k x) for k < freqs], concatenated channel-wise.
inline Tensor positional_encoding(const Tensor& x, int freqs) {
    std::vector<Tensor> parts = {x};
    for (int k = 0; k < freqs; ++k) {
        float f = static_cast<float>(1 << k);
        parts.push_back(core::sin(core::mul_scalar(x, f)));
        parts.push_back(core::cos(core::mul_scalar(x, f)));
    }
    return core::concat(parts, 1);
}

inline FieldSample query_canonical(const DynNerfModel& m, const Tensor& positions) {
    Tensor feat = hashgrid_lookup(m.grid, positions);
    return {core::softplus(m.mlp_sigma.forward(feat)), core::sigmoid(m.mlp_color.forward(feat))};
}

// Time embedding row, linearly interpolated for fractional frames.
inline Tensor time_embedding_at(const DynNerfModel& m, float frame) {
    int F = m.config.frames;
    if (!(frame >= 0.0f && frame <= static_cast<float>(F - 1)))
        throw IndexError("frame " + std::to_string(frame) + " outside [0, " + std::to_string(F - 1) + "]");
    int i0 = static_cast<int>(std::floor(frame));
    float w = frame - static_cast<float>(i0);
    Tensor row0 = core::slice(m.time_embedding, 0, i0, 1);
    if (w == 0.0f) return row0;
    Tensor row1 = core::slice(m.time_embedding, 0, i0 + 1, 1);
    return core::add(core::mul_scalar(row0, 1.0f - w), core::mul_scalar(row1, w));
}

// Offset into canonical space for each query point at the given frame.
inline Tensor deformation(const DynNerfModel& m, const Tensor& positions, float frame) {
    int N = positions.shape()[0];
    Tensor t = time_embedding_at(m, frame); // (1, E)
    Tensor enc = positional_encoding(positions, m.config.posenc_freqs);
    Tensor tin = core::broadcast_to(t, {N, m.config.time_embed_dim});
    return m.mlp_deform.forward(core::concat({enc, tin}, 1));
}

inline FieldSample query_field(const DynNerfModel& m, const Tensor& positions, float frame) {
    Tensor canon = core::add(positions, deformation(m, positions, frame));
    return query_canonical(m, canon);
}

inline std::pair<float, geom::Vec3> query_field_point(const DynNerfModel& m, const geom::Vec3& x, float frame) {
    Tensor p = Tensor::constant({1, 3}, {x.x, x.y, x.z});
    FieldSample fs = query_field(m, p, frame);
    return {fs.sigma.at({0, 0}), {fs.color.at({0, 0}), fs.color.at({0, 1}), fs.color.at({0, 2})}};
}

// ---------------------------------------------------------------------------
// volume rendering
// ---------------------------------------------------------------------------

struct RenderConfig {
    int n_samples = 64;
    bool jitter = true;             // stratified sample offsets; false = bin midpoints
    bool white_background = true;   // composite rgb onto white in render_view
    float normal_threshold = 0.5f;  // silhouette level that gets a surface normal
    float normal_step = 1e-3f;      // finite-difference probe step for normals
    int chunk_pixels = 512;         // render_view ray-batch granularity
};

struct RayBatchRender {
    Tensor rgb;   // (R, 3) premultiplied by opacity, black background
    Tensor alpha; // (R, 1) accumulated opacity
    Tensor depth; // (R, 1) expected ray distance (0 for empty rays)
};

// Emission-absorption compositing over stratified samples. `field` maps a
// (N, 3) position tensor to a FieldSample; gradients flow through it.
template <class Field>
RayBatchRender render_rays_with(Field&& field, const std::vector<cam::Ray>& rays, int n_samples,
                                Rng* jitter_rng = nullptr) {
    if (n_samples < 2) throw ConfigError("render: n_samples must be >= 2");
    if (rays.empty()) throw ConfigError("render: empty ray batch");
    const int R = static_cast<int>(rays.size());
    const int S = n_samples;

    std::vector<float> pos(static_cast<size_t>(R) * S * 3);
    std::vector<float> tv(static_cast<size_t>(R) * S);
    std::vector<float> dv(static_cast<size_t>(R));
    for (int r = 0; r < R; ++r) {
        const cam::Ray& ray = rays[static_cast<size_t>(r)];
        if (!(ray.t_near < ray.t_far))
            throw GeometryError("render: ray has t_near " + std::to_string(ray.t_near) +
                                " >= t_far " + std::to_string(ray.t_far));
        float bin = (ray.t_far - ray.t_near) / static_cast<float>(S);
        dv[static_cast<size_t>(r)] = bin;
        for (int i = 0; i < S; ++i) {
            float u = jitter_rng ? jitter_rng->uniform() : 0.5f;
            float t = ray.t_near + (static_cast<float>(i) + u) * bin;
            tv[static_cast<size_t>(r) * S + i] = t;
            geom::Vec3 p = ray.origin + t * ray.direction;
            size_t o = (static_cast<size_t>(r) * S + i) * 3;
            pos[o] = p.x;
            pos[o + 1] = p.y;
            pos[o + 2] = p.z;
        }
    }

    Tensor positions = Tensor::constant({R * S, 3}, std::move(pos));
    FieldSample fs = field(positions);
    if (fs.sigma.shape() != Shape{R * S, 1} || fs.color.shape() != Shape{R * S, 3})
        throw DimensionError("render: field returned sigma " + core::shape_str(fs.sigma.shape()) +
                             ", color " + core::shape_str(fs.color.shape()));

    Tensor sigma = core::reshape(fs.sigma, {R, S});
    Tensor delta = Tensor::constant({R, 1}, std::move(dv));
    Tensor survive = core::exp(core::neg(core::mul(sigma, delta)));     // 1 - alpha_i
    Tensor alpha_i = core::add_scalar(core::neg(survive), 1.0f);
    Tensor trans = core::exclusive_cumprod(survive, 1);                 // T_i
    Tensor weight = core::mul(trans, alpha_i);                          // (R, S)

    Tensor color = core::reshape(fs.color, {R, S, 3});
    Tensor rgb = core::reduce_sum_axis(core::mul(core::reshape(weight, {R, S, 1}), color), 1, false);
    Tensor acc = core::reduce_sum_axis(weight, 1, true);                // (R, 1)
    Tensor tvals = Tensor::constant({R, S}, std::move(tv));
    Tensor depth = core::div(core::reduce_sum_axis(core::mul(weight, tvals), 1, true),
                             core::clamp(acc, 1e-6f, 2.0f));
    return {rgb, acc, depth};
}

inline RayBatchRender render_rays(const DynNerfModel& m, const std::vector<cam::Ray>& rays, float frame,
                                  int n_samples, Rng* jitter_rng = nullptr) {
    return render_rays_with([&](const Tensor& p) { return query_field(m, p, frame); }, rays, n_samples,
                            jitter_rng);
}

inline std::tuple<geom::Vec3, float, float> render_ray(const DynNerfModel& m, const cam::Ray& ray,
                                                       float frame, int n_samples,
                                                       Rng* jitter_rng = nullptr) {
    RayBatchRender out = render_rays(m, {ray}, frame, n_samples, jitter_rng);
    return {{out.rgb.at({0, 0}), out.rgb.at({0, 1}), out.rgb.at({0, 2})},
            out.alpha.at({0, 0}),
            out.depth.at({0, 0})};
}

struct RenderOutput {
    img::ImageF rgb;        // H x W x 3
    img::ImageF silhouette; // H x W x 1
    img::ImageF depth;      // H x W x 1
    img::ImageF normal;     // H x W x 3, zero outside the silhouette
};

// Full-image render: per-pixel rays in chunks, then a finite-difference
// density probe for surface normals where the silhouette is solid.
template <class Field>
RenderOutput render_view_with(Field&& field, cam::CameraPose pose, int height, int width,
                              const cam::OrbitalCamera& camera = {}, const RenderConfig& rc = {},
                              Rng* jitter_rng = nullptr) {
    RenderOutput out{img::ImageF(height, width, 3), img::ImageF(height, width, 1),
                     img::ImageF(height, width, 1), img::ImageF(height, width, 3)};

    std::vector<cam::Ray> all_rays(static_cast<size_t>(height) * width);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
            all_rays[static_cast<size_t>(r) * width + c] = camera.pixel_ray(pose, r, c, height, width);

    int total = height * width;
    int chunk = std::max(1, rc.chunk_pixels);
    for (int start = 0; start < total; start += chunk) {
        int count = std::min(chunk, total - start);
        std::vector<cam::Ray> rays(all_rays.begin() + start, all_rays.begin() + start + count);
        RayBatchRender rb = render_rays_with(field, rays, rc.n_samples, rc.jitter ? jitter_rng : nullptr);
        for (int i = 0; i < count; ++i) {
            int pix = start + i;
            float a = rb.alpha.at({i, 0});
            float bg = rc.white_background ? 1.0f - a : 0.0f;
            for (int ch = 0; ch < 3; ++ch)
                out.rgb.data[static_cast<size_t>(pix) * 3 + ch] = rb.rgb.at({i, ch}) + bg;
            out.silhouette.data[static_cast<size_t>(pix)] = a;
            out.depth.data[static_cast<size_t>(pix)] = rb.depth.at({i, 0});
        }
    }

    // Normals: central differences of density around the expected surface
    // point, pointing against the density gradient (outward).
    auto comp = [](geom::Vec3& v, int k) -> float& { return k == 0 ? v.x : k == 1 ? v.y : v.z; };
    std::vector<int> fg;
    for (int pix = 0; pix < total; ++pix)
        if (out.silhouette.data[static_cast<size_t>(pix)] > rc.normal_threshold) fg.push_back(pix);
    float h = rc.normal_step;
    for (size_t start = 0; start < fg.size(); start += static_cast<size_t>(chunk)) {
        size_t count = std::min(static_cast<size_t>(chunk), fg.size() - start);
        std::vector<float> probes(count * 6 * 3);
        for (size_t i = 0; i < count; ++i) {
            int pix = fg[start + i];
            const cam::Ray& ray = all_rays[static_cast<size_t>(pix)];
            geom::Vec3 p = ray.origin + out.depth.data[static_cast<size_t>(pix)] * ray.direction;
            for (int k = 0; k < 3; ++k)
                for (int s = 0; s < 2; ++s) {
                    geom::Vec3 q = p;
                    comp(q, k) += s == 0 ? h : -h;
                    size_t o = (i * 6 + static_cast<size_t>(k * 2 + s)) * 3;
                    probes[o] = q.x;
                    probes[o + 1] = q.y;
                    probes[o + 2] = q.z;
                }
        }
        Tensor pts = Tensor::constant({static_cast<int>(count) * 6, 3}, std::move(probes));
        FieldSample fs = field(pts);
        for (size_t i = 0; i < count; ++i) {
            geom::Vec3 g;
            for (int k = 0; k < 3; ++k) {
                float plus = fs.sigma.at({static_cast<int>(i) * 6 + k * 2, 0});
                float minus = fs.sigma.at({static_cast<int>(i) * 6 + k * 2 + 1, 0});
                comp(g, k) = (plus - minus) / (2.0f * h);
            }
            float n = geom::norm(g);
            if (n > 1e-9f) {
                geom::Vec3 nv = (-1.0f / n) * g;
                int pix = fg[start + i];
                for (int k = 0; k < 3; ++k)
                    out.normal.data[static_cast<size_t>(pix) * 3 + k] = comp(nv, k);
            }
        }
    }
    return out;
}

inline RenderOutput render_view(const DynNerfModel& m, cam::CameraPose pose, float frame, int height,
                                int width, const cam::OrbitalCamera& camera = {},
                                const RenderConfig& rc = {}, Rng* jitter_rng = nullptr) {
    return render_view_with([&](const Tensor& p) { return query_field(m, p, frame); }, pose, height,
                            width, camera, rc, jitter_rng);
}

} // namespace s4tk::nerf
