#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "s4tk/camera.hpp"
#include "s4tk/errors.hpp"
#include "s4tk/image_matrix.hpp"
#include "vendor/json.hpp"

// Analytic SDF scenes: animated unions of spheres, boxes, and capsules with
// rigid per-primitive motion, sphere-traced into exact RGBA / depth / normal
// maps. Stands in as deterministic ground truth for fitting and evaluation.

namespace s4tk::sdf {

using geom::Vec3;

enum class PrimitiveKind { sphere, box, capsule };

// translation(t) = axis * amplitude * sin(2*pi*frequency*t + phase)
struct Motion {
    Vec3 axis{0.0f, 1.0f, 0.0f};
    float amplitude = 0.0f;
    float frequency = 1.0f;
    float phase = 0.0f;

    Vec3 offset(float time) const {
        return axis * (amplitude * std::sin(2.0f * geom::kPi * frequency * time + phase));
    }
};

struct Spin {
    Vec3 axis{0.0f, 0.0f, 1.0f};
    float deg_per_sec = 0.0f;
};

struct Primitive {
    PrimitiveKind kind = PrimitiveKind::sphere;
    Vec3 center{};
    float radius = 0.25f;       // sphere, capsule
    Vec3 half_extents{0.25f, 0.25f, 0.25f}; // box
    Vec3 p0{}, p1{};            // capsule endpoints, relative to center
    Vec3 albedo{0.8f, 0.8f, 0.8f};
    Motion motion;
    Spin spin;
    // Optional two-tone shading: albedo2 on the negative side of split_axis
    // in the primitive's own (unrotated) frame.
    std::optional<Vec3> albedo2;
    Vec3 split_axis{1.0f, 0.0f, 0.0f};
};

namespace detail {

inline Vec3 rotate_axis_angle(Vec3 v, Vec3 axis, float angle_rad) {
    Vec3 k = geom::normalized(axis);
    float c = std::cos(angle_rad), s = std::sin(angle_rad);
    return v * c + geom::cross(k, v) * s + k * (geom::dot(k, v) * (1.0f - c));
}

inline float sd_sphere(Vec3 q, float r) { return geom::norm(q) - r; }

inline float sd_box(Vec3 q, Vec3 b) {
    Vec3 d = geom::abs3(q) - b;
    Vec3 outside = geom::max3(d, Vec3{});
    float inside = std::min(std::max(d.x, std::max(d.y, d.z)), 0.0f);
    return geom::norm(outside) + inside;
}

inline float sd_capsule(Vec3 q, Vec3 a, Vec3 b, float r) {
    Vec3 pa = q - a, ba = b - a;
    float denom = geom::dot(ba, ba);
    float h = denom > 0.0f ? std::min(1.0f, std::max(0.0f, geom::dot(pa, ba) / denom)) : 0.0f;
    return geom::norm(pa - ba * h) - r;
}

} // namespace detail

// Query point mapped into the primitive's local frame at the given time.
inline Vec3 to_local(const Primitive& pr, Vec3 p, float time) {
    Vec3 q = p - pr.center - pr.motion.offset(time);
    if (pr.spin.deg_per_sec != 0.0f)
        q = detail::rotate_axis_angle(q, pr.spin.axis,
                                      -geom::deg2rad(pr.spin.deg_per_sec * time));
    return q;
}

inline float primitive_sdf(const Primitive& pr, Vec3 p, float time) {
    Vec3 q = to_local(pr, p, time);
    switch (pr.kind) {
    case PrimitiveKind::sphere: return detail::sd_sphere(q, pr.radius);
    case PrimitiveKind::box: return detail::sd_box(q, pr.half_extents);
    case PrimitiveKind::capsule: return detail::sd_capsule(q, pr.p0, pr.p1, pr.radius);
    }
    return 1e30f;
}

inline Vec3 primitive_albedo(const Primitive& pr, Vec3 p, float time) {
    if (!pr.albedo2) return pr.albedo;
    Vec3 q = to_local(pr, p, time);
    return geom::dot(q, pr.split_axis) >= 0.0f ? pr.albedo : *pr.albedo2;
}

struct SdfScene {
    float frame_rate = 12.0f;
    std::vector<Primitive> primitives;

    float sdf(Vec3 p, float time, int* nearest = nullptr) const {
        float best = 1e30f;
        for (size_t i = 0; i < primitives.size(); ++i) {
            float d = primitive_sdf(primitives[i], p, time);
            if (d < best) {
                best = d;
                if (nearest) *nearest = static_cast<int>(i);
            }
        }
        return best;
    }

    Vec3 normal(Vec3 p, float time) const {
        const float h = 1e-4f;
        Vec3 g{sdf({p.x + h, p.y, p.z}, time) - sdf({p.x - h, p.y, p.z}, time),
               sdf({p.x, p.y + h, p.z}, time) - sdf({p.x, p.y - h, p.z}, time),
               sdf({p.x, p.y, p.z + h}, time) - sdf({p.x, p.y, p.z - h}, time)};
        return geom::normalized(g);
    }
};

// ---------------------------------------------------------------------------
// JSON scene specs
// ---------------------------------------------------------------------------

namespace detail {

inline Vec3 vec3_of(const nlohmann::json& j, const char* key, Vec3 fallback) {
    if (!j.contains(key)) return fallback;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 3)
        throw SceneSpecError(std::string(key) + " must be an array of 3 numbers");
    return {a[0].get<float>(), a[1].get<float>(), a[2].get<float>()};
}

} // namespace detail

inline SdfScene parse_scene_spec(const nlohmann::json& j) {
    SdfScene scene;
    scene.frame_rate = j.value("frame_rate", 12.0f);
    if (!j.contains("primitives") || !j.at("primitives").is_array() || j.at("primitives").empty())
        throw SceneSpecError("scene spec needs a non-empty 'primitives' array");
    for (const auto& pj : j.at("primitives")) {
        Primitive pr;
        std::string kind = pj.value("type", "");
        if (kind == "sphere") {
            pr.kind = PrimitiveKind::sphere;
            pr.radius = pj.value("radius", 0.25f);
        } else if (kind == "box") {
            pr.kind = PrimitiveKind::box;
            pr.half_extents = detail::vec3_of(pj, "half_extents", {0.25f, 0.25f, 0.25f});
        } else if (kind == "capsule") {
            pr.kind = PrimitiveKind::capsule;
            pr.p0 = detail::vec3_of(pj, "p0", {0.0f, 0.0f, -0.2f});
            pr.p1 = detail::vec3_of(pj, "p1", {0.0f, 0.0f, 0.2f});
            pr.radius = pj.value("radius", 0.1f);
        } else {
            throw SceneSpecError("unknown primitive type '" + kind + "'");
        }
        pr.center = detail::vec3_of(pj, "center", {});
        pr.albedo = detail::vec3_of(pj, "albedo", {0.8f, 0.8f, 0.8f});
        if (pj.contains("albedo2")) {
            pr.albedo2 = detail::vec3_of(pj, "albedo2", {});
            pr.split_axis = detail::vec3_of(pj, "split_axis", {1.0f, 0.0f, 0.0f});
        }
        if (pj.contains("motion")) {
            const auto& mj = pj.at("motion");
            std::string mtype = mj.value("type", "oscillate");
            if (mtype != "oscillate" && mtype != "none")
                throw SceneSpecError("unknown motion type '" + mtype + "'");
            if (mtype == "oscillate") {
                pr.motion.axis = detail::vec3_of(mj, "axis", {0.0f, 1.0f, 0.0f});
                pr.motion.amplitude = mj.value("amplitude", 0.0f);
                pr.motion.frequency = mj.value("frequency", 1.0f);
                pr.motion.phase = mj.value("phase", 0.0f);
            }
        }
        if (pj.contains("spin")) {
            const auto& sj = pj.at("spin");
            pr.spin.axis = detail::vec3_of(sj, "axis", {0.0f, 0.0f, 1.0f});
            pr.spin.deg_per_sec = sj.value("degrees_per_second", 0.0f);
        }
        scene.primitives.push_back(pr);
    }
    return scene;
}

inline SdfScene load_scene_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open scene spec: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SceneSpecError("bad scene spec " + path + ": " + e.what());
    }
    return parse_scene_spec(j);
}

/// Default fixture: a two-tone sphere bobbing on Y above a static box base.
inline SdfScene make_demo_scene() {
    SdfScene s;
    Primitive ball;
    ball.kind = PrimitiveKind::sphere;
    ball.radius = 0.28f;
    ball.center = {0.0f, 0.0f, 0.12f};
    ball.albedo = {0.85f, 0.25f, 0.2f};
    ball.albedo2 = Vec3{0.2f, 0.45f, 0.85f};
    ball.split_axis = {1.0f, 0.0f, 0.0f};
    ball.motion = {{0.0f, 1.0f, 0.0f}, 0.12f, 1.0f, 0.0f};
    s.primitives.push_back(ball);

    Primitive base;
    base.kind = PrimitiveKind::box;
    base.half_extents = {0.34f, 0.34f, 0.05f};
    base.center = {0.0f, 0.0f, -0.32f};
    base.albedo = {0.35f, 0.7f, 0.35f};
    s.primitives.push_back(base);
    return s;
}

// ---------------------------------------------------------------------------
// pseudo ground-truth rendering
// ---------------------------------------------------------------------------

struct PseudoDataset {
    img::ImageMatrix images;        // RGBA, alpha = exact silhouette
    std::vector<img::ImageF> depth; // H x W x 1, ray distance (0 = miss)
    std::vector<img::ImageF> normal; // H x W x 3, world-space unit normals

    const img::ImageF& depth_cell(int v, int f) const {
        return depth[static_cast<size_t>(v) * images.frames + f];
    }
    const img::ImageF& normal_cell(int v, int f) const {
        return normal[static_cast<size_t>(v) * images.frames + f];
    }
};

inline const Vec3 kLightDir = geom::normalized(Vec3{0.45f, 0.25f, 0.86f});

// Sphere-trace one ray; returns hit distance or nothing.
inline std::optional<float> trace(const SdfScene& scene, const cam::Ray& ray, float time) {
    float t = ray.t_near;
    for (int step = 0; step < 256 && t <= ray.t_far; ++step) {
        float d = scene.sdf(ray.origin + t * ray.direction, time);
        if (d < 1e-4f) return t;
        t += std::max(d, 1e-4f);
    }
    return std::nullopt;
}

inline PseudoDataset render_pseudo_dataset(const SdfScene& scene, int views, int frames, int height,
                                           int width, float elevation_deg = 10.0f,
                                           const cam::OrbitalCamera& camera = {}) {
    if (views < 1 || frames < 1) throw ConfigError("pseudo dataset needs views >= 1 and frames >= 1");
    PseudoDataset out{img::ImageMatrix(views, frames, height, width), {}, {}};
    out.depth.assign(static_cast<size_t>(views) * frames, img::ImageF(height, width, 1));
    out.normal.assign(static_cast<size_t>(views) * frames, img::ImageF(height, width, 3));

    for (int v = 0; v < views; ++v)
        out.images.poses[static_cast<size_t>(v)] = {
            elevation_deg, 360.0f * static_cast<float>(v) / static_cast<float>(views)};

    for (int v = 0; v < views; ++v) {
        for (int f = 0; f < frames; ++f) {
            float time = static_cast<float>(f) / scene.frame_rate;
            img::ImageF& im = out.images.cell(v, f);
            img::ImageF& dep = out.depth[static_cast<size_t>(v) * frames + f];
            img::ImageF& nrm = out.normal[static_cast<size_t>(v) * frames + f];
            for (int r = 0; r < height; ++r)
                for (int c = 0; c < width; ++c) {
                    cam::Ray ray =
                        camera.pixel_ray(out.images.poses[static_cast<size_t>(v)], r, c, height, width);
                    std::optional<float> hit = trace(scene, ray, time);
                    if (!hit) {
                        for (int ch = 0; ch < 3; ++ch) im.at(r, c, ch) = 1.0f; // white background
                        im.at(r, c, 3) = 0.0f;
                        continue;
                    }
                    Vec3 p = ray.origin + *hit * ray.direction;
                    Vec3 n = scene.normal(p, time);
                    int prim = 0;
                    scene.sdf(p, time, &prim);
                    Vec3 albedo = primitive_albedo(scene.primitives[static_cast<size_t>(prim)], p, time);
                    float lambert = 0.25f + 0.75f * std::max(0.0f, geom::dot(n, kLightDir));
                    im.at(r, c, 0) = std::min(1.0f, albedo.x * lambert);
                    im.at(r, c, 1) = std::min(1.0f, albedo.y * lambert);
                    im.at(r, c, 2) = std::min(1.0f, albedo.z * lambert);
                    im.at(r, c, 3) = 1.0f;
                    dep.at(r, c, 0) = *hit;
                    nrm.at(r, c, 0) = n.x;
                    nrm.at(r, c, 1) = n.y;
                    nrm.at(r, c, 2) = n.z;
                }
        }
    }
    return out;
}

} // namespace s4tk::sdf
