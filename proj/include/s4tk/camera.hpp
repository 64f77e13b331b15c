#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "s4tk/errors.hpp"
#include "s4tk/geom.hpp"

// Orbital two-degree-of-freedom camera. Convention, locked by tests:
//   azimuth 0 puts the camera on the +X axis looking at the origin,
//   azimuth grows toward +Y, elevation rotates the camera toward +Z,
//   world up is +Z. At pose (0,0) image-right is +Y and image-up is +Z.

namespace s4tk::cam {

using geom::Vec3;

struct CameraPose {
    float elevation_deg = 0.0f;
    float azimuth_deg = 0.0f;
};

inline float normalize_azimuth(float a) {
    float r = std::fmod(a, 360.0f);
    if (r < 0.0f) r += 360.0f;
    return r;
}

inline CameraPose normalized(CameraPose p) {
    if (p.elevation_deg < -90.0f || p.elevation_deg > 90.0f)
        throw GeometryError("elevation " + std::to_string(p.elevation_deg) + " outside [-90, 90]");
    return {p.elevation_deg, normalize_azimuth(p.azimuth_deg)};
}

struct Ray {
    Vec3 origin;
    Vec3 direction; // unit length
    float t_near = 0.0f;
    float t_far = 0.0f;
};

struct CameraFrame {
    Vec3 position;
    Vec3 forward, right, up;
};

inline CameraFrame orbital_frame(CameraPose pose, float radius) {
    CameraPose p = normalized(pose);
    float e = geom::deg2rad(p.elevation_deg);
    float a = geom::deg2rad(p.azimuth_deg);
    Vec3 pos{radius * std::cos(e) * std::cos(a), radius * std::cos(e) * std::sin(a), radius * std::sin(e)};
    Vec3 fwd = normalized(-pos);
    Vec3 right = geom::cross(fwd, Vec3{0, 0, 1});
    if (geom::norm(right) < 1e-6f)
        right = Vec3{-std::sin(a), std::cos(a), 0}; // pole: continuous limit of the cross product
    right = normalized(right);
    Vec3 up = geom::cross(right, fwd);
    return {pos, fwd, right, up};
}

struct OrbitalCamera {
    float radius = 2.0f;
    float vfov_deg = 33.8f;
    // Ray integration bracket around the orbit sphere; covers the unit cube.
    float scene_bound = 0.9f;

    Ray pixel_ray(CameraPose pose, int row, int col, int height, int width) const {
        if (height <= 0 || width <= 0) throw GeometryError("pixel_ray: non-positive image size");
        CameraFrame f = orbital_frame(pose, radius);
        float th = std::tan(0.5f * geom::deg2rad(vfov_deg));
        float aspect = static_cast<float>(width) / static_cast<float>(height);
        float u = ((static_cast<float>(col) + 0.5f) / static_cast<float>(width) * 2.0f - 1.0f) * th * aspect;
        float v = (1.0f - (static_cast<float>(row) + 0.5f) / static_cast<float>(height) * 2.0f) * th;
        Vec3 dir = normalized(f.forward + u * f.right + v * f.up);
        return {f.position, dir, radius - scene_bound, radius + scene_bound};
    }
};

} // namespace s4tk::cam
