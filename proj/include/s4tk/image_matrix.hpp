#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vendor/json.hpp"

#include "s4tk/camera.hpp"
#include "s4tk/errors.hpp"
#include "s4tk/image.hpp"

// V×F grid of RGBA images with per-view poses and per-column frame indices.
// On disk: v{view:02}_f{frame:03}.png files next to a manifest.json.

namespace s4tk::img {

struct ImageMatrix {
    int views = 0, frames = 0;
    std::vector<ImageF> cells; // index v * frames + f
    std::vector<cam::CameraPose> poses;
    std::vector<int> frame_indices;

    ImageMatrix() = default;
    ImageMatrix(int v, int f, int h, int w)
        : views(v), frames(f), cells(static_cast<size_t>(v) * f, ImageF(h, w, 4)), poses(v),
          frame_indices(f) {
        if (v < 1 || f < 1) throw DimensionError("image matrix needs V >= 1 and F >= 1");
        for (int i = 0; i < f; ++i) frame_indices[static_cast<size_t>(i)] = i;
    }

    ImageF& cell(int v, int f) { return cells[static_cast<size_t>(v) * frames + f]; }
    const ImageF& cell(int v, int f) const { return cells[static_cast<size_t>(v) * frames + f]; }

    void validate() const {
        if (views < 1 || frames < 1) throw DimensionError("image matrix needs V >= 1 and F >= 1");
        if (cells.size() != static_cast<size_t>(views) * frames)
            throw DimensionError("image matrix cell count mismatch");
        for (const auto& c : cells)
            if (!c.same_shape(cells[0])) throw DimensionError("image matrix cells differ in shape");
        if (poses.size() != static_cast<size_t>(views)) throw DimensionError("pose count != V");
        if (frame_indices.size() != static_cast<size_t>(frames)) throw DimensionError("frame index count != F");
    }
};

inline std::string cell_filename(int view, int frame) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "v%02d_f%03d.png", view, frame);
    return buf;
}

inline void save_image_matrix(const std::string& dir, const ImageMatrix& m) {
    m.validate();
    std::filesystem::create_directories(dir);
    for (int v = 0; v < m.views; ++v)
        for (int f = 0; f < m.frames; ++f)
            save_png((std::filesystem::path(dir) / cell_filename(v, f)).string(), m.cell(v, f));

    nlohmann::json j;
    j["views"] = m.views;
    j["frames"] = m.frames;
    j["height"] = m.cells[0].height;
    j["width"] = m.cells[0].width;
    auto poses = nlohmann::json::array();
    for (const auto& p : m.poses)
        poses.push_back({{"elevation_deg", p.elevation_deg}, {"azimuth_deg", p.azimuth_deg}});
    j["poses"] = poses;
    j["frame_indices"] = m.frame_indices;

    std::ofstream f((std::filesystem::path(dir) / "manifest.json").string(), std::ios::trunc);
    if (!f) throw IoError("cannot write manifest in " + dir);
    f << j.dump(2) << "\n";
}

inline ImageMatrix load_image_matrix(const std::string& dir) {
    auto manifest_path = std::filesystem::path(dir) / "manifest.json";
    std::ifstream f(manifest_path.string());
    if (!f) throw IoError("missing manifest: " + manifest_path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad manifest " + manifest_path.string() + ": " + e.what());
    }

    ImageMatrix m;
    try {
        m.views = j.at("views").get<int>();
        m.frames = j.at("frames").get<int>();
        if (m.views < 1 || m.frames < 1) throw IoError("manifest: V and F must be >= 1");
        for (const auto& p : j.at("poses"))
            m.poses.push_back({p.at("elevation_deg").get<float>(), p.at("azimuth_deg").get<float>()});
        m.frame_indices = j.at("frame_indices").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad manifest " + manifest_path.string() + ": " + e.what());
    }

    m.cells.reserve(static_cast<size_t>(m.views) * m.frames);
    for (int v = 0; v < m.views; ++v)
        for (int fr = 0; fr < m.frames; ++fr) {
            auto p = std::filesystem::path(dir) / cell_filename(v, fr);
            m.cells.push_back(load_png(p.string()));
        }
    m.validate();
    return m;
}

} // namespace s4tk::img
