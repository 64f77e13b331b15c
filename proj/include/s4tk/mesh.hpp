#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "s4tk/errors.hpp"
#include "s4tk/geom.hpp"
#include "vendor/json.hpp"

// Fixed-topology vertex animation: one vertex block per frame over a shared
// face list. On disk: one OBJ per frame plus a JSON manifest naming them.

namespace s4tk::mesh {

using geom::Vec3;

struct AnimatedMesh {
    int frame_count = 0;
    int vertex_count = 0;
    std::vector<Vec3> positions; // frame-major, frame_count * vertex_count
    std::vector<std::array<int, 3>> faces;
    float frame_rate = 24.0f;

    Vec3& at(int frame, int vertex) {
        return positions[static_cast<size_t>(frame) * vertex_count + vertex];
    }
    Vec3 at(int frame, int vertex) const {
        return positions[static_cast<size_t>(frame) * vertex_count + vertex];
    }

    void validate() const {
        if (frame_count < 1 || vertex_count < 3)
            throw CurationError("mesh needs at least 1 frame and 3 vertices");
        if (positions.size() != static_cast<size_t>(frame_count) * vertex_count)
            throw CurationError("mesh position count mismatch");
        for (const Vec3& p : positions)
            if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
                throw CurationError("mesh has non-finite vertex positions");
        for (const auto& f : faces)
            for (int idx : f)
                if (idx < 0 || idx >= vertex_count)
                    throw CurationError("face index " + std::to_string(idx) + " out of range");
    }
};

// Single-frame OBJ: v lines and triangular f lines (v/vt/vn accepted,
// only the position index is used).
inline void save_obj(const std::string& path, const AnimatedMesh& m, int frame) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write: " + path);
    char buf[128];
    for (int i = 0; i < m.vertex_count; ++i) {
        Vec3 p = m.at(frame, i);
        std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", p.x, p.y, p.z);
        f << buf;
    }
    for (const auto& face : m.faces)
        f << "f " << face[0] + 1 << " " << face[1] + 1 << " " << face[2] + 1 << "\n";
    if (!f) throw IoError("short write: " + path);
}

struct ObjFrame {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
};

inline ObjFrame load_obj(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    ObjFrame out;
    std::string line;
    auto face_index = [&](const std::string& tok) {
        int v = 0;
        try {
            v = std::stoi(tok); // stops at '/', so v/vt/vn parses the position
        } catch (const std::exception&) {
            throw IoError("bad face index '" + tok + "' in " + path);
        }
        if (v < 0) v = static_cast<int>(out.vertices.size()) + v + 1; // negative = relative
        return v - 1;
    };
    while (std::getline(f, line)) {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            Vec3 p;
            if (!(ss >> p.x >> p.y >> p.z)) throw IoError("bad vertex line in " + path);
            out.vertices.push_back(p);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ss >> tok) idx.push_back(face_index(tok));
            if (idx.size() < 3) throw IoError("face with < 3 vertices in " + path);
            for (size_t i = 2; i < idx.size(); ++i) // fan-triangulate polygons
                out.faces.push_back({idx[0], idx[i - 1], idx[i]});
        }
    }
    return out;
}

inline void save_animated_mesh(const std::string& dir, const AnimatedMesh& m) {
    m.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["frame_rate"] = m.frame_rate;
    manifest["frames"] = nlohmann::json::array();
    for (int f = 0; f < m.frame_count; ++f) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%03d.obj", f);
        save_obj(dir + "/" + name, m, f);
        manifest["frames"].push_back(name);
    }
    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw IoError("cannot write mesh manifest in " + dir);
    mf << manifest.dump(2) << "\n";
}

inline AnimatedMesh load_animated_mesh(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw IoError("cannot open mesh manifest in " + dir);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad mesh manifest in " + dir + ": " + e.what());
    }
    if (!manifest.contains("frames") || !manifest["frames"].is_array() || manifest["frames"].empty())
        throw IoError("mesh manifest in " + dir + " lists no frames");

    AnimatedMesh m;
    m.frame_rate = manifest.value("frame_rate", 24.0f);
    m.frame_count = static_cast<int>(manifest["frames"].size());
    for (int f = 0; f < m.frame_count; ++f) {
        ObjFrame of = load_obj(dir + "/" + manifest["frames"][static_cast<size_t>(f)].get<std::string>());
        if (f == 0) {
            m.vertex_count = static_cast<int>(of.vertices.size());
            m.faces = of.faces;
        } else if (static_cast<int>(of.vertices.size()) != m.vertex_count || of.faces != m.faces) {
            throw CurationError("frame " + std::to_string(f) + " topology differs from frame 0 in " + dir);
        }
        m.positions.insert(m.positions.end(), of.vertices.begin(), of.vertices.end());
    }
    m.validate();
    return m;
}

} // namespace s4tk::mesh
