#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "s4tk/errors.hpp"
#include "s4tk/mesh.hpp"

// Animated-mesh curation: split per-frame global translation from local
// articulation by anchoring on the most static region, normalize scale so
// the first frame's largest bounding-box extent is exactly 1, and filter
// out sequences with too little motion or inconsistent scale.

namespace s4tk::curate {

using geom::Vec3;
using mesh::AnimatedMesh;

struct CurationConfig {
    float static_quantile = 0.25f; // offset quantile that defines "static"
    float motion_threshold = 0.02f; // minimum max-vertex offset, in unit-extent scale
    float scale_tolerance = 1.5f;   // allowed bbox-diagonal ratio band [1/tol, tol]
};

enum class RejectReason { low_motion, scale_inconsistent, nonfinite };

inline const char* reject_reason_name(RejectReason r) {
    switch (r) {
    case RejectReason::low_motion: return "low_motion";
    case RejectReason::scale_inconsistent: return "scale_inconsistent";
    case RejectReason::nonfinite: return "nonfinite";
    }
    return "unknown";
}

struct CurationReport {
    std::vector<Vec3> global_offsets; // translation subtracted per frame
    float static_fraction = 0.0f;
    float motion_score = 0.0f;
    float scale_ratio = 1.0f;
    bool accepted = false;
    std::optional<RejectReason> reject_reason;
};

// d_i = mean over frames f >= 1 of ||x_i(f) - x_i(0)||.
inline std::vector<float> mean_temporal_offset(const AnimatedMesh& m) {
    if (m.frame_count < 2) throw CurationError("mean_temporal_offset needs at least 2 frames");
    std::vector<float> d(static_cast<size_t>(m.vertex_count), 0.0f);
    for (int f = 1; f < m.frame_count; ++f)
        for (int i = 0; i < m.vertex_count; ++i)
            d[static_cast<size_t>(i)] += geom::norm(m.at(f, i) - m.at(0, i));
    float inv = 1.0f / static_cast<float>(m.frame_count - 1);
    for (float& v : d) v *= inv;
    return d;
}

// mask_i = (d_i <= q-quantile of d); never empty because the minimum always
// sits at or below the threshold.
inline std::vector<uint8_t> detect_static_region(const std::vector<float>& offsets, float quantile) {
    if (!(quantile > 0.0f && quantile < 1.0f))
        throw ConfigError("static quantile " + std::to_string(quantile) + " outside (0, 1)");
    if (offsets.empty()) throw CurationError("detect_static_region: no offsets");
    std::vector<float> sorted(offsets);
    std::sort(sorted.begin(), sorted.end());
    size_t cut = static_cast<size_t>(
        std::floor(quantile * static_cast<float>(sorted.size() - 1)));
    float threshold = sorted[cut];
    std::vector<uint8_t> mask(offsets.size());
    for (size_t i = 0; i < offsets.size(); ++i) mask[i] = offsets[i] <= threshold ? 1 : 0;
    return mask;
}

// Per-frame translation of the most static region: the frame-0 bounding
// volume is split into a fixed 3x3x3 grid, the cell holding the most static
// vertices is the anchor, and t(f) is the mean displacement of its vertices.
inline std::vector<Vec3> global_translation(const AnimatedMesh& m, const std::vector<uint8_t>& mask) {
    if (mask.size() != static_cast<size_t>(m.vertex_count))
        throw CurationError("static mask size mismatch");
    std::vector<int> static_idx;
    for (int i = 0; i < m.vertex_count; ++i)
        if (mask[static_cast<size_t>(i)]) static_idx.push_back(i);
    if (static_idx.empty()) throw CurationError("global_translation: empty static mask");

    Vec3 lo = m.at(0, 0), hi = m.at(0, 0);
    for (int i = 1; i < m.vertex_count; ++i) {
        lo = geom::min3(lo, m.at(0, i));
        hi = geom::max3(hi, m.at(0, i));
    }
    Vec3 extent = hi - lo;
    auto cell_of = [&](Vec3 p) {
        int c[3];
        const float e[3] = {extent.x, extent.y, extent.z};
        const float l[3] = {lo.x, lo.y, lo.z};
        const float q[3] = {p.x, p.y, p.z};
        for (int k = 0; k < 3; ++k) {
            c[k] = e[k] > 0.0f ? static_cast<int>((q[k] - l[k]) / e[k] * 3.0f) : 0;
            c[k] = std::min(2, std::max(0, c[k]));
        }
        return c[0] + 3 * c[1] + 9 * c[2];
    };

    int counts[27] = {0};
    for (int i : static_idx) ++counts[cell_of(m.at(0, i))];
    int best = 0;
    for (int c = 1; c < 27; ++c)
        if (counts[c] > counts[best]) best = c;

    std::vector<int> anchor;
    for (int i : static_idx)
        if (cell_of(m.at(0, i)) == best) anchor.push_back(i);
    if (anchor.empty()) anchor = static_idx; // degenerate partition: use them all

    std::vector<Vec3> t(static_cast<size_t>(m.frame_count));
    for (int f = 0; f < m.frame_count; ++f) {
        Vec3 acc{};
        for (int i : anchor) acc = acc + (m.at(f, i) - m.at(0, i));
        t[static_cast<size_t>(f)] = acc / static_cast<float>(anchor.size());
    }
    return t;
}

namespace detail {

inline float bbox_diagonal(const AnimatedMesh& m, int frame) {
    Vec3 lo = m.at(frame, 0), hi = m.at(frame, 0);
    for (int i = 1; i < m.vertex_count; ++i) {
        lo = geom::min3(lo, m.at(frame, i));
        hi = geom::max3(hi, m.at(frame, i));
    }
    return geom::norm(hi - lo);
}

inline float max_extent(const AnimatedMesh& m, int frame) {
    Vec3 lo = m.at(frame, 0), hi = m.at(frame, 0);
    for (int i = 1; i < m.vertex_count; ++i) {
        lo = geom::min3(lo, m.at(frame, i));
        hi = geom::max3(hi, m.at(frame, i));
    }
    Vec3 e = hi - lo;
    return std::max(e.x, std::max(e.y, e.z));
}

} // namespace detail

// Scores a rectified mesh and applies the accept/reject thresholds.
// scale_ratio is the per-frame bbox-diagonal ratio farthest from 1, so both
// growth and shrink register against the [1/tol, tol] band.
inline CurationReport filter(const AnimatedMesh& m, const CurationConfig& cfg = {}) {
    CurationReport rep;
    rep.global_offsets.assign(static_cast<size_t>(m.frame_count), Vec3{});
    std::vector<float> offsets = mean_temporal_offset(m);
    rep.motion_score = *std::max_element(offsets.begin(), offsets.end());

    float d0 = detail::bbox_diagonal(m, 0);
    rep.scale_ratio = 1.0f;
    if (d0 > 0.0f) {
        for (int f = 1; f < m.frame_count; ++f) {
            float r = detail::bbox_diagonal(m, f) / d0;
            if (std::fabs(std::log(std::max(r, 1e-20f))) >
                std::fabs(std::log(std::max(rep.scale_ratio, 1e-20f))))
                rep.scale_ratio = r;
        }
    }

    if (rep.motion_score < cfg.motion_threshold) {
        rep.reject_reason = RejectReason::low_motion;
    } else if (rep.scale_ratio > cfg.scale_tolerance || rep.scale_ratio < 1.0f / cfg.scale_tolerance) {
        rep.reject_reason = RejectReason::scale_inconsistent;
    } else {
        rep.accepted = true;
    }
    return rep;
}

// Subtract the anchored per-frame translation, recenter on the frame-0
// bounding-box center, then scale uniformly so the frame-0 bounding box has
// max extent exactly 1. Near-zero translations and near-unit scales snap to
// their exact values, making the whole pass idempotent bit-for-bit; the
// recentering makes it invariant to a constant world offset of the input.
inline std::pair<AnimatedMesh, CurationReport> rectify(const AnimatedMesh& m,
                                                       const CurationConfig& cfg = {}) {
    m.validate();
    AnimatedMesh out = m;
    CurationReport rep;
    rep.global_offsets.assign(static_cast<size_t>(m.frame_count), Vec3{});
    auto snap = [](float v) { return std::fabs(v) < 1e-6f ? 0.0f : v; };

    std::vector<Vec3> t(static_cast<size_t>(m.frame_count), Vec3{});
    if (m.frame_count >= 2) {
        std::vector<float> offsets = mean_temporal_offset(m);
        std::vector<uint8_t> mask = detect_static_region(offsets, cfg.static_quantile);
        int n_static = 0;
        for (uint8_t v : mask) n_static += v;
        rep.static_fraction = static_cast<float>(n_static) / static_cast<float>(m.vertex_count);
        t = global_translation(m, mask);
        for (auto& v : t) v = {snap(v.x), snap(v.y), snap(v.z)};
    } else {
        rep.static_fraction = 1.0f;
    }

    Vec3 lo = m.at(0, 0) - t[0], hi = lo;
    for (int i = 0; i < m.vertex_count; ++i) {
        Vec3 p = m.at(0, i) - t[0];
        lo = geom::min3(lo, p);
        hi = geom::max3(hi, p);
    }
    Vec3 center = (lo + hi) * 0.5f;
    center = {snap(center.x), snap(center.y), snap(center.z)};

    for (int f = 0; f < m.frame_count; ++f) {
        Vec3 total = t[static_cast<size_t>(f)] + center;
        rep.global_offsets[static_cast<size_t>(f)] = total;
        for (int i = 0; i < m.vertex_count; ++i) out.at(f, i) = m.at(f, i) - total;
    }

    float extent = detail::max_extent(out, 0);
    if (!(extent > 0.0f) || !std::isfinite(extent)) {
        rep.reject_reason = RejectReason::nonfinite;
        return {out, rep};
    }
    float scale = std::fabs(extent - 1.0f) < 1e-6f ? 1.0f : 1.0f / extent;
    if (scale != 1.0f)
        for (auto& p : out.positions) p = p * scale;

    if (m.frame_count >= 2) {
        CurationReport scored = filter(out, cfg);
        rep.motion_score = scored.motion_score;
        rep.scale_ratio = scored.scale_ratio;
        rep.accepted = scored.accepted;
        rep.reject_reason = scored.reject_reason;
    } else {
        rep.reject_reason = RejectReason::low_motion; // a single frame cannot move
    }
    return {out, rep};
}

inline void write_curation_csv(const std::string& path,
                               const std::vector<std::pair<std::string, CurationReport>>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write: " + path);
    f << "object_id,static_fraction,motion_score,scale_ratio,accepted,reject_reason\n";
    for (const auto& [id, rep] : rows) {
        f << id << "," << rep.static_fraction << "," << rep.motion_score << "," << rep.scale_ratio
          << "," << (rep.accepted ? "true" : "false") << ","
          << (rep.reject_reason ? reject_reason_name(*rep.reject_reason) : "") << "\n";
    }
    if (!f) throw IoError("short write: " + path);
}

} // namespace s4tk::curate
