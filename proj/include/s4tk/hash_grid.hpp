#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "s4tk/ops.hpp"
#include "s4tk/rng.hpp"
#include "s4tk/tensor.hpp"

// Multi-resolution hash-grid feature field over the cube [-0.5, 0.5]^3.
// Each level keeps a flat table of learned feature vectors indexed by a
// spatial hash of integer cell corners; lookups trilinearly interpolate the
// eight corners and concatenate levels. The lookup is a fused differentiable
// op with gradients to both the tables and the query positions.

namespace s4tk::nerf {

using core::Shape;
using core::Tape;
using core::Tensor;
using core::TensorNode;

struct HashGridConfig {
    int levels = 8;
    int features_per_level = 2;
    int table_size_log2 = 14;
    int base_resolution = 16;
    float per_level_scale = 1.5f;

    int table_size() const { return 1 << table_size_log2; }
    int feature_dim() const { return levels * features_per_level; }
    int resolution(int level) const {
        return static_cast<int>(std::floor(static_cast<double>(base_resolution) *
                                           std::pow(static_cast<double>(per_level_scale), level)));
    }
};

struct HashGrid {
    HashGridConfig config;
    std::vector<Tensor> tables; // one (table_size, features_per_level) per level

    static HashGrid init(Tape& tape, const HashGridConfig& cfg, Rng& rng, float init_scale = 1e-4f) {
        if (cfg.levels < 1 || cfg.features_per_level < 1 || cfg.table_size_log2 < 1 ||
            cfg.base_resolution < 1 || cfg.per_level_scale < 1.0f)
            throw ConfigError("hash grid: bad configuration");
        HashGrid g;
        g.config = cfg;
        for (int l = 0; l < cfg.levels; ++l)
            g.tables.push_back(tape.leaf(
                {cfg.table_size(), cfg.features_per_level},
                rng.uniform_vec(static_cast<size_t>(cfg.table_size()) * cfg.features_per_level,
                                -init_scale, init_scale)));
        return g;
    }

    std::vector<Tensor> parameters() const { return tables; }
};

namespace detail {

// Instant-NGP style corner hash: coordinate-wise prime multiplies, XOR-folded.
inline uint32_t corner_hash(uint32_t x, uint32_t y, uint32_t z, int log2_size) {
    uint32_t h = x * 1u ^ y * 2654435761u ^ z * 805459861u;
    return h & ((1u << log2_size) - 1u);
}

} // namespace detail

// positions: (N, 3) with coordinates clamped into [-0.5, 0.5]; returns
// (N, levels * features_per_level) interpolated features.
inline Tensor hashgrid_lookup(const HashGrid& grid, const Tensor& positions) {
    const Shape& ps = positions.shape();
    if (ps.size() != 2 || ps[1] != 3)
        throw DimensionError("hashgrid_lookup: positions must be (N, 3), got " + core::shape_str(ps));
    const HashGridConfig& cfg = grid.config;
    const int N = ps[0];
    const int L = cfg.levels;
    const int Fp = cfg.features_per_level;
    const int D = cfg.feature_dim();

    std::vector<int> resolutions(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) resolutions[static_cast<size_t>(l)] = cfg.resolution(l);

    // Shared by forward and backward: visit the 8 corners of the cell that
    // contains point n at level l, reporting table row, trilinear weight, and
    // the weight's derivative w.r.t. each grid-space coordinate.
    auto for_each_corner = [resolutions, cfg](const float* p, int level, auto&& visit) {
        float res = static_cast<float>(resolutions[static_cast<size_t>(level)]);
        float u[3], fr[3];
        int c0[3];
        bool interior[3];
        for (int k = 0; k < 3; ++k) {
            float x = std::min(0.5f, std::max(-0.5f, p[k]));
            interior[k] = p[k] > -0.5f && p[k] < 0.5f;
            u[k] = (x + 0.5f) * res;
            c0[k] = static_cast<int>(std::floor(u[k]));
            fr[k] = u[k] - static_cast<float>(c0[k]);
        }
        for (int corner = 0; corner < 8; ++corner) {
            int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
            float wx = bx ? fr[0] : 1.0f - fr[0];
            float wy = by ? fr[1] : 1.0f - fr[1];
            float wz = bz ? fr[2] : 1.0f - fr[2];
            float sx = bx ? 1.0f : -1.0f, sy = by ? 1.0f : -1.0f, sz = bz ? 1.0f : -1.0f;
            uint32_t idx = detail::corner_hash(static_cast<uint32_t>(c0[0] + bx),
                                               static_cast<uint32_t>(c0[1] + by),
                                               static_cast<uint32_t>(c0[2] + bz), cfg.table_size_log2);
            // d(weight)/d(world coordinate k); zero when the query clamped.
            float dw[3] = {interior[0] ? sx * wy * wz * res : 0.0f,
                           interior[1] ? sy * wx * wz * res : 0.0f,
                           interior[2] ? sz * wx * wy * res : 0.0f};
            visit(idx, wx * wy * wz, dw);
        }
    };

    std::vector<float> out(static_cast<size_t>(N) * D, 0.0f);
    const std::vector<float>& pos = positions.data();
    for (int n = 0; n < N; ++n) {
        const float* p = pos.data() + static_cast<size_t>(n) * 3;
        for (int l = 0; l < L; ++l) {
            const std::vector<float>& table = grid.tables[static_cast<size_t>(l)].data();
            float* dst = out.data() + static_cast<size_t>(n) * D + static_cast<size_t>(l) * Fp;
            for_each_corner(p, l, [&](uint32_t idx, float w, const float*) {
                const float* row = table.data() + static_cast<size_t>(idx) * Fp;
                for (int j = 0; j < Fp; ++j) dst[j] += w * row[j];
            });
        }
    }

    std::vector<Tensor> inputs = grid.tables;
    inputs.push_back(positions);
    std::vector<std::shared_ptr<TensorNode>> table_nodes;
    for (const auto& t : grid.tables) table_nodes.push_back(t.node());
    auto pos_node = positions.node();

    return core::detail::make_result(
        {N, D}, std::move(out), inputs, [=](std::shared_ptr<TensorNode> on) {
            return [=]() {
                for (auto& tn : table_nodes)
                    if (tn->requires_grad) tn->ensure_grad();
                bool pos_grad = pos_node->requires_grad;
                if (pos_grad) pos_node->ensure_grad();
                const std::vector<float>& p_data = pos_node->data;
                for (int n = 0; n < N; ++n) {
                    const float* p = p_data.data() + static_cast<size_t>(n) * 3;
                    const float* go = on->grad.data() + static_cast<size_t>(n) * D;
                    for (int l = 0; l < L; ++l) {
                        auto& tn = *table_nodes[static_cast<size_t>(l)];
                        const float* gl = go + static_cast<size_t>(l) * Fp;
                        for_each_corner(p, l, [&](uint32_t idx, float w, const float* dw) {
                            float gdot = 0.0f;
                            const float* row = tn.data.data() + static_cast<size_t>(idx) * Fp;
                            for (int j = 0; j < Fp; ++j) gdot += gl[j] * row[j];
                            if (tn.requires_grad) {
                                float* grow = tn.grad.data() + static_cast<size_t>(idx) * Fp;
                                for (int j = 0; j < Fp; ++j) grow[j] += w * gl[j];
                            }
                            if (pos_grad) {
                                float* gp = pos_node->grad.data() + static_cast<size_t>(n) * 3;
                                for (int k = 0; k < 3; ++k) gp[k] += dw[k] * gdot;
                            }
                        });
                    }
                }
            };
        });
}

} // namespace s4tk::nerf
