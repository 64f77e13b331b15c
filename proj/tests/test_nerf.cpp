#include <gtest/gtest.h>

#include <cmath>

#include "s4tk/dyn_nerf.hpp"
#include "s4tk/gradcheck.hpp"
#include "s4tk/hash_grid.hpp"

using namespace s4tk;
using namespace s4tk::core;
using namespace s4tk::nerf;
using geom::Vec3;

namespace {

HashGridConfig small_grid() {
    HashGridConfig g;
    g.levels = 2;
    g.features_per_level = 2;
    g.table_size_log2 = 8;
    g.base_resolution = 4;
    g.per_level_scale = 1.5f;
    return g;
}

DynNerfConfig small_model(int frames) {
    DynNerfConfig c;
    c.grid = small_grid();
    c.frames = frames;
    c.hidden_width = 16;
    return c;
}

// Wraps plain sigma/color functions of position as a renderable field.
template <class SigmaFn, class ColorFn>
auto analytic_field(SigmaFn sigma, ColorFn color) {
    return [=](const Tensor& pos) {
        int n = pos.shape()[0];
        const auto& d = pos.data();
        std::vector<float> sg(static_cast<size_t>(n)), cl(static_cast<size_t>(n) * 3);
        for (int i = 0; i < n; ++i) {
            Vec3 p{d[static_cast<size_t>(i) * 3], d[static_cast<size_t>(i) * 3 + 1],
                   d[static_cast<size_t>(i) * 3 + 2]};
            sg[static_cast<size_t>(i)] = sigma(p);
            Vec3 c = color(p);
            cl[static_cast<size_t>(i) * 3] = c.x;
            cl[static_cast<size_t>(i) * 3 + 1] = c.y;
            cl[static_cast<size_t>(i) * 3 + 2] = c.z;
        }
        return FieldSample{Tensor::constant({n, 1}, std::move(sg)),
                           Tensor::constant({n, 3}, std::move(cl))};
    };
}

cam::Ray axis_ray() {
    // From the default camera position straight at the origin.
    return {{2.0f, 0.0f, 0.0f}, {-1.0f, 0.0f, 0.0f}, 1.1f, 2.9f};
}

Vec3 white(Vec3) { return {1.0f, 1.0f, 1.0f}; }

} // namespace

TEST(HashGrid, VertexExactLookup) {
    Tape tape;
    Rng rng(1);
    HashGridConfig cfg = small_grid();
    cfg.levels = 1; // base resolution 4
    HashGrid g = HashGrid::init(tape, cfg, rng, 0.5f);

    // (x + 0.5) * 4 integer => exactly on a level-0 vertex.
    Tensor pos = Tensor::constant({1, 3}, {-0.5f + 1.0f / 4, -0.5f + 2.0f / 4, -0.5f + 3.0f / 4});
    Tensor out = hashgrid_lookup(g, pos);
    uint32_t idx = nerf::detail::corner_hash(1, 2, 3, cfg.table_size_log2);
    EXPECT_FLOAT_EQ(out.at({0, 0}), g.tables[0].at({static_cast<int>(idx), 0}));
    EXPECT_FLOAT_EQ(out.at({0, 1}), g.tables[0].at({static_cast<int>(idx), 1}));
}

TEST(HashGrid, TrilinearWeightsPartitionUnity) {
    Tape tape;
    Rng rng(2);
    HashGridConfig cfg; // default 8-level config
    HashGrid g;
    g.config = cfg;
    for (int l = 0; l < cfg.levels; ++l)
        g.tables.push_back(tape.leaf(
            {cfg.table_size(), cfg.features_per_level},
            std::vector<float>(static_cast<size_t>(cfg.table_size()) * cfg.features_per_level, 1.0f)));

    Rng rp(3);
    std::vector<float> pts = rp.uniform_vec(5 * 3, -0.5f, 0.5f);
    pts[0] = -0.5f; // include the clamped boundary
    pts[4] = 0.5f;
    Tensor out = hashgrid_lookup(g, Tensor::constant({5, 3}, pts));
    for (float v : out.data()) EXPECT_NEAR(v, 1.0f, 1e-5f);
}

TEST(HashGrid, TableGradientsMatchFiniteDifferences) {
    Tape tape;
    Rng rng(4);
    HashGridConfig cfg = small_grid();
    cfg.table_size_log2 = 6;
    HashGrid g = HashGrid::init(tape, cfg, rng, 0.5f);
    Rng rp(5);
    Tensor pos = Tensor::constant({5, 3}, rp.uniform_vec(15, -0.45f, 0.45f));

    auto rep = check_gradients(
        [&](const std::vector<Tensor>&) { return reduce_mean(square(hashgrid_lookup(g, pos))); },
        g.tables);
    EXPECT_TRUE(rep.ok) << "table " << rep.worst_input << " coord " << rep.worst_coord << " rel "
                        << rep.max_rel_err;
}

TEST(HashGrid, PositionGradientsMatchFiniteDifferences) {
    Tape tape;
    Rng rng(6);
    HashGridConfig cfg = small_grid(); // resolutions 4 and 6
    HashGrid g = HashGrid::init(tape, cfg, rng, 0.5f);
    // Coordinates sit well inside cells at both resolutions so the central
    // difference never straddles a trilinear kink.
    Tensor pos = tape.leaf({3, 3}, {0.03f, 0.11f, -0.22f, -0.22f, 0.03f, 0.11f, 0.11f, -0.22f, 0.03f});

    auto rep = check_gradients(
        [&](const std::vector<Tensor>&) { return reduce_mean(square(hashgrid_lookup(g, pos))); }, {pos});
    EXPECT_TRUE(rep.ok) << rep.max_rel_err;
}

TEST(HashGrid, RejectsBadPositionsShape) {
    Tape tape;
    Rng rng(7);
    HashGrid g = HashGrid::init(tape, small_grid(), rng);
    EXPECT_THROW(hashgrid_lookup(g, Tensor::zeros({4, 2})), DimensionError);
}

TEST(DynNerf, DeformationZeroAtInitAcrossFrames) {
    Tape tape;
    Rng rng(8);
    DynNerfModel m = DynNerfModel::init(tape, small_model(4), rng);
    Rng rp(9);
    Tensor pos = Tensor::constant({6, 3}, rp.uniform_vec(18, -0.4f, 0.4f));

    Tensor d0 = deformation(m, pos, 0.0f);
    for (float v : d0.data()) EXPECT_EQ(v, 0.0f);

    FieldSample f0 = query_field(m, pos, 0.0f);
    for (int f = 1; f < 4; ++f) {
        FieldSample ff = query_field(m, pos, static_cast<float>(f));
        EXPECT_EQ(ff.sigma.data(), f0.sigma.data());
        EXPECT_EQ(ff.color.data(), f0.color.data());
    }
}

TEST(DynNerf, ActivationRanges) {
    Tape tape;
    Rng rng(10);
    DynNerfModel m = DynNerfModel::init(tape, small_model(2), rng);
    Rng rp(11);
    Tensor pos = Tensor::constant({20, 3}, rp.uniform_vec(60, -0.5f, 0.5f));
    FieldSample fs = query_field(m, pos, 1.0f);
    for (float v : fs.sigma.data()) EXPECT_GE(v, 0.0f);
    for (float v : fs.color.data()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
}

TEST(DynNerf, ConstantDeformationBiasShiftsQueries) {
    Tape tape;
    Rng rng(12);
    DynNerfModel m = DynNerfModel::init(tape, small_model(2), rng);
    Vec3 delta{0.05f, -0.03f, 0.02f};
    m.mlp_deform.biases.back() = tape.leaf({3}, {delta.x, delta.y, delta.z});

    Rng rp(13);
    std::vector<float> pv = rp.uniform_vec(15, -0.4f, 0.4f);
    std::vector<float> shifted = pv;
    for (size_t i = 0; i < 5; ++i) {
        shifted[i * 3] += delta.x;
        shifted[i * 3 + 1] += delta.y;
        shifted[i * 3 + 2] += delta.z;
    }
    FieldSample deformed = query_field(m, Tensor::constant({5, 3}, pv), 1.0f);
    FieldSample direct = query_canonical(m, Tensor::constant({5, 3}, shifted));
    for (size_t i = 0; i < deformed.sigma.data().size(); ++i)
        EXPECT_NEAR(deformed.sigma.data()[i], direct.sigma.data()[i], 1e-5f);
    for (size_t i = 0; i < deformed.color.data().size(); ++i)
        EXPECT_NEAR(deformed.color.data()[i], direct.color.data()[i], 1e-5f);
}

TEST(DynNerf, TimeEmbeddingInterpolation) {
    Tape tape;
    Rng rng(14);
    DynNerfModel m = DynNerfModel::init(tape, small_model(3), rng);
    Tensor mid = time_embedding_at(m, 0.5f);
    for (int j = 0; j < m.config.time_embed_dim; ++j)
        EXPECT_NEAR(mid.at({0, j}),
                    0.5f * (m.time_embedding.at({0, j}) + m.time_embedding.at({1, j})), 1e-6f);
    Tensor last = time_embedding_at(m, 2.0f);
    for (int j = 0; j < m.config.time_embed_dim; ++j)
        EXPECT_EQ(last.at({0, j}), m.time_embedding.at({2, j}));

    Tensor pos = Tensor::zeros({1, 3});
    EXPECT_THROW(query_field(m, pos, -0.1f), IndexError);
    EXPECT_THROW(query_field(m, pos, 2.1f), IndexError);
}

TEST(Render, EmptySpaceGivesZeroRgbAndAlpha) {
    auto field = analytic_field([](Vec3) { return 0.0f; }, white);
    RayBatchRender rb = render_rays_with(field, {axis_ray()}, 32);
    for (float v : rb.rgb.data()) EXPECT_EQ(v, 0.0f);
    EXPECT_EQ(rb.alpha.at({0, 0}), 0.0f);
    EXPECT_EQ(rb.depth.at({0, 0}), 0.0f);
}

TEST(Render, ConstantDensityMatchesAnalyticTransmittance) {
    float sigma = 2.0f;
    auto field = analytic_field([=](Vec3) { return sigma; }, white);
    RayBatchRender rb = render_rays_with(field, {axis_ray()}, 256);
    float L = 2.9f - 1.1f;
    EXPECT_NEAR(rb.alpha.at({0, 0}), 1.0f - std::exp(-sigma * L), 1e-2f);
}

TEST(Render, AlphaMonotoneInDensity) {
    float prev = -1.0f;
    for (float sigma : {0.0f, 0.5f, 1.0f, 2.0f, 4.0f, 16.0f}) {
        auto field = analytic_field([=](Vec3) { return sigma; }, white);
        RayBatchRender rb = render_rays_with(field, {axis_ray()}, 64);
        float a = rb.alpha.at({0, 0});
        EXPECT_GE(a, 0.0f);
        EXPECT_LE(a, 1.0f);
        EXPECT_GT(a, prev);
        prev = a;
    }
}

TEST(Render, OpaquePlaneDepth) {
    // Solid halfspace x <= 0.5; the axis ray crosses the boundary at t = 1.5.
    auto field = analytic_field([](Vec3 p) { return p.x <= 0.5f ? 400.0f : 0.0f; }, white);
    int n = 256;
    RayBatchRender rb = render_rays_with(field, {axis_ray()}, n);
    float tol = 2.0f * (2.9f - 1.1f) / static_cast<float>(n);
    EXPECT_NEAR(rb.depth.at({0, 0}), 1.5f, tol);
}

TEST(Render, ErrorsOnBadInputs) {
    auto field = analytic_field([](Vec3) { return 1.0f; }, white);
    EXPECT_THROW(render_rays_with(field, {axis_ray()}, 1), ConfigError);
    EXPECT_THROW(render_rays_with(field, {}, 16), ConfigError);
    cam::Ray bad = axis_ray();
    bad.t_near = bad.t_far;
    EXPECT_THROW(render_rays_with(field, {bad}, 16), GeometryError);
}

TEST(Render, SphereSilhouetteMatchesPinholeProjection) {
    float rho = 0.3f;
    auto field = analytic_field(
        [=](Vec3 p) { return geom::norm(p) < rho ? 500.0f : 0.0f; }, white);
    int H = 64, W = 64;
    RenderConfig rc;
    rc.n_samples = 96;
    rc.jitter = false;
    cam::OrbitalCamera camera;
    RenderOutput out = render_view_with(field, {0.0f, 0.0f}, H, W, camera, rc);

    int area = 0;
    for (float a : out.silhouette.data)
        if (a >= 0.5f) ++area;
    float measured = std::sqrt(static_cast<float>(area) / geom::kPi);
    float tan_limb = rho / std::sqrt(camera.radius * camera.radius - rho * rho);
    float expected = static_cast<float>(H) / 2.0f * tan_limb /
                     std::tan(0.5f * geom::deg2rad(camera.vfov_deg));
    EXPECT_NEAR(measured, expected, 1.0f);
}

TEST(Render, AxisMarkedSceneLocksOrientation) {
    // Green blob on +Y, blue blob on +Z. Seen from azimuth 0 (camera on +X),
    // image-right is +Y and image-up is +Z, so green lands right of center
    // and blue above center.
    Vec3 cg{0.0f, 0.35f, 0.0f}, cb{0.0f, 0.0f, 0.35f};
    auto sigma = [=](Vec3 p) {
        float dg = geom::norm(p - cg), db = geom::norm(p - cb);
        float d = std::min(dg, db);
        return d < 0.12f ? 800.0f * (1.0f - d / 0.12f) : 0.0f;
    };
    auto color = [=](Vec3 p) {
        return geom::norm(p - cg) < geom::norm(p - cb) ? Vec3{0, 1, 0} : Vec3{0, 0, 1};
    };
    int H = 32, W = 32;
    RenderConfig rc;
    rc.n_samples = 64;
    rc.jitter = false;
    RenderOutput out = render_view_with(analytic_field(sigma, color), {0.0f, 0.0f}, H, W, {}, rc);

    int green_r = -1, green_c = -1, blue_r = -1, blue_c = -1;
    float best_g = -1e9f, best_b = -1e9f;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            float R = out.rgb.at(r, c, 0), G = out.rgb.at(r, c, 1), B = out.rgb.at(r, c, 2);
            float gs = G - 0.5f * (R + B), bs = B - 0.5f * (R + G);
            if (gs > best_g) { best_g = gs; green_r = r; green_c = c; }
            if (bs > best_b) { best_b = bs; blue_r = r; blue_c = c; }
        }
    EXPECT_GT(best_g, 0.5f);
    EXPECT_GT(best_b, 0.5f);
    EXPECT_GT(green_c, W / 2) << "green row " << green_r;
    EXPECT_LT(blue_r, H / 2) << "blue col " << blue_c;
}

TEST(Render, AzimuthWraparoundBitwise) {
    auto field = analytic_field(
        [](Vec3 p) { return geom::norm(p) < 0.25f ? 100.0f : 0.0f; },
        [](Vec3 p) { return Vec3{0.5f + p.x, 0.5f + p.y, 0.5f + p.z}; });
    RenderConfig rc;
    rc.n_samples = 16;
    rc.jitter = false;
    RenderOutput a = render_view_with(field, {10.0f, 35.0f}, 8, 8, {}, rc);
    RenderOutput b = render_view_with(field, {10.0f, 395.0f}, 8, 8, {}, rc);
    EXPECT_EQ(a.rgb.data, b.rgb.data);
    EXPECT_EQ(a.silhouette.data, b.silhouette.data);
    EXPECT_EQ(a.depth.data, b.depth.data);
}

TEST(Render, SmoothSphereNormalsPointOutward) {
    float rho = 0.3f;
    auto sigma = [=](Vec3 p) {
        float r = geom::norm(p);
        return 300.0f / (1.0f + std::exp((r - rho) / 0.02f));
    };
    RenderConfig rc;
    rc.n_samples = 128;
    rc.jitter = false;
    RenderOutput out = render_view_with(analytic_field(sigma, white), {0.0f, 0.0f}, 9, 9, {}, rc);
    ASSERT_GT(out.silhouette.at(4, 4, 0), 0.5f);
    // Center ray comes from +X, so the surface normal there faces +X.
    Vec3 n{out.normal.at(4, 4, 0), out.normal.at(4, 4, 1), out.normal.at(4, 4, 2)};
    EXPECT_NEAR(geom::norm(n), 1.0f, 1e-3f);
    EXPECT_GT(n.x, 0.9f);
}

TEST(Render, ModelRendersIdenticalAcrossFramesAtInit) {
    Tape tape;
    Rng rng(20);
    DynNerfModel m = DynNerfModel::init(tape, small_model(3), rng);
    RenderConfig rc;
    rc.n_samples = 8;
    rc.jitter = false;
    RenderOutput f0 = render_view(m, {15.0f, 40.0f}, 0.0f, 8, 8, {}, rc);
    RenderOutput f2 = render_view(m, {15.0f, 40.0f}, 2.0f, 8, 8, {}, rc);
    EXPECT_EQ(f0.rgb.data, f2.rgb.data);
    EXPECT_EQ(f0.silhouette.data, f2.silhouette.data);
    EXPECT_EQ(f0.depth.data, f2.depth.data);
}

TEST(Render, SuppressedDensityModelRendersEmpty) {
    Tape tape;
    Rng rng(21);
    DynNerfModel m = DynNerfModel::init(tape, small_model(2), rng);
    m.mlp_sigma.biases.back() = tape.leaf({1}, {-30.0f});
    RenderConfig rc;
    rc.n_samples = 8;
    rc.jitter = false;
    RenderOutput out = render_view(m, {0.0f, 0.0f}, 0.0f, 8, 8, {}, rc);
    for (float a : out.silhouette.data) EXPECT_LT(a, 1e-6f);
    for (float v : out.rgb.data) EXPECT_NEAR(v, 1.0f, 1e-5f); // white background
}

TEST(Render, MeanRgbGradientWrtHashEntriesMatchesFiniteDifferences) {
    Tape tape;
    Rng rng(22);
    DynNerfConfig cfg = small_model(2);
    DynNerfModel m = DynNerfModel::init(tape, cfg, rng);

    std::vector<cam::Ray> rays;
    cam::OrbitalCamera camera;
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) rays.push_back(camera.pixel_ray({10.0f, 25.0f}, r, c, 8, 8));
    auto loss_fn = [&]() {
        return reduce_mean(render_rays(m, rays, 1.0f, 16).rgb);
    };

    std::vector<float> analytic;
    float base;
    {
        Tape t;
        Tape::Scope scope(t);
        for (auto& tb : m.grid.tables) tb.zero_grad();
        Tensor loss = loss_fn();
        base = loss.item();
        t.backward(loss);
        analytic = m.grid.tables[0].grad();
    }
    (void)base;

    // Finite differences on the five entries with the largest gradient.
    std::vector<int> order(analytic.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return std::fabs(analytic[static_cast<size_t>(a)]) >
                                         std::fabs(analytic[static_cast<size_t>(b)]); });
    ASSERT_GT(std::fabs(analytic[static_cast<size_t>(order[0])]), 0.0f);
    // Wide probe: the loss is smooth in a table entry, and a larger step
    // keeps the f32 loss quantization out of the quotient.
    float h = 5e-3f;
    for (int pick = 0; pick < 5; ++pick) {
        size_t idx = static_cast<size_t>(order[static_cast<size_t>(pick)]);
        auto& data = m.grid.tables[0].mutable_data();
        float orig = data[idx];
        data[idx] = orig + h;
        float lp = loss_fn().item();
        data[idx] = orig - h;
        float lm = loss_fn().item();
        data[idx] = orig;
        float fd = (lp - lm) / (2.0f * h);
        float rel = std::fabs(analytic[idx] - fd) / std::max(std::fabs(fd), 1e-6f);
        EXPECT_LT(rel, 1e-2f) << "entry " << idx << " analytic " << analytic[idx] << " fd " << fd;
    }
}
