#pragma once

#include <cmath>
#include <vector>

#include "s4tk/errors.hpp"
#include "s4tk/image.hpp"
#include "s4tk/ops.hpp"
#include "s4tk/rng.hpp"
#include "s4tk/tensor.hpp"

// Perceptual-distance stand-in: squared L2 between activations of a frozen,
// seeded random conv pyramid (3 scales, 16 channels, tanh). Differentiable
// through both images when they carry gradients.

namespace s4tk::optim {

using core::Shape;
using core::Tensor;

namespace detail {

// Zero-pad an (H, W, C) image by one pixel on every side.
inline Tensor zero_pad1(const Tensor& x) {
    int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    Tensor row = Tensor::zeros({1, W, C});
    Tensor padded = core::concat({row, x, row}, 0);
    Tensor col = Tensor::zeros({H + 2, 1, C});
    return core::concat({col, padded, col}, 1);
}

// 3x3 same-size convolution via im2col: weights are (9*C_in, C_out).
inline Tensor conv3x3(const Tensor& x, const Tensor& w) {
    if (x.rank() != 3) throw DimensionError("conv3x3 expects (H, W, C), got " + core::shape_str(x.shape()));
    int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    if (w.rank() != 2 || w.dim(0) != 9 * C)
        throw DimensionError("conv3x3 weights must be (9*C, K), got " + core::shape_str(w.shape()));
    Tensor flat = core::reshape(zero_pad1(x), {(H + 2) * (W + 2), C});
    std::vector<Tensor> taps;
    taps.reserve(9);
    for (int dy = 0; dy < 3; ++dy)
        for (int dx = 0; dx < 3; ++dx) {
            std::vector<int> idx(static_cast<size_t>(H) * W);
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c)
                    idx[static_cast<size_t>(r) * W + c] = (r + dy) * (W + 2) + (c + dx);
            taps.push_back(core::gather(flat, 0, idx));
        }
    Tensor cols = core::concat(taps, 1); // (H*W, 9*C)
    return core::reshape(core::matmul(cols, w), {H, W, w.dim(1)});
}

// 2x2 mean pooling; requires even height and width.
inline Tensor avg_pool2(const Tensor& x) {
    int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    if (H % 2 || W % 2) throw DimensionError("avg_pool2 needs even dims, got " + core::shape_str(x.shape()));
    Tensor flat = core::reshape(x, {H * W, C});
    auto corner = [&](int dy, int dx) {
        std::vector<int> idx(static_cast<size_t>(H / 2) * (W / 2));
        for (int r = 0; r < H / 2; ++r)
            for (int c = 0; c < W / 2; ++c)
                idx[static_cast<size_t>(r) * (W / 2) + c] = (2 * r + dy) * W + 2 * c + dx;
        return core::gather(flat, 0, idx);
    };
    Tensor sum = core::add(core::add(corner(0, 0), corner(0, 1)), core::add(corner(1, 0), corner(1, 1)));
    return core::reshape(core::mul_scalar(sum, 0.25f), {H / 2, W / 2, C});
}

} // namespace detail

inline constexpr int kFeatureScales = 3;
inline constexpr int kFeatureChannels = 16;

// Frozen per-scale conv weights, drawn once from a fixed seed.
inline const std::vector<Tensor>& feature_pyramid_weights() {
    static const std::vector<Tensor> weights = [] {
        Rng rng = Rng(0x0feaf00d).stream("feature-pyramid");
        std::vector<Tensor> w;
        for (int s = 0; s < kFeatureScales; ++s) {
            std::vector<float> data = rng.normal_vec(static_cast<size_t>(27) * kFeatureChannels, 0.0f,
                                                     1.0f / std::sqrt(27.0f));
            w.push_back(Tensor::constant({27, kFeatureChannels}, std::move(data)));
        }
        return w;
    }();
    return weights;
}

// Differentiable distance between two (H, W, 3) image tensors. Height and
// width must match and be multiples of 4 (callers crop; see the wrapper).
inline Tensor feature_distance_t(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("feature distance shapes " + core::shape_str(a.shape()) + " vs " +
                             core::shape_str(b.shape()));
    if (a.rank() != 3 || a.dim(2) != 3)
        throw DimensionError("feature distance expects (H, W, 3) images, got " +
                             core::shape_str(a.shape()));
    if (a.dim(0) < 4 || a.dim(1) < 4 || a.dim(0) % 4 || a.dim(1) % 4)
        throw DimensionError("feature distance needs dims that are multiples of 4, got " +
                             core::shape_str(a.shape()));
    const auto& weights = feature_pyramid_weights();
    Tensor xa = a, xb = b;
    Tensor total = Tensor::zeros({1});
    for (int s = 0; s < kFeatureScales; ++s) {
        Tensor fa = core::tanh(detail::conv3x3(xa, weights[static_cast<size_t>(s)]));
        Tensor fb = core::tanh(detail::conv3x3(xb, weights[static_cast<size_t>(s)]));
        total = core::add(total, core::mean_squared(fa, fb));
        if (s + 1 < kFeatureScales) {
            xa = detail::avg_pool2(xa);
            xb = detail::avg_pool2(xb);
        }
    }
    return total;
}

// Plain-image wrapper: crops to the largest multiple-of-4 window (top-left
// anchored) so any reasonably sized pair can be scored.
inline float feature_distance(const img::ImageF& a, const img::ImageF& b) {
    if (!a.same_shape(b)) throw DimensionError("feature distance: image shapes differ");
    if (a.channels < 3) throw DimensionError("feature distance needs rgb images");
    int H = a.height / 4 * 4, W = a.width / 4 * 4;
    if (H < 4 || W < 4) throw DimensionError("feature distance needs at least 4x4 images");
    auto crop_rgb = [&](const img::ImageF& im) {
        std::vector<float> data(static_cast<size_t>(H) * W * 3);
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c)
                for (int k = 0; k < 3; ++k)
                    data[(static_cast<size_t>(r) * W + c) * 3 + k] = im.at(r, c, k);
        return Tensor::constant({H, W, 3}, std::move(data));
    };
    return feature_distance_t(crop_rgb(a), crop_rgb(b)).at({0});
}

} // namespace s4tk::optim
