#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>

#include "s4tk/tensor.hpp"

// Differentiable primitive ops over Tensor. Every op computes its forward
// value eagerly and, when an active tape exists and gradients are needed,
// records a local backward rule. Binary ops broadcast NumPy-style.

namespace s4tk::core {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    Shape out;
    size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
    out.resize(r);
    for (size_t i = 0; i < r; ++i) {
        int da = i < r - ra ? 1 : a[i - (r - ra)];
        int db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1)
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// broadcast / reshape / permute / slice / concat / gather
// ---------------------------------------------------------------------------

inline Tensor broadcast_to(const Tensor& x, const Shape& target) {
    if (x.shape() == target) return x;
    const Shape& s = x.shape();
    size_t r = target.size(), rs = s.size();
    if (rs > r) throw DimensionError("cannot broadcast " + shape_str(s) + " to " + shape_str(target));
    // Right-aligned source shape padded with 1s.
    Shape src(r, 1);
    for (size_t i = 0; i < rs; ++i) src[r - rs + i] = s[i];
    for (size_t i = 0; i < r; ++i)
        if (src[i] != target[i] && src[i] != 1)
            throw DimensionError("cannot broadcast " + shape_str(s) + " to " + shape_str(target));

    auto dst_strides = row_major_strides(target);
    auto src_strides_full = row_major_strides(src);
    std::vector<int64_t> src_strides(r);
    for (size_t i = 0; i < r; ++i) src_strides[i] = src[i] == 1 ? 0 : src_strides_full[i];

    int64_t n = shape_numel(target);
    std::vector<float> out(static_cast<size_t>(n));
    const auto& in = x.data();
    std::vector<int> idx(r, 0);
    for (int64_t o = 0; o < n; ++o) {
        int64_t so = 0;
        for (size_t i = 0; i < r; ++i) so += idx[i] * src_strides[i];
        out[static_cast<size_t>(o)] = in[static_cast<size_t>(so)];
        for (int i = static_cast<int>(r) - 1; i >= 0; --i) {
            if (++idx[i] < target[i]) break;
            idx[i] = 0;
        }
    }

    auto xn = x.node();
    Shape tgt = target;
    return detail::make_result(target, std::move(out), {x}, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            size_t rr = tgt.size();
            std::vector<int> it(rr, 0);
            int64_t nn = shape_numel(tgt);
            for (int64_t o = 0; o < nn; ++o) {
                int64_t so = 0;
                for (size_t i = 0; i < rr; ++i) so += it[i] * src_strides[i];
                xn->grad[static_cast<size_t>(so)] += on->grad[static_cast<size_t>(o)];
                for (int i = static_cast<int>(rr) - 1; i >= 0; --i) {
                    if (++it[i] < tgt[i]) break;
                    it[i] = 0;
                }
            }
        };
    });
}

inline Tensor reshape(const Tensor& x, Shape new_shape) {
    check_shape_valid(new_shape);
    if (shape_numel(new_shape) != x.size())
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                             " changes element count");
    auto xn = x.node();
    return detail::make_result(std::move(new_shape), x.data(), {x}, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        };
    });
}

// Materializing axis permutation (no stride views).
inline Tensor permute(const Tensor& x, const std::vector<int>& axes) {
    const Shape& s = x.shape();
    size_t r = s.size();
    if (axes.size() != r) throw DimensionError("permute axes rank mismatch for " + shape_str(s));
    std::vector<bool> seen(r, false);
    Shape out_shape(r);
    for (size_t i = 0; i < r; ++i) {
        int a = axes[i];
        if (a < 0 || a >= static_cast<int>(r) || seen[static_cast<size_t>(a)])
            throw DimensionError("invalid permutation for rank " + std::to_string(r));
        seen[static_cast<size_t>(a)] = true;
        out_shape[i] = s[static_cast<size_t>(a)];
    }
    auto in_strides = row_major_strides(s);
    std::vector<int64_t> gather_strides(r);
    for (size_t i = 0; i < r; ++i) gather_strides[i] = in_strides[static_cast<size_t>(axes[i])];

    int64_t n = x.size();
    std::vector<float> out(static_cast<size_t>(n));
    const auto& in = x.data();
    std::vector<int> idx(r, 0);
    std::vector<int64_t> src_of(static_cast<size_t>(n));
    for (int64_t o = 0; o < n; ++o) {
        int64_t so = 0;
        for (size_t i = 0; i < r; ++i) so += idx[i] * gather_strides[i];
        out[static_cast<size_t>(o)] = in[static_cast<size_t>(so)];
        src_of[static_cast<size_t>(o)] = so;
        for (int i = static_cast<int>(r) - 1; i >= 0; --i) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }

    auto xn = x.node();
    auto src_map = std::make_shared<std::vector<int64_t>>(std::move(src_of));
    return detail::make_result(out_shape, std::move(out), {x}, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t o = 0; o < on->grad.size(); ++o)
                xn->grad[static_cast<size_t>((*src_map)[o])] += on->grad[o];
        };
    });
}

inline Tensor transpose2d(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("transpose2d on rank-" + std::to_string(x.rank()));
    return permute(x, {1, 0});
}

inline Tensor slice(const Tensor& x, int axis, int start, int len) {
    const Shape& s = x.shape();
    int r = x.rank();
    if (axis < 0 || axis >= r) throw DimensionError("slice axis out of range");
    if (start < 0 || len <= 0 || start + len > s[static_cast<size_t>(axis)])
        throw DimensionError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                             ") out of bounds for axis size " + std::to_string(s[static_cast<size_t>(axis)]));
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= s[static_cast<size_t>(i)];
    int64_t ax = s[static_cast<size_t>(axis)];

    Shape out_shape = s;
    out_shape[static_cast<size_t>(axis)] = len;
    std::vector<float> out(static_cast<size_t>(outer * len * inner));
    const auto& in = x.data();
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * len * inner, in.data() + (o * ax + start) * inner,
                    static_cast<size_t>(len * inner) * sizeof(float));

    auto xn = x.node();
    return detail::make_result(out_shape, std::move(out), {x}, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int64_t o = 0; o < outer; ++o) {
                const float* g = on->grad.data() + o * len * inner;
                float* dst = xn->grad.data() + (o * ax + start) * inner;
                for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
            }
        };
    });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    const Shape& s0 = parts[0].shape();
    int r = parts[0].rank();
    if (axis < 0 || axis >= r) throw DimensionError("concat axis out of range");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= s0[static_cast<size_t>(i)];

    int total_ax = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) throw DimensionError("concat rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis && p.shape()[static_cast<size_t>(i)] != s0[static_cast<size_t>(i)])
                throw DimensionError("concat shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(s0));
        total_ax += p.shape()[static_cast<size_t>(axis)];
    }

    Shape out_shape = s0;
    out_shape[static_cast<size_t>(axis)] = total_ax;
    std::vector<float> out(static_cast<size_t>(outer * total_ax * inner));
    int off = 0;
    for (const auto& p : parts) {
        int ax = p.shape()[static_cast<size_t>(axis)];
        const auto& in = p.data();
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * total_ax + off) * inner, in.data() + o * ax * inner,
                        static_cast<size_t>(ax * inner) * sizeof(float));
        off += ax;
    }

    std::vector<std::shared_ptr<TensorNode>> nodes;
    std::vector<int> ax_sizes;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        ax_sizes.push_back(p.shape()[static_cast<size_t>(axis)]);
    }
    return detail::make_result(out_shape, std::move(out), parts, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            int o_off = 0;
            for (size_t k = 0; k < nodes.size(); ++k) {
                int ax = ax_sizes[k];
                if (nodes[k]->requires_grad) {
                    nodes[k]->ensure_grad();
                    for (int64_t o = 0; o < outer; ++o) {
                        const float* g = on->grad.data() + (o * total_ax + o_off) * inner;
                        float* dst = nodes[k]->grad.data() + o * ax * inner;
                        for (int64_t i = 0; i < ax * inner; ++i) dst[i] += g[i];
                    }
                }
                o_off += ax;
            }
        };
    });
}

// Select slices along `axis` by integer index; out shape replaces that axis
// with indices.size(). Backward scatter-adds.
inline Tensor gather(const Tensor& x, int axis, const std::vector<int>& indices) {
    const Shape& s = x.shape();
    int r = x.rank();
    if (axis < 0 || axis >= r) throw DimensionError("gather axis out of range");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= s[static_cast<size_t>(i)];
    int64_t ax = s[static_cast<size_t>(axis)];
    for (int ix : indices)
        if (ix < 0 || ix >= ax)
            throw IndexError("gather index " + std::to_string(ix) + " out of range [0," + std::to_string(ax) + ")");

    int k = static_cast<int>(indices.size());
    Shape out_shape = s;
    out_shape[static_cast<size_t>(axis)] = k;
    std::vector<float> out(static_cast<size_t>(outer * k * inner));
    const auto& in = x.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int j = 0; j < k; ++j)
            std::memcpy(out.data() + (o * k + j) * inner, in.data() + (o * ax + indices[static_cast<size_t>(j)]) * inner,
                        static_cast<size_t>(inner) * sizeof(float));

    auto xn = x.node();
    auto idx = std::make_shared<std::vector<int>>(indices);
    return detail::make_result(out_shape, std::move(out), {x}, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int j = 0; j < k; ++j) {
                    const float* g = on->grad.data() + (o * k + j) * inner;
                    float* dst = xn->grad.data() + (o * ax + (*idx)[static_cast<size_t>(j)]) * inner;
                    for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
                }
        };
    });
}

// ---------------------------------------------------------------------------
// elementwise binary ops
// ---------------------------------------------------------------------------

namespace detail {

enum class BinOp { Add, Sub, Mul, Div };

inline Tensor binary_same_shape(const Tensor& a, const Tensor& b, BinOp op) {
    const auto& xa = a.data();
    const auto& xb = b.data();
    std::vector<float> out(xa.size());
    switch (op) {
        case BinOp::Add:
            for (size_t i = 0; i < out.size(); ++i) out[i] = xa[i] + xb[i];
            break;
        case BinOp::Sub:
            for (size_t i = 0; i < out.size(); ++i) out[i] = xa[i] - xb[i];
            break;
        case BinOp::Mul:
            for (size_t i = 0; i < out.size(); ++i) out[i] = xa[i] * xb[i];
            break;
        case BinOp::Div:
            for (size_t i = 0; i < out.size(); ++i) out[i] = xa[i] / xb[i];
            break;
    }
    auto an = a.node(), bn = b.node();
    return make_result(a.shape(), std::move(out), {a, b}, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            const auto& g = on->grad;
            switch (op) {
                case BinOp::Add:
                    if (an->requires_grad) {
                        an->ensure_grad();
                        for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
                    }
                    if (bn->requires_grad) {
                        bn->ensure_grad();
                        for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i];
                    }
                    break;
                case BinOp::Sub:
                    if (an->requires_grad) {
                        an->ensure_grad();
                        for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
                    }
                    if (bn->requires_grad) {
                        bn->ensure_grad();
                        for (size_t i = 0; i < g.size(); ++i) bn->grad[i] -= g[i];
                    }
                    break;
                case BinOp::Mul:
                    if (an->requires_grad) {
                        an->ensure_grad();
                        for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bn->data[i];
                    }
                    if (bn->requires_grad) {
                        bn->ensure_grad();
                        for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * an->data[i];
                    }
                    break;
                case BinOp::Div:
                    if (an->requires_grad) {
                        an->ensure_grad();
                        for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] / bn->data[i];
                    }
                    if (bn->requires_grad) {
                        bn->ensure_grad();
                        for (size_t i = 0; i < g.size(); ++i)
                            bn->grad[i] -= g[i] * an->data[i] / (bn->data[i] * bn->data[i]);
                    }
                    break;
            }
        };
    });
}

inline Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
    if (a.shape() == b.shape()) return binary_same_shape(a, b, op);
    Shape bs = broadcast_shape(a.shape(), b.shape());
    return binary_same_shape(broadcast_to(a, bs), broadcast_to(b, bs), op);
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::Add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::Sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::Mul); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::Div); }

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

// dy/dx as a function of (x, y).
inline Tensor unary(const Tensor& x, const std::function<float(float)>& f,
                    const std::function<float(float, float)>& df) {
    const auto& in = x.data();
    std::vector<float> out(in.size());
    for (size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    auto xn = x.node();
    return make_result(x.shape(), std::move(out), {x}, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i)
                xn->grad[i] += on->grad[i] * df(xn->data[i], on->data[i]);
        };
    });
}

} // namespace detail

inline Tensor mul_scalar(const Tensor& x, float s) {
    return detail::unary(x, [s](float v) { return v * s; }, [s](float, float) { return s; });
}
inline Tensor add_scalar(const Tensor& x, float s) {
    return detail::unary(x, [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}
inline Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0f); }

inline Tensor exp(const Tensor& x) {
    return detail::unary(x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}
inline Tensor log(const Tensor& x) {
    return detail::unary(x, [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}
inline Tensor sqrt(const Tensor& x) {
    return detail::unary(x, [](float v) { return std::sqrt(v); },
                         [](float, float y) { return y > 0.0f ? 0.5f / y : 0.0f; });
}
inline Tensor relu(const Tensor& x) {
    return detail::unary(x, [](float v) { return v > 0.0f ? v : 0.0f; },
                         [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}
inline Tensor sigmoid(const Tensor& x) {
    return detail::unary(x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
                         [](float, float y) { return y * (1.0f - y); });
}
inline Tensor softplus(const Tensor& x) {
    // log(1 + e^x), linearized for large x to dodge overflow
    return detail::unary(x, [](float v) { return v > 20.0f ? v : std::log1p(std::exp(v)); },
                         [](float v, float) { return 1.0f / (1.0f + std::exp(-v)); });
}
inline Tensor sin(const Tensor& x) {
    return detail::unary(x, [](float v) { return std::sin(v); }, [](float v, float) { return std::cos(v); });
}
inline Tensor cos(const Tensor& x) {
    return detail::unary(x, [](float v) { return std::cos(v); }, [](float v, float) { return -std::sin(v); });
}
inline Tensor tanh(const Tensor& x) {
    return detail::unary(x, [](float v) { return std::tanh(v); },
                         [](float, float y) { return 1.0f - y * y; });
}
inline Tensor square(const Tensor& x) {
    return detail::unary(x, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}
// Gradient passes only strictly inside (lo, hi).
// Boundary subgradient 1 (not 0) so a parameter sitting exactly on lo or hi
// can still move back into the interior.
inline Tensor clamp(const Tensor& x, float lo, float hi) {
    return detail::unary(x, [lo, hi](float v) { return std::min(hi, std::max(lo, v)); },
                         [lo, hi](float v, float) { return (v >= lo && v <= hi) ? 1.0f : 0.0f; });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor reduce_sum(const Tensor& x) {
    const auto& in = x.data();
    double acc = 0.0; // f64 accumulator keeps large reductions stable
    for (float v : in) acc += v;
    auto xn = x.node();
    return detail::make_result({1}, {static_cast<float>(acc)}, {x}, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            float g = on->grad[0];
            for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
        };
    });
}

inline Tensor reduce_mean(const Tensor& x) {
    Tensor s = reduce_sum(x);
    return mul_scalar(s, 1.0f / static_cast<float>(x.size()));
}

inline Tensor reduce_sum_axis(const Tensor& x, int axis, bool keepdims = false) {
    const Shape& s = x.shape();
    int r = x.rank();
    if (axis < 0 || axis >= r) throw DimensionError("reduce axis out of range");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= s[static_cast<size_t>(i)];
    int64_t ax = s[static_cast<size_t>(axis)];

    Shape out_shape;
    for (int i = 0; i < r; ++i) {
        if (i == axis) {
            if (keepdims) out_shape.push_back(1);
        } else {
            out_shape.push_back(s[static_cast<size_t>(i)]);
        }
    }
    if (out_shape.empty()) out_shape.push_back(1);

    std::vector<float> out(static_cast<size_t>(outer * inner), 0.0f);
    const auto& in = x.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t a = 0; a < ax; ++a) {
            const float* src = in.data() + (o * ax + a) * inner;
            float* dst = out.data() + o * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }

    auto xn = x.node();
    return detail::make_result(out_shape, std::move(out), {x}, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t a = 0; a < ax; ++a) {
                    float* dst = xn->grad.data() + (o * ax + a) * inner;
                    const float* g = on->grad.data() + o * inner;
                    for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
                }
        };
    });
}

inline Tensor reduce_mean_axis(const Tensor& x, int axis, bool keepdims = false) {
    Tensor s = reduce_sum_axis(x, axis, keepdims);
    return mul_scalar(s, 1.0f / static_cast<float>(x.shape()[static_cast<size_t>(axis)]));
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

inline void gemm_acc(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    // c[m,n] += a[m,k] * b[k,n]; i-k-j order so the inner loop is contiguous
    for (int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        float* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            float av = arow[p];
            if (av == 0.0f) continue;
            const float* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline void gemm_at_b_acc(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    // c[k,n] += a^T[k,m] * b[m,n] with a stored [m,k]
    for (int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        const float* brow = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            float av = arow[p];
            if (av == 0.0f) continue;
            float* crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline void gemm_a_bt_acc(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    // c[m,k] += a[m,n] * b^T[n,k] with b stored [k,n]
    for (int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * n;
        float* crow = c + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const float* brow = b + p * n;
            float acc = 0.0f;
            for (int64_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

} // namespace detail

// Batched matrix product over the trailing two axes. Leading axes must be
// equal, or absent on one side (that side is shared across the batch).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2)
        throw DimensionError("matmul needs rank >= 2, got " + shape_str(sa) + " x " + shape_str(sb));
    int64_t m = sa[sa.size() - 2], ka = sa[sa.size() - 1];
    int64_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
    if (ka != kb)
        throw DimensionError("matmul inner dims disagree: " + shape_str(sa) + " x " + shape_str(sb));

    Shape batch_a(sa.begin(), sa.end() - 2), batch_b(sb.begin(), sb.end() - 2);
    if (!batch_a.empty() && !batch_b.empty() && batch_a != batch_b)
        throw DimensionError("matmul batch dims disagree: " + shape_str(sa) + " x " + shape_str(sb));
    Shape batch = batch_a.empty() ? batch_b : batch_a;
    int64_t nb = shape_numel(batch);
    bool a_batched = !batch_a.empty(), b_batched = !batch_b.empty();

    Shape out_shape = batch;
    out_shape.push_back(static_cast<int>(m));
    out_shape.push_back(static_cast<int>(n));

    std::vector<float> out(static_cast<size_t>(nb * m * n), 0.0f);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    for (int64_t q = 0; q < nb; ++q)
        detail::gemm_acc(pa + (a_batched ? q * m * ka : 0), pb + (b_batched ? q * ka * n : 0),
                         out.data() + q * m * n, m, ka, n);

    auto an = a.node(), bn = b.node();
    int64_t k = ka;
    return detail::make_result(out_shape, std::move(out), {a, b}, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            const float* g = on->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                for (int64_t q = 0; q < nb; ++q)
                    detail::gemm_a_bt_acc(g + q * m * n, bn->data.data() + (b_batched ? q * k * n : 0),
                                          an->grad.data() + (a_batched ? q * m * k : 0), m, k, n);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t q = 0; q < nb; ++q)
                    detail::gemm_at_b_acc(an->data.data() + (a_batched ? q * m * k : 0), g + q * m * n,
                                          bn->grad.data() + (b_batched ? q * k * n : 0), m, k, n);
            }
        };
    });
}

// ---------------------------------------------------------------------------
// softmax / layer norm / cumprod
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& x, int axis) {
    const Shape& s = x.shape();
    int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimensionError("softmax axis out of range for " + shape_str(s));
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= s[static_cast<size_t>(i)];
    int64_t ax = s[static_cast<size_t>(axis)];

    std::vector<float> out(x.data().size());
    const auto& in = x.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            float mx = -std::numeric_limits<float>::infinity();
            for (int64_t a = 0; a < ax; ++a) mx = std::max(mx, in[static_cast<size_t>((o * ax + a) * inner + i)]);
            float denom = 0.0f;
            for (int64_t a = 0; a < ax; ++a) {
                float e = std::exp(in[static_cast<size_t>((o * ax + a) * inner + i)] - mx);
                out[static_cast<size_t>((o * ax + a) * inner + i)] = e;
                denom += e;
            }
            for (int64_t a = 0; a < ax; ++a) out[static_cast<size_t>((o * ax + a) * inner + i)] /= denom;
        }

    auto xn = x.node();
    return detail::make_result(s, std::move(out), {x}, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            // dx = y * (dy - sum(dy * y)) along the softmax axis
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) {
                    float dot = 0.0f;
                    for (int64_t a = 0; a < ax; ++a) {
                        size_t ix = static_cast<size_t>((o * ax + a) * inner + i);
                        dot += on->grad[ix] * on->data[ix];
                    }
                    for (int64_t a = 0; a < ax; ++a) {
                        size_t ix = static_cast<size_t>((o * ax + a) * inner + i);
                        xn->grad[ix] += on->data[ix] * (on->grad[ix] - dot);
                    }
                }
        };
    });
}

// Normalizes over the last axis; no learned affine (compose with mul/add).
inline Tensor layer_norm(const Tensor& x, float eps = 1e-5f) {
    const Shape& s = x.shape();
    int64_t c = s.back();
    int64_t rows = x.size() / c;
    const auto& in = x.data();
    std::vector<float> out(in.size());
    std::vector<float> inv_std(static_cast<size_t>(rows));
    for (int64_t ro = 0; ro < rows; ++ro) {
        const float* p = in.data() + ro * c;
        float mean = 0.0f;
        for (int64_t i = 0; i < c; ++i) mean += p[i];
        mean /= static_cast<float>(c);
        float var = 0.0f;
        for (int64_t i = 0; i < c; ++i) {
            float d = p[i] - mean;
            var += d * d;
        }
        var /= static_cast<float>(c);
        float is = 1.0f / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(ro)] = is;
        float* q = out.data() + ro * c;
        for (int64_t i = 0; i < c; ++i) q[i] = (p[i] - mean) * is;
    }

    auto xn = x.node();
    auto istd = std::make_shared<std::vector<float>>(std::move(inv_std));
    return detail::make_result(s, std::move(out), {x}, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int64_t ro = 0; ro < rows; ++ro) {
                const float* y = on->data.data() + ro * c;
                const float* gy = on->grad.data() + ro * c;
                float* gx = xn->grad.data() + ro * c;
                float mean_gy = 0.0f, mean_gy_y = 0.0f;
                for (int64_t i = 0; i < c; ++i) {
                    mean_gy += gy[i];
                    mean_gy_y += gy[i] * y[i];
                }
                mean_gy /= static_cast<float>(c);
                mean_gy_y /= static_cast<float>(c);
                float is = (*istd)[static_cast<size_t>(ro)];
                for (int64_t i = 0; i < c; ++i) gx[i] += is * (gy[i] - mean_gy - y[i] * mean_gy_y);
            }
        };
    });
}

// T_i = prod_{j<i} x_j along the axis (T_0 = 1). Used by the volume
// renderer for transmittance.
inline Tensor exclusive_cumprod(const Tensor& x, int axis) {
    const Shape& s = x.shape();
    int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimensionError("cumprod axis out of range");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= s[static_cast<size_t>(i)];
    int64_t ax = s[static_cast<size_t>(axis)];

    const auto& in = x.data();
    std::vector<float> out(in.size());
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            float acc = 1.0f;
            for (int64_t a = 0; a < ax; ++a) {
                size_t ix = static_cast<size_t>((o * ax + a) * inner + i);
                out[ix] = acc;
                acc *= in[ix];
            }
        }

    auto xn = x.node();
    return detail::make_result(s, std::move(out), {x}, [=](std::shared_ptr<TensorNode> on) {
        return [=]() {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            // dL/dx_j = T_j * R_j with R_j = S_{j+1} + x_{j+1} R_{j+1},
            // where S is the incoming gradient on T. Exact without division.
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) {
                    float r_acc = 0.0f;
                    for (int64_t a = ax - 1; a >= 0; --a) {
                        size_t ix = static_cast<size_t>((o * ax + a) * inner + i);
                        xn->grad[ix] += on->data[ix] * r_acc;
                        r_acc = on->grad[ix] + xn->data[ix] * r_acc;
                    }
                }
        };
    });
}

// ---------------------------------------------------------------------------
// small conveniences
// ---------------------------------------------------------------------------

inline Tensor dot(const Tensor& a, const Tensor& b) { return reduce_sum(mul(a, b)); }

inline Tensor mean_squared(const Tensor& a, const Tensor& b) { return reduce_mean(square(sub(a, b))); }

inline bool all_finite(const Tensor& t) {
    for (float v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace s4tk::core
