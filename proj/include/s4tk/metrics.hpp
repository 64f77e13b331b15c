#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "s4tk/errors.hpp"
#include "s4tk/image.hpp"
#include "s4tk/image_matrix.hpp"
#include "s4tk/rng.hpp"

// Evaluation suite: pixel metrics, grid scan orders, a light-weight sequence
// embedder, and the Gaussian Frechet distance. Distribution math runs in f64.

namespace s4tk::metrics {

using img::ImageF;
using img::ImageMatrix;

// ---------------------------------------------------------------------------
// pixel metrics
// ---------------------------------------------------------------------------

inline double mse(const ImageF& a, const ImageF& b) {
    if (!a.same_shape(b))
        throw DimensionError("mse: shape mismatch " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                             "x" + std::to_string(a.channels) + " vs " + std::to_string(b.height) + "x" +
                             std::to_string(b.width) + "x" + std::to_string(b.channels));
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

inline double psnr(const ImageF& a, const ImageF& b) {
    double m = mse(a, b);
    if (m < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / m);
}

namespace detail {

inline std::vector<double> gaussian_window_11(double sigma = 1.5) {
    std::vector<double> w(11 * 11);
    double sum = 0.0;
    for (int r = 0; r < 11; ++r)
        for (int c = 0; c < 11; ++c) {
            double dy = r - 5, dx = c - 5;
            double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            w[static_cast<size_t>(r * 11 + c)] = v;
            sum += v;
        }
    for (auto& v : w) v /= sum;
    return w;
}

} // namespace detail

// Single-scale SSIM on Rec.601 luma, 11x11 Gaussian window (sigma 1.5),
// k1=0.01 k2=0.03, averaged over valid (fully covered) window positions.
inline double ssim(const ImageF& a_in, const ImageF& b_in) {
    if (!a_in.same_shape(b_in)) throw DimensionError("ssim: shape mismatch");
    if (a_in.height < 11 || a_in.width < 11)
        throw MetricError("ssim needs at least 11x11 images, got " + std::to_string(a_in.height) + "x" +
                          std::to_string(a_in.width));
    ImageF a = img::to_gray(a_in);
    ImageF b = img::to_gray(b_in);
    static const std::vector<double> win = detail::gaussian_window_11();
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    double acc = 0.0;
    int count = 0;
    for (int r = 0; r + 11 <= a.height; ++r)
        for (int c = 0; c + 11 <= a.width; ++c) {
            double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    double w = win[static_cast<size_t>(i * 11 + j)];
                    double pa = a.at(r + i, c + j, 0);
                    double pb = b.at(r + i, c + j, 0);
                    ma += w * pa;
                    mb += w * pb;
                    va += w * pa * pa;
                    vb += w * pb * pb;
                    cov += w * pa * pb;
                }
            va -= ma * ma;
            vb -= mb * mb;
            cov -= ma * mb;
            acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return acc / count;
}

// ---------------------------------------------------------------------------
// scan orders over the V x F grid
// ---------------------------------------------------------------------------

enum class ScanKind { F, V, Diag, FV4D };

inline const char* scan_kind_name(ScanKind k) {
    switch (k) {
        case ScanKind::F: return "fvd-f";
        case ScanKind::V: return "fvd-v";
        case ScanKind::Diag: return "fvd-diag";
        case ScanKind::FV4D: return "fv4d";
    }
    return "?";
}

using CellSeq = std::vector<std::pair<int, int>>; // (view, frame)

inline std::vector<CellSeq> scan_order(ScanKind kind, int views, int frames) {
    if (views < 1 || frames < 1) throw DimensionError("scan_order needs V >= 1, F >= 1");
    std::vector<CellSeq> out;
    switch (kind) {
        case ScanKind::F:
            for (int v = 0; v < views; ++v) {
                CellSeq s;
                for (int f = 0; f < frames; ++f) s.emplace_back(v, f);
                out.push_back(std::move(s));
            }
            break;
        case ScanKind::V:
            for (int f = 0; f < frames; ++f) {
                CellSeq s;
                for (int v = 0; v < views; ++v) s.emplace_back(v, f);
                out.push_back(std::move(s));
            }
            break;
        case ScanKind::Diag: {
            CellSeq s;
            int n = std::min(views, frames);
            for (int i = 0; i < n; ++i) s.emplace_back(i, i);
            out.push_back(std::move(s));
            break;
        }
        case ScanKind::FV4D: {
            // Bidirectional raster: rows are views, columns frames, odd rows reversed.
            CellSeq s;
            for (int v = 0; v < views; ++v) {
                if (v % 2 == 0)
                    for (int f = 0; f < frames; ++f) s.emplace_back(v, f);
                else
                    for (int f = frames - 1; f >= 0; --f) s.emplace_back(v, f);
            }
            out.push_back(std::move(s));
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// sequence embedding
// ---------------------------------------------------------------------------

// Downsamples each image to 16x16 gray, summarizes motion by position-weighted
// temporal differences plus the mean frame, and projects both parts through
// fixed seeded random matrices. Position weighting keeps the feature sensitive
// to frame order (plain difference sums would telescope).
struct SequenceEmbedder {
    int dim = 64;
    uint64_t seed = 2024;
    static constexpr int kPatch = 16;
    static constexpr int kIn = kPatch * kPatch;

    std::vector<float> proj_diff; // dim x 256
    std::vector<float> proj_mean; // dim x 256

    explicit SequenceEmbedder(int d = 64, uint64_t s = 2024) : dim(d), seed(s) {
        if (d < 1) throw MetricError("embedder dim must be >= 1");
        Rng rng(seed);
        Rng rd = rng.stream("proj-diff");
        Rng rm = rng.stream("proj-mean");
        float scale = 1.0f / std::sqrt(static_cast<float>(kIn));
        proj_diff.resize(static_cast<size_t>(dim) * kIn);
        proj_mean.resize(static_cast<size_t>(dim) * kIn);
        for (auto& v : proj_diff) v = static_cast<float>(rd.normal()) * scale;
        for (auto& v : proj_mean) v = static_cast<float>(rm.normal()) * scale;
    }

    std::vector<float> thumb(const ImageF& im) const {
        ImageF g = img::to_gray(im);
        ImageF t = img::resize_bilinear(g, kPatch, kPatch);
        return t.data;
    }

    // Motion summary and mean frame before projection; exposed for tests.
    struct Parts {
        std::vector<double> weighted_diff; // 256
        std::vector<double> mean_frame;    // 256
    };

    Parts parts(const std::vector<const ImageF*>& seq) const {
        if (seq.size() < 2) throw MetricError("embed_sequence needs at least 2 images");
        Parts p;
        p.weighted_diff.assign(kIn, 0.0);
        p.mean_frame.assign(kIn, 0.0);
        std::vector<float> prev = thumb(*seq[0]);
        for (int i = 0; i < kIn; ++i) p.mean_frame[static_cast<size_t>(i)] += prev[static_cast<size_t>(i)];
        int steps = static_cast<int>(seq.size()) - 1;
        for (int t = 1; t <= steps; ++t) {
            std::vector<float> cur = thumb(*seq[static_cast<size_t>(t)]);
            double w = static_cast<double>(1 + t) / static_cast<double>(steps);
            for (int i = 0; i < kIn; ++i) {
                p.weighted_diff[static_cast<size_t>(i)] +=
                    w * (static_cast<double>(cur[static_cast<size_t>(i)]) - prev[static_cast<size_t>(i)]);
                p.mean_frame[static_cast<size_t>(i)] += cur[static_cast<size_t>(i)];
            }
            prev = std::move(cur);
        }
        for (auto& v : p.mean_frame) v /= static_cast<double>(seq.size());
        return p;
    }

    std::vector<double> embed(const std::vector<const ImageF*>& seq) const {
        Parts p = parts(seq);
        std::vector<double> out(static_cast<size_t>(dim), 0.0);
        for (int d = 0; d < dim; ++d) {
            double acc = 0.0;
            for (int i = 0; i < kIn; ++i) {
                acc += proj_diff[static_cast<size_t>(d * kIn + i)] * p.weighted_diff[static_cast<size_t>(i)];
                acc += proj_mean[static_cast<size_t>(d * kIn + i)] * p.mean_frame[static_cast<size_t>(i)];
            }
            out[static_cast<size_t>(d)] = acc;
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Gaussian stats and Frechet distance (f64)
// ---------------------------------------------------------------------------

struct GaussianStats {
    int dim = 0;
    std::vector<double> mean; // dim
    std::vector<double> cov;  // dim x dim, row-major, symmetric
};

inline GaussianStats fit_gaussian(const std::vector<std::vector<double>>& feats, double shrink = 0.0) {
    if (feats.empty()) throw MetricError("fit_gaussian: no feature vectors");
    int d = static_cast<int>(feats[0].size());
    GaussianStats g;
    g.dim = d;
    g.mean.assign(static_cast<size_t>(d), 0.0);
    g.cov.assign(static_cast<size_t>(d) * d, 0.0);
    double n = static_cast<double>(feats.size());
    for (const auto& f : feats) {
        if (static_cast<int>(f.size()) != d) throw DimensionError("fit_gaussian: ragged features");
        for (int i = 0; i < d; ++i) g.mean[static_cast<size_t>(i)] += f[static_cast<size_t>(i)];
    }
    for (auto& m : g.mean) m /= n;
    for (const auto& f : feats)
        for (int i = 0; i < d; ++i) {
            double di = f[static_cast<size_t>(i)] - g.mean[static_cast<size_t>(i)];
            for (int j = 0; j <= i; ++j) {
                double dj = f[static_cast<size_t>(j)] - g.mean[static_cast<size_t>(j)];
                g.cov[static_cast<size_t>(i * d + j)] += di * dj;
            }
        }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j) {
            double v = g.cov[static_cast<size_t>(i * d + j)] / n;
            if (i == j) v += shrink;
            g.cov[static_cast<size_t>(i * d + j)] = v;
            g.cov[static_cast<size_t>(j * d + i)] = v;
        }
    return g;
}

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. On return
// a = V diag(w) V^T with eigenvector k in column k of v.
inline void jacobi_eig(std::vector<double> a, int d, std::vector<double>& w, std::vector<double>& v) {
    w.assign(static_cast<size_t>(d), 0.0);
    v.assign(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) v[static_cast<size_t>(i * d + i)] = 1.0;

    auto at = [&](int r, int c) -> double& { return a[static_cast<size_t>(r * d + c)]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) off += std::fabs(at(p, q));
        if (off < 1e-13) break;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) {
                double apq = at(p, q);
                if (std::fabs(apq) < 1e-300) continue;
                double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < d; ++k) {
                    double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < d; ++k) {
                    double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < d; ++k) {
                    double vkp = v[static_cast<size_t>(k * d + p)], vkq = v[static_cast<size_t>(k * d + q)];
                    v[static_cast<size_t>(k * d + p)] = c * vkp - s * vkq;
                    v[static_cast<size_t>(k * d + q)] = s * vkp + c * vkq;
                }
            }
    }
    for (int i = 0; i < d; ++i) w[static_cast<size_t>(i)] = at(i, i);
}

inline std::vector<double> matmul_f64(const std::vector<double>& a, const std::vector<double>& b, int d) {
    std::vector<double> c(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            double av = a[static_cast<size_t>(i * d + k)];
            if (av == 0.0) continue;
            for (int j = 0; j < d; ++j) c[static_cast<size_t>(i * d + j)] += av * b[static_cast<size_t>(k * d + j)];
        }
    return c;
}

// Symmetric PSD square root via eigendecomposition, eigenvalues clamped at 0.
inline std::vector<double> sqrtm_psd(const std::vector<double>& m, int d) {
    std::vector<double> w, v;
    jacobi_eig(m, d, w, v);
    std::vector<double> out(static_cast<size_t>(d) * d, 0.0);
    for (int k = 0; k < d; ++k) {
        double s = w[static_cast<size_t>(k)] > 0.0 ? std::sqrt(w[static_cast<size_t>(k)]) : 0.0;
        if (s == 0.0) continue;
        for (int i = 0; i < d; ++i) {
            double vik = v[static_cast<size_t>(i * d + k)] * s;
            if (vik == 0.0) continue;
            for (int j = 0; j < d; ++j) out[static_cast<size_t>(i * d + j)] += vik * v[static_cast<size_t>(j * d + k)];
        }
    }
    return out;
}

} // namespace detail

// ||mu_p - mu_q||^2 + Tr(C_p + C_q - 2 (C_p C_q)^(1/2)), the cross term
// computed as Tr sqrt(C_p^(1/2) C_q C_p^(1/2)) which is symmetric PSD.
inline double frechet_distance(const GaussianStats& p, const GaussianStats& q) {
    if (p.dim != q.dim)
        throw DimensionError("frechet_distance: dim " + std::to_string(p.dim) + " vs " + std::to_string(q.dim));
    int d = p.dim;
    for (double x : p.mean)
        if (!std::isfinite(x)) throw NumericError("frechet_distance: non-finite mean");
    for (double x : q.mean)
        if (!std::isfinite(x)) throw NumericError("frechet_distance: non-finite mean");
    for (double x : p.cov)
        if (!std::isfinite(x)) throw NumericError("frechet_distance: non-finite covariance");
    for (double x : q.cov)
        if (!std::isfinite(x)) throw NumericError("frechet_distance: non-finite covariance");

    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) {
        double diff = p.mean[static_cast<size_t>(i)] - q.mean[static_cast<size_t>(i)];
        mean_term += diff * diff;
    }

    std::vector<double> sp = detail::sqrtm_psd(p.cov, d);
    std::vector<double> inner = detail::matmul_f64(detail::matmul_f64(sp, q.cov, d), sp, d);
    // Symmetrize against rounding before the second eigendecomposition.
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < i; ++j) {
            double s = 0.5 * (inner[static_cast<size_t>(i * d + j)] + inner[static_cast<size_t>(j * d + i)]);
            inner[static_cast<size_t>(i * d + j)] = s;
            inner[static_cast<size_t>(j * d + i)] = s;
        }
    std::vector<double> w, v;
    detail::jacobi_eig(inner, d, w, v);
    double tr_cross = 0.0;
    for (double lam : w) tr_cross += lam > 0.0 ? std::sqrt(lam) : 0.0;

    double tr = 0.0;
    for (int i = 0; i < d; ++i)
        tr += p.cov[static_cast<size_t>(i * d + i)] + q.cov[static_cast<size_t>(i * d + i)];

    double fd = mean_term + tr - 2.0 * tr_cross;
    if (!std::isfinite(fd)) throw NumericError("frechet_distance: non-finite result");
    return fd > 0.0 ? fd : 0.0;
}

// ---------------------------------------------------------------------------
// FVD variants over image matrices
// ---------------------------------------------------------------------------

inline constexpr double kCovShrink = 1e-3;

inline std::vector<std::vector<double>> embed_matrix_sequences(const ImageMatrix& m, ScanKind kind,
                                                               const SequenceEmbedder& emb) {
    auto seqs = scan_order(kind, m.views, m.frames);
    std::vector<std::vector<double>> feats;
    for (const auto& s : seqs) {
        if (s.size() < 2)
            throw MetricError(std::string(scan_kind_name(kind)) +
                              " needs sequences of length >= 2; grid " + std::to_string(m.views) + "x" +
                              std::to_string(m.frames) + " yields length " + std::to_string(s.size()));
        std::vector<const ImageF*> ptrs;
        ptrs.reserve(s.size());
        for (auto [v, f] : s) ptrs.push_back(&m.cell(v, f));
        feats.push_back(emb.embed(ptrs));
    }
    return feats;
}

inline double fvd_variant(ScanKind kind, const ImageMatrix& generated, const ImageMatrix& reference,
                          const SequenceEmbedder& emb) {
    if (generated.views != reference.views || generated.frames != reference.frames)
        throw DimensionError("fvd: grid mismatch " + std::to_string(generated.views) + "x" +
                             std::to_string(generated.frames) + " vs " + std::to_string(reference.views) + "x" +
                             std::to_string(reference.frames));
    auto fg = embed_matrix_sequences(generated, kind, emb);
    auto fr = embed_matrix_sequences(reference, kind, emb);
    GaussianStats sg = fit_gaussian(fg, kCovShrink);
    GaussianStats sr = fit_gaussian(fr, kCovShrink);
    return frechet_distance(sg, sr);
}

// Cell-averaged pixel metrics over two matrices (alpha channel dropped).
inline double matrix_mse(const ImageMatrix& a, const ImageMatrix& b) {
    if (a.views != b.views || a.frames != b.frames) throw DimensionError("matrix metric: grid mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.cells.size(); ++i) acc += mse(img::rgb_only(a.cells[i]), img::rgb_only(b.cells[i]));
    return acc / static_cast<double>(a.cells.size());
}

inline double matrix_psnr(const ImageMatrix& a, const ImageMatrix& b) {
    if (a.views != b.views || a.frames != b.frames) throw DimensionError("matrix metric: grid mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.cells.size(); ++i) acc += psnr(img::rgb_only(a.cells[i]), img::rgb_only(b.cells[i]));
    return acc / static_cast<double>(a.cells.size());
}

inline double matrix_ssim(const ImageMatrix& a, const ImageMatrix& b) {
    if (a.views != b.views || a.frames != b.frames) throw DimensionError("matrix metric: grid mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.cells.size(); ++i) acc += ssim(a.cells[i], b.cells[i]);
    return acc / static_cast<double>(a.cells.size());
}

} // namespace s4tk::metrics
