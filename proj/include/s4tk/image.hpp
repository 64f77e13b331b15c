#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "s4tk/errors.hpp"

// Float images in [0,1], row-major H×W×C, plus a minimal PNG codec
// (8-bit, RGBA out; gray/RGB/RGBA in) built directly on zlib.

namespace s4tk::img {

struct ImageF {
    int height = 0, width = 0, channels = 0;
    std::vector<float> data;

    ImageF() = default;
    ImageF(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {
        if (h <= 0 || w <= 0 || c <= 0) throw DimensionError("image dims must be positive");
    }

    float& at(int r, int c, int ch) {
        return data[(static_cast<size_t>(r) * width + c) * channels + ch];
    }
    float at(int r, int c, int ch) const {
        return data[(static_cast<size_t>(r) * width + c) * channels + ch];
    }
    size_t size() const { return data.size(); }
    bool same_shape(const ImageF& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

inline ImageF rgb_only(const ImageF& im) {
    if (im.channels == 3) return im;
    if (im.channels != 4) throw DimensionError("rgb_only needs 3 or 4 channels");
    ImageF out(im.height, im.width, 3);
    for (int r = 0; r < im.height; ++r)
        for (int c = 0; c < im.width; ++c)
            for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = im.at(r, c, ch);
    return out;
}

// Rec.601 luma; alpha ignored. Gray input passes through.
inline ImageF to_gray(const ImageF& im) {
    ImageF g(im.height, im.width, 1);
    if (im.channels == 1) {
        g.data = im.data;
        return g;
    }
    if (im.channels < 3) throw DimensionError("to_gray needs 1, 3 or 4 channels");
    for (int r = 0; r < im.height; ++r)
        for (int c = 0; c < im.width; ++c)
            g.at(r, c, 0) = 0.299f * im.at(r, c, 0) + 0.587f * im.at(r, c, 1) + 0.114f * im.at(r, c, 2);
    return g;
}

// Bilinear resample at target pixel centers.
inline ImageF resize_bilinear(const ImageF& im, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw DimensionError("resize target must be positive");
    ImageF out(out_h, out_w, im.channels);
    float sy = static_cast<float>(im.height) / static_cast<float>(out_h);
    float sx = static_cast<float>(im.width) / static_cast<float>(out_w);
    for (int r = 0; r < out_h; ++r) {
        float fy = (static_cast<float>(r) + 0.5f) * sy - 0.5f;
        int y0 = static_cast<int>(std::floor(fy));
        float wy = fy - static_cast<float>(y0);
        int y1 = std::min(im.height - 1, std::max(0, y0 + 1));
        y0 = std::min(im.height - 1, std::max(0, y0));
        for (int c = 0; c < out_w; ++c) {
            float fx = (static_cast<float>(c) + 0.5f) * sx - 0.5f;
            int x0 = static_cast<int>(std::floor(fx));
            float wx = fx - static_cast<float>(x0);
            int x1 = std::min(im.width - 1, std::max(0, x0 + 1));
            x0 = std::min(im.width - 1, std::max(0, x0));
            for (int ch = 0; ch < im.channels; ++ch) {
                float v00 = im.at(y0, x0, ch), v01 = im.at(y0, x1, ch);
                float v10 = im.at(y1, x0, ch), v11 = im.at(y1, x1, ch);
                out.at(r, c, ch) = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
            }
        }
    }
    return out;
}

namespace detail {

inline void put_u32be(std::string& s, uint32_t v) {
    s.push_back(static_cast<char>((v >> 24) & 0xff));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>(v & 0xff));
}

inline uint32_t get_u32be(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void put_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_u32be(out, static_cast<uint32_t>(payload.size()));
    size_t start = out.size();
    out.append(type, 4);
    out += payload;
    uint32_t crc = static_cast<uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(out.data() + start), static_cast<uInt>(4 + payload.size())));
    put_u32be(out, crc);
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

} // namespace detail

inline uint8_t float_to_u8(float v) {
    float c = std::min(1.0f, std::max(0.0f, v));
    return static_cast<uint8_t>(c * 255.0f + 0.5f);
}

// Always emits 8-bit RGBA. Gray is replicated, missing alpha is opaque.
inline std::string encode_png(const ImageF& im) {
    if (im.channels != 1 && im.channels != 3 && im.channels != 4)
        throw DimensionError("encode_png: unsupported channel count " + std::to_string(im.channels));
    int h = im.height, w = im.width;

    std::vector<unsigned char> raw(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * 4));
    size_t p = 0;
    for (int r = 0; r < h; ++r) {
        raw[p++] = 0; // filter: none
        for (int c = 0; c < w; ++c) {
            uint8_t rgba[4];
            if (im.channels == 1) {
                uint8_t g = float_to_u8(im.at(r, c, 0));
                rgba[0] = rgba[1] = rgba[2] = g;
                rgba[3] = 255;
            } else {
                rgba[0] = float_to_u8(im.at(r, c, 0));
                rgba[1] = float_to_u8(im.at(r, c, 1));
                rgba[2] = float_to_u8(im.at(r, c, 2));
                rgba[3] = im.channels == 4 ? float_to_u8(im.at(r, c, 3)) : 255;
            }
            std::memcpy(raw.data() + p, rgba, 4);
            p += 4;
        }
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(bound);
    if (compress2(comp.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("png: zlib compression failed");
    comp.resize(bound);

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    detail::put_u32be(ihdr, static_cast<uint32_t>(w));
    detail::put_u32be(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);                 // bit depth
    ihdr.push_back(6);                 // color type RGBA
    ihdr.push_back(0);                 // compression
    ihdr.push_back(0);                 // filter method
    ihdr.push_back(0);                 // no interlace
    detail::put_chunk(out, "IHDR", ihdr);
    detail::put_chunk(out, "IDAT", std::string(reinterpret_cast<char*>(comp.data()), comp.size()));
    detail::put_chunk(out, "IEND", "");
    return out;
}

inline ImageF decode_png(const std::string& bytes) {
    const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
    size_t n = bytes.size();
    if (n < 8 || std::memcmp(b, "\x89PNG\r\n\x1a\n", 8) != 0) throw IoError("png: bad signature");

    int w = 0, h = 0, depth = 0, color = 0;
    std::string idat;
    size_t off = 8;
    while (off + 8 <= n) {
        uint32_t len = detail::get_u32be(b + off);
        if (off + 12 + len > n) throw IoError("png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(b + off + 4);
        const unsigned char* data = b + off + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError("png: bad IHDR");
            w = static_cast<int>(detail::get_u32be(data));
            h = static_cast<int>(detail::get_u32be(data + 4));
            depth = data[8];
            color = data[9];
            if (data[12] != 0) throw IoError("png: interlaced images unsupported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.append(reinterpret_cast<const char*>(data), len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        off += 12 + len;
    }
    if (w <= 0 || h <= 0) throw IoError("png: missing IHDR");
    if (depth != 8) throw IoError("png: only 8-bit images supported");
    int src_c;
    switch (color) {
        case 0: src_c = 1; break;
        case 2: src_c = 3; break;
        case 6: src_c = 4; break;
        default: throw IoError("png: unsupported color type " + std::to_string(color));
    }

    size_t stride = static_cast<size_t>(w) * src_c;
    std::vector<unsigned char> raw(static_cast<size_t>(h) * (1 + stride));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, reinterpret_cast<const Bytef*>(idat.data()),
                   static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw IoError("png: zlib decompression failed");

    // Undo per-row filters in place.
    std::vector<unsigned char> prev(stride, 0);
    std::vector<unsigned char> cur(stride);
    ImageF out(h, w, 4);
    int bpp = src_c;
    for (int r = 0; r < h; ++r) {
        const unsigned char* row = raw.data() + static_cast<size_t>(r) * (1 + stride);
        int filter = row[0];
        const unsigned char* src = row + 1;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
            int up = prev[i];
            int c = i >= static_cast<size_t>(bpp) ? prev[i - bpp] : 0;
            int v;
            switch (filter) {
                case 0: v = src[i]; break;
                case 1: v = src[i] + a; break;
                case 2: v = src[i] + up; break;
                case 3: v = src[i] + (a + up) / 2; break;
                case 4: v = src[i] + detail::paeth(a, up, c); break;
                default: throw IoError("png: unknown filter " + std::to_string(filter));
            }
            cur[i] = static_cast<unsigned char>(v & 0xff);
        }
        for (int cc = 0; cc < w; ++cc) {
            const unsigned char* px = cur.data() + static_cast<size_t>(cc) * src_c;
            float rr, gg, bb, aa;
            if (src_c == 1) {
                rr = gg = bb = px[0] / 255.0f;
                aa = 1.0f;
            } else {
                rr = px[0] / 255.0f;
                gg = px[1] / 255.0f;
                bb = px[2] / 255.0f;
                aa = src_c == 4 ? px[3] / 255.0f : 1.0f;
            }
            out.at(r, cc, 0) = rr;
            out.at(r, cc, 1) = gg;
            out.at(r, cc, 2) = bb;
            out.at(r, cc, 3) = aa;
        }
        std::swap(prev, cur);
    }
    return out;
}

inline void save_png(const std::string& path, const ImageF& im) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    std::string bytes = encode_png(im);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write: " + path);
}

inline ImageF load_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

} // namespace s4tk::img
