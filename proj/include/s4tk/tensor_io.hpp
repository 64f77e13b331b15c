#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "s4tk/errors.hpp"
#include "s4tk/tensor.hpp"

// Flat binary tensor container:
//   bytes 0..3   magic "S4TK"
//   u32          rank
//   u32 * rank   dims
//   f32 * numel  row-major payload
// All integers and floats little-endian.

namespace s4tk::core {

namespace detail {

inline void put_u32(std::string& buf, uint32_t v) {
    char b[4];
    b[0] = static_cast<char>(v & 0xff);
    b[1] = static_cast<char>((v >> 8) & 0xff);
    b[2] = static_cast<char>((v >> 16) & 0xff);
    b[3] = static_cast<char>((v >> 24) & 0xff);
    buf.append(b, 4);
}

inline uint32_t get_u32(const char* p) {
    return static_cast<uint32_t>(static_cast<unsigned char>(p[0])) |
           (static_cast<uint32_t>(static_cast<unsigned char>(p[1])) << 8) |
           (static_cast<uint32_t>(static_cast<unsigned char>(p[2])) << 16) |
           (static_cast<uint32_t>(static_cast<unsigned char>(p[3])) << 24);
}

} // namespace detail

inline std::string serialize_tensor(const Tensor& t) {
    std::string buf;
    buf.reserve(8 + 4 * t.shape().size() + 4 * static_cast<size_t>(t.size()));
    buf.append("S4TK", 4);
    detail::put_u32(buf, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) detail::put_u32(buf, static_cast<uint32_t>(d));
    static_assert(sizeof(float) == 4);
    for (float v : t.data()) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        detail::put_u32(buf, bits);
    }
    return buf;
}

inline Tensor deserialize_tensor(const char* p, size_t n, size_t* consumed = nullptr) {
    if (n < 8 || std::memcmp(p, "S4TK", 4) != 0)
        throw IoError("tensor blob: bad magic or truncated header");
    uint32_t rank = detail::get_u32(p + 4);
    if (rank > 16) throw IoError("tensor blob: implausible rank " + std::to_string(rank));
    size_t off = 8;
    if (n < off + 4 * rank) throw IoError("tensor blob: truncated dims");
    Shape shape(rank);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        uint32_t d = detail::get_u32(p + off);
        off += 4;
        if (d == 0 || d > (1u << 30)) throw IoError("tensor blob: bad dim " + std::to_string(d));
        shape[i] = static_cast<int>(d);
        numel *= d;
    }
    if (n < off + 4 * static_cast<size_t>(numel)) throw IoError("tensor blob: truncated payload");
    std::vector<float> data(static_cast<size_t>(numel));
    for (int64_t i = 0; i < numel; ++i) {
        uint32_t bits = detail::get_u32(p + off);
        off += 4;
        std::memcpy(&data[static_cast<size_t>(i)], &bits, 4);
    }
    if (consumed) *consumed = off;
    return Tensor::constant(shape, std::move(data));
}

inline void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    std::string buf = serialize_tensor(t);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("short write: " + path);
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_tensor(buf.data(), buf.size());
}

} // namespace s4tk::core
