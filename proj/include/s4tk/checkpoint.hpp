#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "s4tk/errors.hpp"
#include "s4tk/tensor_io.hpp"
#include "s4tk/version.hpp"
#include "vendor/json.hpp"

// Parameter checkpoints: all tensors concatenated into params.bin (each in
// the flat binary tensor format) plus manifest.json mapping parameter names
// to byte offsets. Arbitrary run metadata rides along under "meta". Both
// files are written to temporaries and renamed, so a checkpoint directory is
// either complete or absent.

namespace s4tk::ckpt {

struct Checkpoint {
    std::vector<std::pair<std::string, core::Tensor>> tensors;
    nlohmann::json meta;

    const core::Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

namespace detail {

inline void write_atomic(const std::string& path, const std::string& contents) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for writing: " + tmp);
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) throw IoError("short write: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp + " into place: " + ec.message());
}

} // namespace detail

inline void save_checkpoint(const std::string& dir,
                            const std::vector<std::pair<std::string, core::Tensor>>& tensors,
                            const nlohmann::json& meta = nlohmann::json::object()) {
    std::filesystem::create_directories(dir);
    std::string blob;
    nlohmann::json offsets = nlohmann::json::object();
    for (const auto& [name, t] : tensors) {
        if (name.empty()) throw ContractError("checkpoint tensor with empty name");
        if (offsets.contains(name)) throw ContractError("duplicate checkpoint tensor: " + name);
        std::string rec = core::serialize_tensor(t);
        offsets[name] = {{"offset", blob.size()}, {"bytes", rec.size()}};
        blob += rec;
    }
    nlohmann::json manifest;
    manifest["format"] = "s4tk-checkpoint-v1";
    manifest["toolkit_version"] = kVersion;
    manifest["tensors"] = offsets;
    manifest["meta"] = meta;
    detail::write_atomic(dir + "/params.bin", blob);
    detail::write_atomic(dir + "/manifest.json", manifest.dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw IoError("cannot open checkpoint manifest in " + dir);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad checkpoint manifest in " + dir + ": " + e.what());
    }
    if (manifest.value("format", "") != "s4tk-checkpoint-v1")
        throw IoError("unrecognized checkpoint format in " + dir);

    std::ifstream bf(dir + "/params.bin", std::ios::binary);
    if (!bf) throw IoError("cannot open checkpoint payload in " + dir);
    std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

    Checkpoint out;
    out.meta = manifest.value("meta", nlohmann::json::object());
    if (!manifest.contains("tensors") || !manifest["tensors"].is_object())
        throw IoError("checkpoint manifest in " + dir + " lists no tensors");
    for (const auto& [name, rec] : manifest["tensors"].items()) {
        size_t off = rec.value("offset", size_t{0});
        size_t bytes = rec.value("bytes", size_t{0});
        if (off + bytes > blob.size() || bytes == 0)
            throw IoError("checkpoint record " + name + " out of bounds in " + dir);
        out.tensors.emplace_back(name, core::deserialize_tensor(blob.data() + off, bytes));
    }
    return out;
}

// Copies checkpointed values into live parameters in place; every parameter
// must be present with a matching shape.
inline void restore_parameters(const Checkpoint& c,
                               const std::vector<std::pair<std::string, core::Tensor>>& params) {
    for (const auto& [name, t] : params) {
        const core::Tensor* src = c.find(name);
        if (!src) throw ContractError("checkpoint is missing parameter " + name);
        if (src->shape() != t.shape())
            throw DimensionError("checkpoint parameter " + name + " has shape " +
                                 core::shape_str(src->shape()) + ", model expects " +
                                 core::shape_str(t.shape()));
        core::Tensor handle = t; // tensors share storage, so this writes through
        handle.mutable_data() = src->data();
    }
}

} // namespace s4tk::ckpt
