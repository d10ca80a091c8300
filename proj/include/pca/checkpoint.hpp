#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pca/backbone.hpp"

namespace pca::ckpt {

/// Checkpoint layout: a directory holding
///   manifest.json  network layout plus an ordered tensor list {name, shape, dtype}
///   params.bin     the tensors as little-endian 32-bit floats, concatenated
///                  in manifest order (learnables first, then batch-norm
///                  running statistics)
/// Float models round-trip bit-exactly; double models are stored at f32.

namespace detail {

inline void append_f32(std::vector<unsigned char>& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    out.push_back(static_cast<unsigned char>(bits));
    out.push_back(static_cast<unsigned char>(bits >> 8));
    out.push_back(static_cast<unsigned char>(bits >> 16));
    out.push_back(static_cast<unsigned char>(bits >> 24));
}

inline float read_f32(const unsigned char* p) {
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(bits);
}

inline nlohmann::json spec_to_json(const backbone::BackboneSpec& s) {
    return {{"block_layers", s.block_layers},
            {"growth", s.growth},
            {"stem_channels", s.stem_channels},
            {"stem_kernel", s.stem_kernel},
            {"stem_pool", s.stem_pool},
            {"in_channels", s.in_channels},
            {"classes", s.classes},
            {"k", s.k},
            {"attention_sites", s.attention_sites},
            {"softmax_scores", s.softmax_scores},
            {"residual_attention", s.residual_attention}};
}

inline backbone::BackboneSpec spec_from_json(const nlohmann::json& j) {
    backbone::BackboneSpec s;
    j.at("block_layers").get_to(s.block_layers);
    j.at("growth").get_to(s.growth);
    j.at("stem_channels").get_to(s.stem_channels);
    j.at("stem_kernel").get_to(s.stem_kernel);
    j.at("stem_pool").get_to(s.stem_pool);
    j.at("in_channels").get_to(s.in_channels);
    j.at("classes").get_to(s.classes);
    j.at("k").get_to(s.k);
    j.at("attention_sites").get_to(s.attention_sites);
    j.at("softmax_scores").get_to(s.softmax_scores);
    j.at("residual_attention").get_to(s.residual_attention);
    return s;
}

inline nlohmann::json shape_to_json(const Shape& s) { return {s.n, s.h, s.w, s.c}; }

template <typename T, typename Fn>
void for_each_tensor(backbone::Model<T>& m, Fn&& fn) {
    m.for_each_param([&fn](const std::string& name, Tensor<T>& t) { fn(name, t); });
    m.for_each_buffer([&fn](const std::string& name, Tensor<T>& t) { fn(name, t); });
}

}  // namespace detail

template <typename T>
void save_checkpoint(backbone::Model<T>& model, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("checkpoint: cannot create " + dir + ": " + ec.message());

    nlohmann::json manifest;
    manifest["format"] = "pca-checkpoint";
    manifest["version"] = 1;
    manifest["spec"] = detail::spec_to_json(model.spec);
    manifest["tensors"] = nlohmann::json::array();
    std::vector<unsigned char> blob;
    detail::for_each_tensor(model, [&manifest, &blob](const std::string& name, Tensor<T>& t) {
        manifest["tensors"].push_back(
            {{"name", name}, {"shape", detail::shape_to_json(t.shape())}, {"dtype", "f32"}});
        for (std::size_t i = 0; i < t.size(); ++i) detail::append_f32(blob, static_cast<float>(t[i]));
    });

    {
        std::ofstream out(dir + "/manifest.json", std::ios::binary);
        if (!out) throw std::runtime_error("checkpoint: cannot write " + dir + "/manifest.json");
        out << manifest.dump(2) << "\n";
    }
    {
        std::ofstream out(dir + "/params.bin", std::ios::binary);
        if (!out) throw std::runtime_error("checkpoint: cannot write " + dir + "/params.bin");
        out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
        if (!out) throw std::runtime_error("checkpoint: short write to " + dir + "/params.bin");
    }
}

/// Fills an existing model's tensors from a checkpoint directory. The stored
/// tensor list must match the model's traversal name-for-name and
/// shape-for-shape; the first mismatch is reported by name.
template <typename T>
void load_checkpoint_into(backbone::Model<T>& model, const std::string& dir) {
    nlohmann::json manifest;
    {
        std::ifstream in(dir + "/manifest.json", std::ios::binary);
        if (!in) throw std::runtime_error("checkpoint: cannot open " + dir + "/manifest.json");
        try {
            in >> manifest;
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("checkpoint: corrupt manifest in " + dir + ": " + e.what());
        }
    }
    if (manifest.value("format", "") != "pca-checkpoint")
        throw std::runtime_error("checkpoint: " + dir + " is not a checkpoint directory");

    std::vector<unsigned char> blob;
    {
        std::ifstream in(dir + "/params.bin", std::ios::binary);
        if (!in) throw std::runtime_error("checkpoint: cannot open " + dir + "/params.bin");
        blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    const auto& tensors = manifest.at("tensors");
    std::size_t entry = 0;
    std::size_t offset = 0;
    detail::for_each_tensor(model, [&](const std::string& name, Tensor<T>& t) {
        if (entry >= tensors.size())
            throw std::runtime_error("checkpoint: manifest ends before tensor " + name);
        const auto& meta = tensors[entry];
        const std::string stored = meta.at("name").get<std::string>();
        if (stored != name)
            throw std::runtime_error("checkpoint: tensor " + std::to_string(entry) + " is '" + stored +
                                     "', model expects '" + name + "'");
        const auto shp = meta.at("shape").get<std::vector<int>>();
        const Shape& want = t.shape();
        if (shp.size() != 4 || shp[0] != want.n || shp[1] != want.h || shp[2] != want.w || shp[3] != want.c)
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        if (meta.at("dtype").get<std::string>() != "f32")
            throw std::runtime_error("checkpoint: unsupported dtype for '" + name + "'");
        if (offset + 4 * t.size() > blob.size())
            throw std::runtime_error("checkpoint: params.bin truncated at tensor '" + name + "'");
        for (std::size_t i = 0; i < t.size(); ++i, offset += 4)
            t[i] = static_cast<T>(detail::read_f32(blob.data() + offset));
        ++entry;
    });
    if (entry != tensors.size())
        throw std::runtime_error("checkpoint: manifest lists " + std::to_string(tensors.size()) +
                                 " tensors, model has " + std::to_string(entry));
    if (offset != blob.size())
        throw std::runtime_error("checkpoint: params.bin has " + std::to_string(blob.size() - offset) +
                                 " trailing bytes");
}

/// Rebuilds the model described by the stored layout and loads its tensors.
template <typename T = float>
backbone::Model<T> load_checkpoint(const std::string& dir) {
    nlohmann::json manifest;
    std::ifstream in(dir + "/manifest.json", std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + dir + "/manifest.json");
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: corrupt manifest in " + dir + ": " + e.what());
    }
    backbone::BackboneSpec spec;
    try {
        spec = detail::spec_from_json(manifest.at("spec"));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: corrupt spec in " + dir + ": " + e.what());
    }
    backbone::Model<T> model = backbone::build_model<T>(spec, 0);
    load_checkpoint_into(model, dir);
    return model;
}

}  // namespace pca::ckpt
