#pragma once

// Checkpoint archive: "CCICKPT1", u64 LE manifest length, JSON manifest,
// then every tensor as little-endian float32 in manifest order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "network.hpp"

namespace cci {

inline constexpr char kCheckpointMagic[8] = {'C', 'C', 'I', 'C', 'K', 'P', 'T', '1'};

struct CheckpointInfo {
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::string mode;
    int fold = -1;
};

namespace detail {

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64_le(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw Error("truncated checkpoint header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void put_f32_le(std::ostream& os, float f) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                          static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

} // namespace detail

template <typename S>
void save_checkpoint(const Model<S>& model, const CheckpointInfo& info, const std::filesystem::path& path) {
    auto& m = const_cast<Model<S>&>(model);
    nlohmann::ordered_json man;
    man["format"] = "cci-checkpoint-v1";
    man["task"] = std::string(to_string(m.shape.task));
    man["latent_dim"] = m.shape.encoder.latent_dim;
    man["seed"] = info.seed;
    man["config_hash"] = info.config_hash;
    man["mode"] = info.mode;
    man["fold"] = info.fold;
    man["encoder_kind"] = m.encoder->kind();
    man["shape"] = to_json(m.shape);
    auto tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    m.for_each_tensor([&](const std::string& name, Mat<S>& t) {
        tensors.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.size()) * 4;
    });
    man["tensors"] = tensors;
    const std::string js = man.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic, 8);
    detail::put_u64_le(os, js.size());
    os.write(js.data(), static_cast<std::streamsize>(js.size()));
    m.for_each_tensor([&](const std::string&, Mat<S>& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) detail::put_f32_le(os, static_cast<float>(t.data()[i]));
    });
    if (!os) throw Error("failed writing checkpoint " + path.string());
}

template <typename S>
Model<S> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw Error("not a checkpoint: " + path.string());
    const auto len = detail::get_u64_le(is);
    if (len > (1u << 26)) throw Error("corrupt checkpoint manifest length");
    std::string js(len, '\0');
    if (!is.read(js.data(), static_cast<std::streamsize>(len))) throw Error("truncated checkpoint manifest");
    nlohmann::json man;
    try {
        man = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("corrupt checkpoint manifest: ") + e.what());
    }
    const ModelShape shape = model_shape_from_json(man.at("shape"));
    Model<S> m = init_params<S>(shape, 0);
    const auto& tensors = man.at("tensors");
    std::size_t k = 0;
    std::vector<unsigned char> buf;
    m.for_each_tensor([&](const std::string& name, Mat<S>& t) {
        if (k >= tensors.size()) throw Error("checkpoint is missing tensor " + name);
        const auto& d = tensors[k++];
        if (d.at("name").get<std::string>() != name) throw Error("checkpoint tensor order mismatch at " + name);
        const auto sh = d.at("shape");
        if (sh[0].get<Eigen::Index>() != t.rows() || sh[1].get<Eigen::Index>() != t.cols())
            throw Error("checkpoint tensor shape mismatch at " + name);
        buf.resize(static_cast<std::size_t>(t.size()) * 4);
        if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            throw Error("truncated checkpoint data at " + name);
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            const auto* b = &buf[static_cast<std::size_t>(i) * 4];
            const std::uint32_t u = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
            t.data()[i] = static_cast<S>(std::bit_cast<float>(u));
        }
    });
    if (k != tensors.size()) throw Error("checkpoint has unexpected extra tensors");
    if (info) {
        info->seed = man.value("seed", std::uint64_t{0});
        info->config_hash = man.value("config_hash", std::uint64_t{0});
        info->mode = man.value("mode", std::string{});
        info->fold = man.value("fold", -1);
    }
    return m;
}

} // namespace cci
