#pragma once

// Parameter store: one container file holding a JSON header (names, shapes,
// dtype, byte offsets, model metadata) followed by raw little-endian value
// arrays. Layout: [u64 header length][header JSON][payload].

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsfidm/autograd.hpp"

namespace lsfidm::numerics {

inline constexpr const char* kParamStoreFormat = "lsfidm-params-v1";

template <typename T>
const char* dtype_name() {
    if constexpr (sizeof(T) == 4) return "f32";
    else return "f64";
}

template <typename T>
void save_params(const std::string& path, const nlohmann::json& model_meta,
                 const std::vector<Param<T>*>& params) {
    nlohmann::json header;
    header["format"] = kParamStoreFormat;
    header["dtype"] = dtype_name<T>();
    header["model"] = model_meta;
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const Param<T>* p : params) {
        tensors.push_back({{"name", p->name},
                           {"rows", p->value.rows()},
                           {"cols", p->value.cols()},
                           {"offset", offset}});
        offset += p->value.size() * sizeof(T);
    }
    header["tensors"] = std::move(tensors);
    const std::string head = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    std::uint64_t len = head.size();
    std::uint8_t lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<std::uint8_t>((len >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(lenbuf), 8);
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const Param<T>* p : params)
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(T)));
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

template <typename T>
struct LoadedParams {
    nlohmann::json model_meta;
    std::map<std::string, Tensor<T>> tensors;
};

// Header-only read, used to dispatch on model kind before loading values.
inline nlohmann::json load_checkpoint_meta(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::uint8_t lenbuf[8];
    in.read(reinterpret_cast<char*>(lenbuf), 8);
    if (!in) throw std::runtime_error("corrupt checkpoint header in " + path);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lenbuf[i]) << (8 * i);
    if (len == 0 || len > (1ULL << 24))
        throw std::runtime_error("corrupt checkpoint header in " + path);
    std::string head(len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("corrupt checkpoint header in " + path);
    nlohmann::json header = nlohmann::json::parse(head, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != kParamStoreFormat)
        throw std::runtime_error("corrupt checkpoint header in " + path);
    return header;
}

template <typename T>
LoadedParams<T> load_params(const std::string& path) {
    nlohmann::json header = load_checkpoint_meta(path);
    if (header.value("dtype", "") != dtype_name<T>())
        throw std::runtime_error("checkpoint dtype mismatch in " + path + ": expected " +
                                 dtype_name<T>() + ", found " + header.value("dtype", "?"));

    std::ifstream in(path, std::ios::binary);
    std::uint8_t lenbuf[8];
    in.read(reinterpret_cast<char*>(lenbuf), 8);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lenbuf[i]) << (8 * i);
    in.seekg(static_cast<std::streamoff>(8 + len));
    const std::streamoff payload_start = in.tellg();

    LoadedParams<T> loaded;
    loaded.model_meta = header["model"];
    for (const auto& entry : header["tensors"]) {
        const std::string name = entry.at("name").get<std::string>();
        const std::size_t rows = entry.at("rows").get<std::size_t>();
        const std::size_t cols = entry.at("cols").get<std::size_t>();
        const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
        Tensor<T> t(rows, cols);
        in.seekg(payload_start + static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(T)));
        if (!in) throw std::runtime_error("truncated checkpoint payload in " + path);
        loaded.tensors.emplace(name, std::move(t));
    }
    return loaded;
}

// Restore a parameter's value from a loaded store; shape must match.
template <typename T>
void restore(Param<T>& param, const LoadedParams<T>& loaded, const std::string& path) {
    auto it = loaded.tensors.find(param.name);
    if (it == loaded.tensors.end())
        throw std::runtime_error("checkpoint " + path + " is missing tensor " + param.name);
    if (!it->second.same_shape(param.value))
        throw std::runtime_error("checkpoint " + path + " has wrong shape for " + param.name);
    param.value = it->second;
}

}  // namespace lsfidm::numerics
