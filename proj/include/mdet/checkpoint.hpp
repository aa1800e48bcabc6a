#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdet/tensor.hpp"

namespace mdet {

// Checkpoint file, little-endian:
//   magic   8 bytes "MDETCKPT"
//   version u32 (currently 1)
//   count   u32
//   entries count x:
//     name_len u32, name bytes
//     dtype    u8  (0 = f32)
//     rank     u32, dims u32[rank]
//     data     f32[prod(dims)]
// Values are stored as f32; loading widens back to double.

namespace detail {

template <typename T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write("MDETCKPT", 8);
    detail::write_pod<uint32_t>(f, 1);
    detail::write_pod<uint32_t>(f, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_pod<uint32_t>(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<uint8_t>(f, 0);
        detail::write_pod<uint32_t>(f, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) detail::write_pod<uint32_t>(f, static_cast<uint32_t>(d));
        for (double e : t.v) detail::write_pod<float>(f, static_cast<float>(e));
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::string(magic, 8) != "MDETCKPT")
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const auto version = detail::read_pod<uint32_t>(f);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
    const auto count = detail::read_pod<uint32_t>(f);
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        const auto name_len = detail::read_pod<uint32_t>(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const auto dtype = detail::read_pod<uint8_t>(f);
        if (dtype != 0) throw std::runtime_error("checkpoint: unsupported dtype");
        const auto rank = detail::read_pod<uint32_t>(f);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(detail::read_pod<uint32_t>(f));
        Tensor t(shape);
        for (double& e : t.v) e = static_cast<double>(detail::read_pod<float>(f));
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

}  // namespace mdet
