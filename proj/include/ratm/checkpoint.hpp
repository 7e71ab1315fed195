#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "optimizer.hpp"
#include "tensor.hpp"

namespace ratm {

// Checkpoint file: magic "RATMCKPT", u32 version, u32 tensor count, then per
// tensor: u32 name length, name bytes, u32 rank, u32 dims, f64 data (all
// little-endian). Optimizer slots are stored under "opt.v:" keys plus
// scalar "opt.step" / "opt.epoch" records.
constexpr char kCheckpointMagic[8] = {'R', 'A', 'T', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ParamMap& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    auto w32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    w32(kCheckpointVersion);
    w32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        w32(static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        w32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape) w32(static_cast<std::uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline ParamMap load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[sizeof(kCheckpointMagic)];
    if (!in.read(magic, sizeof(magic)) ||
        std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    auto r32 = [&]() {
        std::uint32_t v;
        if (!in.read(reinterpret_cast<char*>(&v), 4))
            throw std::runtime_error("load_checkpoint: truncated " + path);
        return v;
    };
    std::uint32_t version = r32();
    if (version != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version in " + path);
    std::uint32_t count = r32();
    ParamMap out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t len = r32();
        std::string name(len, '\0');
        if (!in.read(name.data(), len))
            throw std::runtime_error("load_checkpoint: truncated name in " + path);
        std::uint32_t rank = r32();
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = r32();
        Tensor t(shape);
        if (!in.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(t.numel() * sizeof(double))))
            throw std::runtime_error("load_checkpoint: truncated data in " + path);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

// Bundles model params + optimizer state into one flat map and back.
inline ParamMap pack_training_state(const ParamMap& model, const OptimizerState& opt,
                                    std::uint64_t epoch) {
    ParamMap all = model;
    for (const auto& [name, v] : opt.velocity) all["opt.v:" + name] = v;
    all["opt.step"] = Tensor::scalar_of(static_cast<double>(opt.step));
    all["opt.epoch"] = Tensor::scalar_of(static_cast<double>(epoch));
    return all;
}

inline void unpack_training_state(const ParamMap& all, ParamMap& model, OptimizerState& opt,
                                  std::uint64_t& epoch) {
    for (auto& [name, t] : model) {
        auto it = all.find(name);
        if (it == all.end())
            throw std::runtime_error("checkpoint missing parameter '" + name + "'");
        t = it->second;
    }
    opt.velocity.clear();
    for (const auto& [name, t] : all)
        if (name.rfind("opt.v:", 0) == 0) opt.velocity[name.substr(6)] = t;
    opt.step = static_cast<std::uint64_t>(all.at("opt.step").scalar());
    epoch = static_cast<std::uint64_t>(all.at("opt.epoch").scalar());
}

}  // namespace ratm
