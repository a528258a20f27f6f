#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2c/optim.hpp"
#include "p2c/p2cnet.hpp"

namespace p2c {

// Checkpoint container (little-endian):
//   magic "P2CCKPT1", u32 version
//   config echo (u32 length + bytes)
//   i64 epoch, f64 best validation mIoU
//   u32 tensor count, then per tensor:
//     name (u32 + bytes), u8 trainable, u32 rank, i32 dims[rank], f32 data[]
//   u8 has_optimizer_state; if set: i64 adam step count, then per trainable
//   tensor (store order): f32 m[], f32 v[]

namespace ckptdetail {

inline void put_u32(std::ofstream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_i32(std::ofstream& f, std::int32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_i64(std::ofstream& f, std::int64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_f64(std::ofstream& f, double v) { f.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_str(std::ofstream& f, const std::string& s) {
    put_u32(f, static_cast<std::uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::ifstream& f) { std::uint32_t v; f.read(reinterpret_cast<char*>(&v), 4); return v; }
inline std::int32_t get_i32(std::ifstream& f) { std::int32_t v; f.read(reinterpret_cast<char*>(&v), 4); return v; }
inline std::int64_t get_i64(std::ifstream& f) { std::int64_t v; f.read(reinterpret_cast<char*>(&v), 8); return v; }
inline double get_f64(std::ifstream& f) { double v; f.read(reinterpret_cast<char*>(&v), 8); return v; }
inline std::string get_str(std::ifstream& f) {
    std::uint32_t n = get_u32(f);
    std::string s(n, '\0');
    f.read(s.data(), n);
    return s;
}

inline void put_floats(std::ofstream& f, const Tensor<float>& t) {
    f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
}

} // namespace ckptdetail

struct CheckpointMeta {
    std::string config_echo;
    std::int64_t epoch = 0;
    double best_val_miou = 0;
};

inline void save_checkpoint(const std::string& path, const P2CNetwork<float>& net,
                            const std::string& config_echo, std::int64_t epoch,
                            double best_val_miou, Adam<float>* opt = nullptr) {
    namespace d = ckptdetail;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    f.write("P2CCKPT1", 8);
    d::put_u32(f, 1);
    d::put_str(f, config_echo);
    d::put_i64(f, epoch);
    d::put_f64(f, best_val_miou);
    const auto& store = net.store;
    d::put_u32(f, static_cast<std::uint32_t>(store.size()));
    for (int i = 0; i < store.size(); ++i) {
        const auto& e = store.entry(i);
        d::put_str(f, e.name);
        f.put(e.trainable ? 1 : 0);
        d::put_u32(f, static_cast<std::uint32_t>(e.value.rank()));
        for (int k = 0; k < e.value.rank(); ++k) d::put_i32(f, e.value.dim(k));
        d::put_floats(f, e.value);
    }
    f.put(opt ? 1 : 0);
    if (opt) {
        d::put_i64(f, opt->step_count());
        for (int i = 0; i < store.size(); ++i) {
            if (!store.entry(i).trainable) continue;
            d::put_floats(f, opt->moment1()[static_cast<std::size_t>(i)]);
            d::put_floats(f, opt->moment2()[static_cast<std::size_t>(i)]);
        }
    }
    if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::map<std::string, Tensor<float>> tensors;
    bool has_optimizer = false;
    std::int64_t adam_steps = 0;
    std::map<std::string, std::pair<Tensor<float>, Tensor<float>>> adam_moments;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    namespace d = ckptdetail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    f.read(magic, 8);
    if (std::memcmp(magic, "P2CCKPT1", 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint32_t version = d::get_u32(f);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version");

    LoadedCheckpoint out;
    out.meta.config_echo = d::get_str(f);
    out.meta.epoch = d::get_i64(f);
    out.meta.best_val_miou = d::get_f64(f);
    std::uint32_t n = d::get_u32(f);
    std::vector<std::string> trainable_order;
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = d::get_str(f);
        bool trainable = f.get() != 0;
        std::uint32_t rank = d::get_u32(f);
        Shape shape(rank);
        for (std::uint32_t k = 0; k < rank; ++k) shape[k] = d::get_i32(f);
        Tensor<float> t(shape);
        f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
        if (trainable) trainable_order.push_back(name);
        out.tensors.emplace(std::move(name), std::move(t));
    }
    out.has_optimizer = f.get() != 0;
    if (out.has_optimizer) {
        out.adam_steps = d::get_i64(f);
        for (const auto& name : trainable_order) {
            const Tensor<float>& ref = out.tensors.at(name);
            Tensor<float> m(ref.shape()), v(ref.shape());
            f.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.numel() * 4));
            f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.numel() * 4));
            out.adam_moments.emplace(name, std::make_pair(std::move(m), std::move(v)));
        }
    }
    if (!f) throw std::runtime_error("checkpoint: truncated file: " + path);
    return out;
}

inline void apply_checkpoint(const LoadedCheckpoint& ckpt, P2CNetwork<float>& net,
                             Adam<float>* opt = nullptr) {
    auto& store = net.store;
    for (int i = 0; i < store.size(); ++i) {
        auto& e = store.entry(i);
        auto it = ckpt.tensors.find(e.name);
        if (it == ckpt.tensors.end())
            throw std::runtime_error("checkpoint: missing tensor '" + e.name + "'");
        if (it->second.shape() != e.value.shape())
            throw std::runtime_error("checkpoint: shape mismatch for '" + e.name + "'");
        e.value = it->second;
    }
    if (opt && ckpt.has_optimizer) {
        opt->set_step_count(ckpt.adam_steps);
        for (int i = 0; i < store.size(); ++i) {
            if (!store.entry(i).trainable) continue;
            auto it = ckpt.adam_moments.find(store.entry(i).name);
            if (it == ckpt.adam_moments.end()) continue;
            opt->moment1()[static_cast<std::size_t>(i)] = it->second.first;
            opt->moment2()[static_cast<std::size_t>(i)] = it->second.second;
        }
    }
}

} // namespace p2c
