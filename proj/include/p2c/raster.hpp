#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace p2c {

// Single-channel binary raster (road = 1, background = 0).
struct Raster {
    int h = 0, w = 0;
    std::vector<std::uint8_t> px;

    Raster() = default;
    Raster(int height, int width, std::uint8_t fill = 0)
        : h(height), w(width), px(static_cast<std::size_t>(height) * width, fill) {}

    std::uint8_t& at(int y, int x) { return px[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
    bool in_bounds(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : px) n += v ? 1 : 0;
        return n;
    }

    bool is_binary() const {
        for (auto v : px) if (v > 1) return false;
        return true;
    }

    bool operator==(const Raster& o) const { return h == o.h && w == o.w && px == o.px; }
};

// partial ∧ ¬complete must be empty
inline bool is_subset_of(const Raster& partial, const Raster& complete) {
    if (partial.h != complete.h || partial.w != complete.w) return false;
    for (std::size_t i = 0; i < partial.px.size(); ++i)
        if (partial.px[i] && !complete.px[i]) return false;
    return true;
}

} // namespace p2c
