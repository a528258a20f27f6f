#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2c/png_io.hpp"
#include "p2c/raster.hpp"
#include "p2c/rng.hpp"
#include "p2c/roadgraph.hpp"
#include "p2c/tensor.hpp"

namespace p2c {

// satellite image 3xHxW in [0,1] + partial/complete centerline maps
struct SampleTriple {
    Tensor<float> satellite; // (3,H,W)
    Raster partial;
    Raster complete;
    double alpha = 0;
    std::string id;
};

enum class DatasetMode { A0, A25, A50, A75, Mix };

inline DatasetMode dataset_mode_from_string(const std::string& s) {
    if (s == "0" || s == "0%") return DatasetMode::A0;
    if (s == "0.25" || s == "25%") return DatasetMode::A25;
    if (s == "0.5" || s == "50%") return DatasetMode::A50;
    if (s == "0.75" || s == "75%") return DatasetMode::A75;
    if (s == "mix") return DatasetMode::Mix;
    throw std::invalid_argument("unknown dataset mode: " + s + " (expected 0|0.25|0.5|0.75|mix)");
}

inline std::string to_string(DatasetMode m) {
    switch (m) {
        case DatasetMode::A0: return "0";
        case DatasetMode::A25: return "0.25";
        case DatasetMode::A50: return "0.5";
        case DatasetMode::A75: return "0.75";
        case DatasetMode::Mix: return "mix";
    }
    return "?";
}

// ---- synthetic satellite rendering ----

namespace detail {

// two-octave value noise lattice, smoothstep interpolated
inline std::vector<float> value_noise(int h, int w, Rng& rng, int cell) {
    int gh = h / cell + 2, gw = w / cell + 2;
    std::vector<float> lattice(static_cast<std::size_t>(gh) * gw);
    for (auto& v : lattice) v = static_cast<float>(rng.uniform());
    std::vector<float> out(static_cast<std::size_t>(h) * w);
    auto smooth = [](float t) { return t * t * (3.f - 2.f * t); };
    for (int y = 0; y < h; ++y) {
        int cy = y / cell;
        float ty = smooth(static_cast<float>(y % cell) / static_cast<float>(cell));
        for (int x = 0; x < w; ++x) {
            int cx = x / cell;
            float tx = smooth(static_cast<float>(x % cell) / static_cast<float>(cell));
            float v00 = lattice[static_cast<std::size_t>(cy) * gw + cx];
            float v01 = lattice[static_cast<std::size_t>(cy) * gw + cx + 1];
            float v10 = lattice[static_cast<std::size_t>(cy + 1) * gw + cx];
            float v11 = lattice[static_cast<std::size_t>(cy + 1) * gw + cx + 1];
            float top = v00 + (v01 - v00) * tx;
            float bot = v10 + (v11 - v10) * tx;
            out[static_cast<std::size_t>(y) * w + x] = top + (bot - top) * ty;
        }
    }
    return out;
}

// shaded stroke: brightest on the centerline, falling toward the stripe edge;
// max-combine keeps crossings consistent
inline void stamp_disc(std::vector<float>& buf, int h, int w, int cx, int cy, int radius, float v) {
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dx * dx + dy * dy > radius * radius) continue;
            int y = cy + dy, x = cx + dx;
            if (y < 0 || y >= h || x < 0 || x >= w) continue;
            float d = std::sqrt(static_cast<float>(dx * dx + dy * dy));
            float shade = v * (1.0f - 0.35f * d / static_cast<float>(std::max(1, radius)));
            std::size_t i = static_cast<std::size_t>(y) * w + x;
            buf[i] = std::max(buf[i], shade);
        }
}

} // namespace detail

struct RenderConfig {
    float noise_sigma = 0.05f; // additive gaussian noise on the final channels
    int road_width_min = 3;
    int road_width_max = 5;
};

// Roads drawn wide and bright over a textured background so their appearance
// correlates with the complete map without being trivially thresholdable.
inline Tensor<float> render_satellite(const RoadGraph& g, Rng& rng, const RenderConfig& cfg = {}) {
    int h = g.h, w = g.w;
    auto coarse = detail::value_noise(h, w, rng, std::max(4, h / 4));
    auto fine = detail::value_noise(h, w, rng, 4);
    std::vector<float> base(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < base.size(); ++i)
        base[i] = 0.15f + 0.40f * (0.7f * coarse[i] + 0.3f * fine[i]);

    for (const auto& e : g.edges) {
        int width = cfg.road_width_min +
                    static_cast<int>(rng.uniform_int(
                        static_cast<std::uint64_t>(cfg.road_width_max - cfg.road_width_min + 1)));
        float intensity = static_cast<float>(rng.uniform(0.62, 0.85));
        Raster line(h, w);
        rasterize_edge(line, e);
        int radius = width / 2;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (line.at(y, x)) detail::stamp_disc(base, h, w, x, y, radius, intensity);
    }

    Tensor<float> sat({3, h, w});
    const float tint[3] = {1.0f, 0.97f, 0.93f};
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                float v = base[static_cast<std::size_t>(y) * w + x] * tint[c] +
                          static_cast<float>(rng.normal(0.0, cfg.noise_sigma));
                sat[(static_cast<std::size_t>(c) * h + y) * w + x] = std::clamp(v, 0.0f, 1.0f);
            }
    return sat;
}

// ---- dataset assembly ----

inline SampleTriple make_sample(const RoadGraph& g, double alpha, std::uint64_t seed,
                                const std::string& id, const RenderConfig& rc = {}) {
    SampleTriple s;
    Rng rng(seed);
    s.complete = rasterize(g);
    if (alpha == 0.0) {
        s.partial = Raster(g.h, g.w);
    } else {
        s.partial = erase_to_ratio(g, alpha, rng.next_u64()).partial;
    }
    Rng render_rng = rng.fork(1);
    s.satellite = render_satellite(g, render_rng, rc);
    s.alpha = alpha;
    s.id = id;
    return s;
}

inline std::vector<SampleTriple> make_dataset(const std::vector<RoadGraph>& graphs, DatasetMode mode,
                                              std::uint64_t seed, const RenderConfig& rc = {}) {
    if (graphs.empty()) throw std::invalid_argument("make_dataset: no graphs");
    Rng rng(seed);
    const double mix_alphas[3] = {0.25, 0.50, 0.75};
    std::vector<SampleTriple> out;
    out.reserve(graphs.size());
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        double alpha = 0;
        switch (mode) {
            case DatasetMode::A0: alpha = 0.0; break;
            case DatasetMode::A25: alpha = 0.25; break;
            case DatasetMode::A50: alpha = 0.50; break;
            case DatasetMode::A75: alpha = 0.75; break;
            case DatasetMode::Mix: alpha = mix_alphas[rng.uniform_int(3)]; break;
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "synt_%06zu", i);
        out.push_back(make_sample(graphs[i], alpha, rng.next_u64(), buf, rc));
    }
    return out;
}

// ---- augmentation ----
// geometric transforms hit all three layers, photometric ones only the image

inline void hflip_sample(SampleTriple& s) {
    int h = s.complete.h, w = s.complete.w;
    for (auto* r : {&s.partial, &s.complete})
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w / 2; ++x) std::swap(r->at(y, x), r->at(y, w - 1 - x));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w / 2; ++x)
                std::swap(s.satellite[(static_cast<std::size_t>(c) * h + y) * w + x],
                          s.satellite[(static_cast<std::size_t>(c) * h + y) * w + (w - 1 - x)]);
}

inline void shift_sample(SampleTriple& s, int dx, int dy) {
    int h = s.complete.h, w = s.complete.w;
    auto shift_raster = [&](Raster& r) {
        Raster out(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int sy = y - dy, sx = x - dx;
                if (sy >= 0 && sy < h && sx >= 0 && sx < w) out.at(y, x) = r.at(sy, sx);
            }
        r = std::move(out);
    };
    shift_raster(s.partial);
    shift_raster(s.complete);
    Tensor<float> out({3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int sy = y - dy, sx = x - dx;
                out[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    (sy >= 0 && sy < h && sx >= 0 && sx < w)
                        ? s.satellite[(static_cast<std::size_t>(c) * h + sy) * w + sx]
                        : 0.0f;
            }
    s.satellite = std::move(out);
}

struct AugmentConfig {
    double flip_prob = 0.5;
    int max_shift = 4;
    double noise_sigma = 0.02;
    double max_brightness = 0.1;
};

inline SampleTriple augment(const SampleTriple& sample, std::uint64_t seed,
                            const AugmentConfig& cfg = {}) {
    SampleTriple s = sample;
    Rng rng(seed);
    if (rng.bernoulli(cfg.flip_prob)) hflip_sample(s);
    int dx = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(2 * cfg.max_shift + 1))) - cfg.max_shift;
    int dy = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(2 * cfg.max_shift + 1))) - cfg.max_shift;
    if (dx != 0 || dy != 0) shift_sample(s, dx, dy);
    float bright = static_cast<float>(rng.uniform(-cfg.max_brightness, cfg.max_brightness));
    for (auto& v : s.satellite.vec())
        v = std::clamp(v + bright + static_cast<float>(rng.normal(0.0, cfg.noise_sigma)), 0.0f, 1.0f);
    return s;
}

// ---- disk layout ----
// <root>/{sat,partial,complete}/<id>.png (+ graphs/<id>.txt for synthetic data)

inline Raster raster_from_gray(const Image8& img) {
    Raster r(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) r.at(y, x) = img.at(y, x) >= 128 ? 1 : 0; // midpoint binarization
    return r;
}

inline Image8 gray_from_raster(const Raster& r) {
    Image8 img;
    img.h = r.h; img.w = r.w; img.channels = 1;
    img.px.resize(r.px.size());
    for (std::size_t i = 0; i < r.px.size(); ++i) img.px[i] = r.px[i] ? 255 : 0;
    return img;
}

inline Image8 rgb_from_tensor(const Tensor<float>& sat) {
    int h = sat.dim(1), w = sat.dim(2);
    Image8 img;
    img.h = h; img.w = w; img.channels = 3;
    img.px.resize(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = sat[(static_cast<std::size_t>(c) * h + y) * w + x];
                img.px[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
            }
    return img;
}

inline Tensor<float> tensor_from_rgb(const Image8& img) {
    Tensor<float> t({3, img.h, img.w});
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                std::uint8_t v = img.channels == 1 ? img.at(y, x, 0) : img.at(y, x, c);
                t[(static_cast<std::size_t>(c) * img.h + y) * img.w + x] = static_cast<float>(v) / 255.0f;
            }
    return t;
}

inline void save_sample(const std::string& root, const SampleTriple& s) {
    namespace fs = std::filesystem;
    for (const char* sub : {"sat", "partial", "complete"}) fs::create_directories(fs::path(root) / sub);
    png_write((fs::path(root) / "sat" / (s.id + ".png")).string(), rgb_from_tensor(s.satellite));
    png_write((fs::path(root) / "partial" / (s.id + ".png")).string(), gray_from_raster(s.partial));
    png_write((fs::path(root) / "complete" / (s.id + ".png")).string(), gray_from_raster(s.complete));
}

struct LoadResult {
    std::vector<SampleTriple> samples;
    int skipped = 0;
};

// Triples matched by filename stem; incomplete triples are skipped with a
// warning, size mismatches are hard errors.
inline LoadResult load_tiles(const std::string& root, std::ostream& warn = std::cerr) {
    namespace fs = std::filesystem;
    LoadResult res;
    fs::path sat_dir = fs::path(root) / "sat";
    if (!fs::exists(sat_dir)) return res;

    std::vector<std::string> stems;
    for (const auto& de : fs::directory_iterator(sat_dir))
        if (de.path().extension() == ".png") stems.push_back(de.path().stem().string());
    std::sort(stems.begin(), stems.end());

    for (const auto& stem : stems) {
        fs::path sat_p = sat_dir / (stem + ".png");
        fs::path par_p = fs::path(root) / "partial" / (stem + ".png");
        fs::path com_p = fs::path(root) / "complete" / (stem + ".png");
        if (!fs::exists(par_p) || !fs::exists(com_p)) {
            warn << "load_tiles: skipping '" << stem << "' (missing counterpart file)\n";
            ++res.skipped;
            continue;
        }
        Image8 sat = png_read(sat_p.string());
        Image8 par = png_read(par_p.string());
        Image8 com = png_read(com_p.string());
        if (par.h != sat.h || par.w != sat.w)
            throw std::runtime_error("load_tiles: size mismatch for " + par_p.string());
        if (com.h != sat.h || com.w != sat.w)
            throw std::runtime_error("load_tiles: size mismatch for " + com_p.string());
        SampleTriple s;
        s.satellite = tensor_from_rgb(sat);
        s.partial = raster_from_gray(par);
        s.complete = raster_from_gray(com);
        s.id = stem;
        std::size_t total = s.complete.count();
        s.alpha = total ? static_cast<double>(s.partial.count()) / static_cast<double>(total) : 0.0;
        if (!is_subset_of(s.partial, s.complete))
            throw std::runtime_error("load_tiles: partial map is not a subset of the complete map for " +
                                     par_p.string());
        res.samples.push_back(std::move(s));
    }
    return res;
}

// graphs keyed by sample id, for alpha-override evaluation
inline std::map<std::string, RoadGraph> load_graph_map(const std::string& root) {
    namespace fs = std::filesystem;
    std::map<std::string, RoadGraph> graphs;
    fs::path dir = fs::path(root) / "graphs";
    if (!fs::exists(dir)) return graphs;
    for (const auto& de : fs::directory_iterator(dir))
        if (de.path().extension() == ".txt") graphs[de.path().stem().string()] = load_graph(de.path().string());
    return graphs;
}

} // namespace p2c
