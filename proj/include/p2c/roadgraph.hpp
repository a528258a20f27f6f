#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "p2c/raster.hpp"
#include "p2c/rng.hpp"

namespace p2c {

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RoadGraph {
    struct Node {
        int x = 0, y = 0;
    };
    // one edge = one road segment, the unit of erasure
    struct Edge {
        int a = -1, b = -1;
        std::vector<std::pair<int, int>> polyline; // (x, y), endpoints included
    };

    int h = 0, w = 0; // raster bounds the polylines live in
    std::vector<Node> nodes;
    std::vector<Edge> edges;
};

inline void validate_graph(const RoadGraph& g) {
    for (const auto& e : g.edges) {
        if (e.a < 0 || e.b < 0 || e.a >= static_cast<int>(g.nodes.size()) ||
            e.b >= static_cast<int>(g.nodes.size()))
            throw std::invalid_argument("road graph: edge references missing node");
        if (e.polyline.size() < 2)
            throw std::invalid_argument("road graph: polyline needs at least two points");
        bool moved = false;
        for (const auto& [x, y] : e.polyline) {
            if (x < 0 || y < 0 || x >= g.w || y >= g.h)
                throw std::invalid_argument("road graph: polyline point out of bounds");
            if (x != e.polyline.front().first || y != e.polyline.front().second) moved = true;
        }
        if (!moved) throw std::invalid_argument("road graph: zero-length edge");
    }
}

// 8-connected Bresenham; endpoints included
inline void draw_line(Raster& r, int x0, int y0, int x1, int y1) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        if (r.in_bounds(y0, x0)) r.at(y0, x0) = 1;
        if (x0 == x1 && y0 == y1) break;
        int e2 = 2 * err;
        if (e2 >= dy) { err += dy; x0 += sx; }
        if (e2 <= dx) { err += dx; y0 += sy; }
    }
}

inline void rasterize_edge(Raster& r, const RoadGraph::Edge& e) {
    for (std::size_t i = 0; i + 1 < e.polyline.size(); ++i)
        draw_line(r, e.polyline[i].first, e.polyline[i].second, e.polyline[i + 1].first,
                  e.polyline[i + 1].second);
}

// 1-px-wide centerline raster of the whole graph
inline Raster rasterize(const RoadGraph& g, int h, int w) {
    Raster r(h, w);
    for (const auto& e : g.edges) rasterize_edge(r, e);
    return r;
}

inline Raster rasterize(const RoadGraph& g) { return rasterize(g, g.h, g.w); }

inline Raster rasterize_subset(const RoadGraph& g, const std::vector<int>& edge_ids) {
    Raster r(g.h, g.w);
    for (int id : edge_ids) rasterize_edge(r, g.edges[static_cast<std::size_t>(id)]);
    return r;
}

// ---- synthetic street-grid generator ----

struct RoadCountRange {
    int lo = 4, hi = 8;
};

// Gently-curved roads spanning the tile, grid-like mix of horizontal and
// vertical runs plus an occasional diagonal. Deterministic in the seed.
inline RoadGraph generate_synthetic_graph(std::uint64_t seed, int h, int w, RoadCountRange n_roads) {
    if (n_roads.lo > n_roads.hi || n_roads.hi <= 0)
        throw std::invalid_argument("generate_synthetic_graph: empty road-count range");
    if (h < 8 || w < 8)
        throw GenerationError("generate_synthetic_graph: raster too small to place a road (need >= 8x8)");

    Rng rng(seed);
    RoadGraph g;
    g.h = h;
    g.w = w;

    int count = n_roads.lo + static_cast<int>(rng.uniform_int(
                                 static_cast<std::uint64_t>(n_roads.hi - n_roads.lo + 1)));
    const int margin = 2;
    auto clampi = [](int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); };

    for (int i = 0; i < count; ++i) {
        double kind = rng.uniform();
        bool vertical = kind < 0.45;
        bool diagonal = kind >= 0.9;
        std::vector<std::pair<int, int>> pts;
        int waypoints = 2 + static_cast<int>(rng.uniform_int(3)); // interior bends
        if (diagonal) {
            bool rising = rng.bernoulli(0.5);
            pts.emplace_back(margin, rising ? h - 1 - margin : margin);
            pts.emplace_back(w - 1 - margin, rising ? margin : h - 1 - margin);
        } else if (vertical) {
            int x = margin + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - 2 * margin)));
            int jitter = std::max(1, w / 10);
            pts.emplace_back(x, margin);
            for (int k = 1; k <= waypoints; ++k) {
                int y = margin + k * (h - 2 * margin) / (waypoints + 1);
                int xx = clampi(x + static_cast<int>(rng.uniform(-jitter, jitter + 1)), margin, w - 1 - margin);
                pts.emplace_back(xx, y);
            }
            pts.emplace_back(clampi(x + static_cast<int>(rng.uniform(-jitter, jitter + 1)), margin, w - 1 - margin),
                             h - 1 - margin);
        } else {
            int y = margin + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - 2 * margin)));
            int jitter = std::max(1, h / 10);
            pts.emplace_back(margin, y);
            for (int k = 1; k <= waypoints; ++k) {
                int x = margin + k * (w - 2 * margin) / (waypoints + 1);
                int yy = clampi(y + static_cast<int>(rng.uniform(-jitter, jitter + 1)), margin, h - 1 - margin);
                pts.emplace_back(x, yy);
            }
            pts.emplace_back(w - 1 - margin,
                             clampi(y + static_cast<int>(rng.uniform(-jitter, jitter + 1)), margin, h - 1 - margin));
        }
        // drop consecutive duplicates (possible at tiny sizes)
        std::vector<std::pair<int, int>> cleaned;
        for (const auto& p : pts)
            if (cleaned.empty() || cleaned.back() != p) cleaned.push_back(p);
        if (cleaned.size() < 2) continue;

        RoadGraph::Edge e;
        e.a = static_cast<int>(g.nodes.size());
        g.nodes.push_back({cleaned.front().first, cleaned.front().second});
        e.b = static_cast<int>(g.nodes.size());
        g.nodes.push_back({cleaned.back().first, cleaned.back().second});
        e.polyline = std::move(cleaned);
        g.edges.push_back(std::move(e));
    }
    if (g.edges.empty())
        throw GenerationError("generate_synthetic_graph: no road could be placed");
    validate_graph(g);
    return g;
}

// ---- completeness-ratio erasure ----

struct ErasureResult {
    Raster partial;
    std::vector<int> erased_ids; // indices into graph.edges, in erasure order
    double ratio = 0;            // remaining road pixels / complete road pixels
};

// Drop whole road segments uniformly at random while the remaining rasterized
// pixel ratio is still >= alpha. alpha = 0 clears the map entirely.
inline ErasureResult erase_to_ratio(const RoadGraph& g, double alpha, std::uint64_t seed) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("erase_to_ratio: alpha must be in [0,1]");
    ErasureResult res;
    Raster full = rasterize(g);
    std::size_t total = full.count();
    if (alpha == 0.0 || total == 0) {
        res.partial = Raster(g.h, g.w);
        res.erased_ids.resize(g.edges.size());
        for (std::size_t i = 0; i < g.edges.size(); ++i) res.erased_ids[i] = static_cast<int>(i);
        if (total == 0) res.erased_ids.clear();
        res.ratio = 0.0;
        return res;
    }

    Rng rng(seed);
    std::vector<int> remaining(g.edges.size());
    for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = static_cast<int>(i);
    Raster partial = full;
    double ratio = 1.0;
    while (ratio >= alpha && !remaining.empty()) {
        std::size_t pick = rng.uniform_int(remaining.size());
        res.erased_ids.push_back(remaining[pick]);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
        partial = rasterize_subset(g, remaining);
        ratio = static_cast<double>(partial.count()) / static_cast<double>(total);
    }
    res.partial = std::move(partial);
    res.ratio = ratio;
    return res;
}

// ---- line-oriented text serialization ----
// one edge per line: "edge <id> <x0>,<y0> <x1>,<y1> ..."

inline void write_graph(std::ostream& os, const RoadGraph& g) {
    os << "size " << g.w << " " << g.h << "\n";
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
        os << "edge " << i;
        for (const auto& [x, y] : g.edges[i].polyline) os << " " << x << "," << y;
        os << "\n";
    }
}

inline void save_graph(const std::string& path, const RoadGraph& g) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    write_graph(f, g);
}

inline RoadGraph parse_graph(std::istream& is) {
    RoadGraph g;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "size") {
            ss >> g.w >> g.h;
        } else if (tag == "edge") {
            std::string id;
            ss >> id;
            RoadGraph::Edge e;
            std::string pt;
            while (ss >> pt) {
                auto comma = pt.find(',');
                if (comma == std::string::npos)
                    throw std::runtime_error("graph parse: bad point '" + pt + "'");
                e.polyline.emplace_back(std::stoi(pt.substr(0, comma)), std::stoi(pt.substr(comma + 1)));
            }
            if (e.polyline.size() < 2) throw std::runtime_error("graph parse: edge with < 2 points");
            e.a = static_cast<int>(g.nodes.size());
            g.nodes.push_back({e.polyline.front().first, e.polyline.front().second});
            e.b = static_cast<int>(g.nodes.size());
            g.nodes.push_back({e.polyline.back().first, e.polyline.back().second});
            g.edges.push_back(std::move(e));
        } else {
            throw std::runtime_error("graph parse: unknown tag '" + tag + "'");
        }
    }
    if (g.w == 0 || g.h == 0) {
        // legacy files without a size line: derive a bound from the points
        for (const auto& e : g.edges)
            for (const auto& [x, y] : e.polyline) {
                g.w = std::max(g.w, x + 1);
                g.h = std::max(g.h, y + 1);
            }
    }
    validate_graph(g);
    return g;
}

inline RoadGraph load_graph(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open graph file: " + path);
    return parse_graph(f);
}

} // namespace p2c
