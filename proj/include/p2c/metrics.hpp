#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "p2c/raster.hpp"
#include "p2c/rng.hpp"

namespace p2c {

// ---- confusion-matrix metrics ----

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp; fp += o.fp; fn += o.fn; tn += o.tn;
        return *this;
    }
};

inline ConfusionCounts confusion(const Raster& pred, const Raster& truth) {
    if (pred.h != truth.h || pred.w != truth.w)
        throw std::invalid_argument("confusion: shape mismatch");
    if (!pred.is_binary() || !truth.is_binary())
        throw std::invalid_argument("confusion: inputs must be binary");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.px.size(); ++i) {
        if (truth.px[i]) { pred.px[i] ? ++c.tp : ++c.fn; }
        else             { pred.px[i] ? ++c.fp : ++c.tn; }
    }
    return c;
}

struct SegMetrics {
    double precision = 0, recall = 0, f1 = 0, iou = 0, iou_b = 0, miou = 0;
    bool had_zero_denominator = false; // 0/0 cases resolved to 1, flagged here
};

inline SegMetrics segmentation_metrics(const ConfusionCounts& c) {
    SegMetrics m;
    auto ratio = [&m](std::uint64_t num, std::uint64_t den) {
        if (den == 0) { m.had_zero_denominator = true; return 1.0; } // perfect-empty convention
        return static_cast<double>(num) / static_cast<double>(den);
    };
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.recall = ratio(c.tp, c.tp + c.fn);
    m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    m.iou = ratio(c.tp, c.tp + c.fp + c.fn);
    m.iou_b = ratio(c.tn, c.tn + c.fp + c.fn);
    m.miou = 0.5 * (m.iou + m.iou_b);
    return m;
}

// ---- skeletonization (Zhang-Suen thinning) ----

inline Raster skeletonize(const Raster& input) {
    if (!input.is_binary()) throw std::invalid_argument("skeletonize: input must be binary");
    Raster img = input;
    const int h = img.h, w = img.w;
    auto p = [&](int y, int x) -> int { return img.in_bounds(y, x) ? img.at(y, x) : 0; };

    std::vector<std::pair<int, int>> to_clear;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            to_clear.clear();
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    if (!img.at(y, x)) continue;
                    // clockwise neighbors from north
                    int p2 = p(y - 1, x), p3 = p(y - 1, x + 1), p4 = p(y, x + 1),
                        p5 = p(y + 1, x + 1), p6 = p(y + 1, x), p7 = p(y + 1, x - 1),
                        p8 = p(y, x - 1), p9 = p(y - 1, x - 1);
                    int b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9;
                    if (b < 2 || b > 6) continue;
                    int seq[9] = {p2, p3, p4, p5, p6, p7, p8, p9, p2};
                    int a = 0;
                    for (int i = 0; i < 8; ++i) a += (seq[i] == 0 && seq[i + 1] == 1);
                    if (a != 1) continue;
                    if (pass == 0) {
                        if (p2 * p4 * p6 != 0 || p4 * p6 * p8 != 0) continue;
                    } else {
                        if (p2 * p4 * p8 != 0 || p2 * p6 * p8 != 0) continue;
                    }
                    to_clear.emplace_back(y, x);
                }
            }
            if (!to_clear.empty()) changed = true;
            for (auto [y, x] : to_clear) img.at(y, x) = 0;
        }
    }
    return img;
}

// ---- skeleton -> graph ----

struct GraphNode {
    double x = 0, y = 0;
};

struct GraphEdge {
    int a = -1, b = -1;
    double length = 0;
    std::vector<std::pair<int, int>> polyline; // (x, y) pixel trail
};

// Junctions and endpoints as nodes, degree-2 chains collapsed into edges.
struct ExtractedGraph {
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;

    bool empty() const { return nodes.empty(); }
};

namespace detail {
inline constexpr int kNeighborDx[8] = {0, 1, 1, 1, 0, -1, -1, -1};
inline constexpr int kNeighborDy[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
inline double step_len(int dir) { return (dir % 2 == 0) ? 1.0 : std::sqrt(2.0); }
} // namespace detail

inline ExtractedGraph skeleton_to_graph(const Raster& skel) {
    if (!skel.is_binary()) throw std::invalid_argument("skeleton_to_graph: input must be binary");
    const int h = skel.h, w = skel.w;
    auto idx = [w](int y, int x) { return static_cast<std::size_t>(y) * w + x; };

    // a diagonal hop is redundant when a shared axial pixel already connects
    // the two (T and X junctions otherwise explode into spurious nodes)
    auto connected = [&skel](int y, int x, int k) -> bool {
        int ny = y + detail::kNeighborDy[k], nx = x + detail::kNeighborDx[k];
        if (!skel.in_bounds(ny, nx) || !skel.at(ny, nx)) return false;
        if (k % 2 == 0) return true;
        return !skel.at(y, nx) && !skel.at(ny, x);
    };

    std::vector<std::uint8_t> degree(static_cast<std::size_t>(h) * w, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!skel.at(y, x)) continue;
            int d = 0;
            for (int k = 0; k < 8; ++k)
                if (connected(y, x, k)) ++d;
            degree[idx(y, x)] = static_cast<std::uint8_t>(d);
        }

    ExtractedGraph g;
    std::vector<int> node_at(static_cast<std::size_t>(h) * w, -1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (skel.at(y, x) && degree[idx(y, x)] != 2) {
                node_at[idx(y, x)] = static_cast<int>(g.nodes.size());
                g.nodes.push_back({static_cast<double>(x), static_cast<double>(y)});
            }

    // visited flags for pixel-to-pixel hops (one per direction slot)
    std::vector<std::uint8_t> used(static_cast<std::size_t>(h) * w * 8, 0);
    auto mark = [&](int y, int x, int k) {
        used[idx(y, x) * 8 + k] = 1;
        int ny = y + detail::kNeighborDy[k], nx = x + detail::kNeighborDx[k];
        used[idx(ny, nx) * 8 + ((k + 4) % 8)] = 1;
    };
    auto hop_used = [&](int y, int x, int k) { return used[idx(y, x) * 8 + k] != 0; };

    auto trace = [&](int sy, int sx, int k0) {
        GraphEdge e;
        e.a = node_at[idx(sy, sx)];
        e.polyline.emplace_back(sx, sy);
        int y = sy, x = sx, k = k0;
        for (;;) {
            mark(y, x, k);
            e.length += detail::step_len(k);
            y += detail::kNeighborDy[k];
            x += detail::kNeighborDx[k];
            e.polyline.emplace_back(x, y);
            if (node_at[idx(y, x)] >= 0) {
                e.b = node_at[idx(y, x)];
                break;
            }
            int next = -1;
            for (int kk = 0; kk < 8; ++kk) {
                if (!connected(y, x, kk)) continue;
                if (hop_used(y, x, kk)) continue;
                next = kk;
                break;
            }
            if (next < 0) { // dead end mid-trace cannot happen on consistent degrees
                e.b = e.a;
                break;
            }
            k = next;
        }
        return e;
    };

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (node_at[idx(y, x)] < 0) continue;
            for (int k = 0; k < 8; ++k) {
                if (!connected(y, x, k)) continue;
                if (hop_used(y, x, k)) continue;
                g.edges.push_back(trace(y, x, k));
            }
        }

    // isolated cycles: every pixel degree 2, no incident node
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!skel.at(y, x) || degree[idx(y, x)] != 2 || node_at[idx(y, x)] >= 0) continue;
            bool touched = false;
            for (int k = 0; k < 8 && !touched; ++k) touched = hop_used(y, x, k);
            if (touched) continue;
            node_at[idx(y, x)] = static_cast<int>(g.nodes.size());
            g.nodes.push_back({static_cast<double>(x), static_cast<double>(y)});
            for (int k = 0; k < 8; ++k) {
                if (!connected(y, x, k)) continue;
                if (hop_used(y, x, k)) continue;
                g.edges.push_back(trace(y, x, k));
                break; // the cycle is one closed walk
            }
        }

    return g;
}

// convenience: raster -> thinned -> graph
inline ExtractedGraph raster_to_graph(const Raster& map) {
    return skeleton_to_graph(skeletonize(map));
}

// ---- shortest paths ----

inline std::vector<double> dijkstra(const ExtractedGraph& g, int source) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(g.nodes.size(), inf);
    std::vector<std::vector<std::pair<int, double>>> adj(g.nodes.size());
    for (const auto& e : g.edges) {
        adj[static_cast<std::size_t>(e.a)].emplace_back(e.b, e.length);
        adj[static_cast<std::size_t>(e.b)].emplace_back(e.a, e.length);
    }
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    dist[static_cast<std::size_t>(source)] = 0;
    pq.emplace(0.0, source);
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[static_cast<std::size_t>(u)]) continue;
        for (auto [v, len] : adj[static_cast<std::size_t>(u)]) {
            double nd = d + len;
            if (nd < dist[static_cast<std::size_t>(v)]) {
                dist[static_cast<std::size_t>(v)] = nd;
                pq.emplace(nd, v);
            }
        }
    }
    return dist;
}

// ---- APLS ----

struct AplsConfig {
    double snap_radius = 4.0;
    std::size_t max_pairs = 500;
    std::uint64_t seed = 17;
};

namespace detail {

inline int snap_node(const GraphNode& n, const ExtractedGraph& target, double radius) {
    int best = -1;
    double best_d2 = radius * radius;
    for (std::size_t i = 0; i < target.nodes.size(); ++i) {
        double dx = target.nodes[i].x - n.x, dy = target.nodes[i].y - n.y;
        double d2 = dx * dx + dy * dy;
        if (d2 <= best_d2) { best_d2 = d2; best = static_cast<int>(i); }
    }
    return best;
}

// One direction: pairs sampled in `src`, compared against `dst`.
// Pair cost:
//   src path finite,  dst path finite            -> min(1, |Ls - Ld| / Ls)
//   src path finite,  unsnapped or dst missing   -> 1
//   src path missing, dst path finite            -> 1   (dst connects what src does not)
//   src path missing, dst also missing/unsnapped -> 0   (agreement)
inline double apls_directional_impl(const ExtractedGraph& src, const ExtractedGraph& dst,
                                    const AplsConfig& cfg) {
    std::size_t n = src.nodes.size();
    if (n < 2) return 1.0; // no pairs to test
    std::vector<int> snapped(n);
    for (std::size_t i = 0; i < n; ++i) snapped[i] = snap_node(src.nodes[i], dst, cfg.snap_radius);

    std::size_t total_pairs = n * (n - 1) / 2;
    std::vector<std::pair<int, int>> pairs;
    if (total_pairs <= cfg.max_pairs) {
        pairs.reserve(total_pairs);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
    } else {
        Rng rng(cfg.seed);
        std::vector<std::uint64_t> keys;
        while (pairs.size() < cfg.max_pairs) {
            std::uint64_t i = rng.uniform_int(n), j = rng.uniform_int(n);
            if (i == j) continue;
            if (i > j) std::swap(i, j);
            std::uint64_t key = i * n + j;
            if (std::find(keys.begin(), keys.end(), key) != keys.end()) continue;
            keys.push_back(key);
            pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
        }
    }

    // cache one Dijkstra per involved node
    std::vector<std::vector<double>> src_dist(n);
    std::vector<std::vector<double>> dst_dist(dst.nodes.size());
    auto src_d = [&](int from) -> std::vector<double>& {
        auto& v = src_dist[static_cast<std::size_t>(from)];
        if (v.empty()) v = dijkstra(src, from);
        return v;
    };
    auto dst_d = [&](int from) -> std::vector<double>& {
        auto& v = dst_dist[static_cast<std::size_t>(from)];
        if (v.empty()) v = dijkstra(dst, from);
        return v;
    };

    double cost_sum = 0;
    for (auto [i, j] : pairs) {
        double ls = src_d(i)[static_cast<std::size_t>(j)];
        bool src_ok = std::isfinite(ls) && ls > 0;
        int si = snapped[static_cast<std::size_t>(i)], sj = snapped[static_cast<std::size_t>(j)];
        double ld = std::numeric_limits<double>::infinity();
        if (si >= 0 && sj >= 0) ld = dst_d(si)[static_cast<std::size_t>(sj)];
        bool dst_ok = std::isfinite(ld);
        if (src_ok && dst_ok) cost_sum += std::min(1.0, std::fabs(ls - ld) / ls);
        else if (src_ok != dst_ok) cost_sum += 1.0;
        // both missing: agreement, cost 0
    }
    return 1.0 - cost_sum / static_cast<double>(pairs.size());
}

} // namespace detail

inline double apls_directional(const ExtractedGraph& truth, const ExtractedGraph& proposal,
                               const AplsConfig& cfg = {}) {
    if (truth.empty() && proposal.empty()) return 1.0;
    if (truth.empty() || proposal.empty()) return 0.0;
    return detail::apls_directional_impl(truth, proposal, cfg);
}

// symmetric score: mean of truth->proposal and proposal->truth directions
inline double apls(const ExtractedGraph& truth, const ExtractedGraph& proposal,
                   const AplsConfig& cfg = {}) {
    if (truth.empty() && proposal.empty()) return 1.0;
    if (truth.empty() || proposal.empty()) return 0.0;
    double a = detail::apls_directional_impl(truth, proposal, cfg);
    double b = detail::apls_directional_impl(proposal, truth, cfg);
    return 0.5 * (a + b);
}

inline double apls_rasters(const Raster& truth, const Raster& pred, const AplsConfig& cfg = {}) {
    return apls(raster_to_graph(truth), raster_to_graph(pred), cfg);
}

// ---- aggregate report ----

struct MetricsReport {
    double precision = 0, recall = 0, f1 = 0, iou = 0, iou_b = 0, miou = 0;
    double apls = 0;
    std::size_t n_images = 0;
    std::string config_hash;

    static MetricsReport from(const SegMetrics& s, double apls_score, std::size_t n) {
        MetricsReport r;
        r.precision = s.precision; r.recall = s.recall; r.f1 = s.f1;
        r.iou = s.iou; r.iou_b = s.iou_b; r.miou = s.miou;
        r.apls = apls_score;
        r.n_images = n;
        return r;
    }
};

} // namespace p2c
