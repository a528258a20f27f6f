#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "p2c/metrics.hpp"

using namespace p2c;

namespace {

Raster from_rows(const std::vector<std::string>& rows) {
    Raster r(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x) r.at(y, x) = rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] == '#' ? 1 : 0;
    return r;
}

// brute-force per-pixel oracle for the confusion counts
ConfusionCounts count_oracle(const Raster& pred, const Raster& truth) {
    ConfusionCounts c;
    for (int y = 0; y < pred.h; ++y)
        for (int x = 0; x < pred.w; ++x) {
            bool p = pred.at(y, x), t = truth.at(y, x);
            if (p && t) ++c.tp;
            else if (p && !t) ++c.fp;
            else if (!p && t) ++c.fn;
            else ++c.tn;
        }
    return c;
}

} // namespace

TEST_CASE("confusion basics") {
    Raster a(4, 4), b(4, 4);
    a.at(0, 0) = 1;
    b.at(0, 0) = 1;
    auto c = confusion(a, b);
    CHECK(c.tp == 1);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
    CHECK(c.tn == 15);

    auto self = confusion(b, b);
    CHECK(self.fp == 0);
    CHECK(self.fn == 0);

    Raster zero(4, 4);
    auto miss = confusion(zero, b);
    CHECK(miss.tp == 0);
    CHECK(miss.fn == 1);

    Raster bad(4, 4);
    bad.px[3] = 7;
    CHECK_THROWS(confusion(bad, b));
    Raster small(3, 3);
    CHECK_THROWS(confusion(small, b));
}

TEST_CASE("segmentation metrics: hand-enumerated 10x10 grid") {
    // 10 true road px; pred hits 8 plus 2 background
    Raster truth(10, 10), pred(10, 10);
    for (int i = 0; i < 10; ++i) truth.at(0, i) = 1;
    for (int i = 0; i < 8; ++i) pred.at(0, i) = 1;
    pred.at(5, 5) = pred.at(6, 6) = 1;
    auto c = confusion(pred, truth);
    CHECK(c.tp == 8);
    CHECK(c.fp == 2);
    CHECK(c.fn == 2);
    CHECK(c.tn == 88);
    auto m = segmentation_metrics(c);
    CHECK(m.precision == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(m.recall == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(m.f1 == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(m.iou == doctest::Approx(8.0 / 12.0).epsilon(1e-9));
    CHECK(m.iou_b == doctest::Approx(88.0 / 92.0).epsilon(1e-9));
    CHECK(m.miou == doctest::Approx(0.5 * (8.0 / 12.0 + 88.0 / 92.0)).epsilon(1e-9));
}

TEST_CASE("segmentation metrics: brute-force oracle on random maps") {
    Rng rng(606);
    for (int trial = 0; trial < 200; ++trial) {
        Raster pred(16, 16), truth(16, 16);
        for (auto& v : pred.px) v = rng.bernoulli(0.3) ? 1 : 0;
        for (auto& v : truth.px) v = rng.bernoulli(0.3) ? 1 : 0;
        auto c = confusion(pred, truth);
        auto o = count_oracle(pred, truth);
        CHECK(c.tp == o.tp);
        CHECK(c.fp == o.fp);
        CHECK(c.fn == o.fn);
        CHECK(c.tn == o.tn);
        auto m = segmentation_metrics(c);
        // identities where denominators are nonzero
        if (m.precision + m.recall > 0)
            CHECK(m.f1 == doctest::Approx(2 * m.precision * m.recall / (m.precision + m.recall)).epsilon(1e-9));
        CHECK(m.f1 == doctest::Approx(2 * m.iou / (1 + m.iou)).epsilon(1e-9));
        CHECK(m.miou == doctest::Approx(0.5 * (m.iou + m.iou_b)).epsilon(1e-15));
    }
}

TEST_CASE("reference precision/recall pair reproduces F1") {
    double p = 0.8424, r = 0.8150;
    double f1 = 2 * p * r / (p + r);
    CHECK(std::fabs(f1 - 0.8285) < 5e-4);
    double iou = 0.7071;
    CHECK(std::fabs(2 * iou / (1 + iou) - 0.8285) < 5e-4);
}

TEST_CASE("zero-denominator convention") {
    auto m = segmentation_metrics(ConfusionCounts{0, 0, 0, 16});
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.iou == 1.0);
    CHECK(m.had_zero_denominator);
}

TEST_CASE("skeletonize: idempotent on thin input, thins a bar, keeps empty") {
    Raster line(7, 10);
    for (int x = 1; x < 9; ++x) line.at(3, x) = 1;
    CHECK(skeletonize(line) == line);

    // 3-px-wide bar thins to a single-px line on the middle row
    Raster bar(7, 12);
    for (int y = 2; y <= 4; ++y)
        for (int x = 1; x < 11; ++x) bar.at(y, x) = 1;
    Raster thin = skeletonize(bar);
    CHECK(thin.count() > 0);
    for (int x = 0; x < 12; ++x) {
        int col = 0;
        for (int y = 0; y < 7; ++y) col += thin.at(y, x);
        CHECK(col <= 1);
        if (col == 1) CHECK(thin.at(3, x) == 1); // middle row
    }

    Raster empty(5, 5);
    CHECK(skeletonize(empty) == empty);
}

TEST_CASE("skeleton_to_graph: line, cross, cycle, empty") {
    SUBCASE("straight 10-px line: 2 nodes, 1 edge, length 9") {
        Raster line(5, 12);
        for (int x = 1; x <= 10; ++x) line.at(2, x) = 1;
        auto g = skeleton_to_graph(line);
        CHECK(g.nodes.size() == 2);
        CHECK(g.edges.size() == 1);
        CHECK(g.edges[0].length == doctest::Approx(9.0).epsilon(1e-12));
    }
    SUBCASE("plus sign: 5 nodes, 4 edges") {
        Raster plus(9, 9);
        for (int i = 1; i <= 7; ++i) { plus.at(4, i) = 1; plus.at(i, 4) = 1; }
        auto g = skeleton_to_graph(plus);
        CHECK(g.nodes.size() == 5);
        CHECK(g.edges.size() == 4);
        for (const auto& e : g.edges) CHECK(e.length == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("diagonal counts sqrt(2) steps") {
        Raster diag(6, 6);
        for (int i = 1; i <= 4; ++i) diag.at(i, i) = 1;
        auto g = skeleton_to_graph(diag);
        CHECK(g.edges.size() == 1);
        CHECK(g.edges[0].length == doctest::Approx(3 * std::sqrt(2.0)).epsilon(1e-12));
    }
    SUBCASE("isolated cycle gets one node and a closed walk") {
        // diamond ring: all pixels degree 2 under 8-connectivity
        Raster ring(6, 6);
        ring.at(1, 2) = ring.at(2, 1) = ring.at(2, 3) = ring.at(3, 2) = 1;
        auto g = skeleton_to_graph(ring);
        CHECK(g.nodes.size() == 1);
        CHECK(g.edges.size() == 1);
        CHECK(g.edges[0].a == g.edges[0].b);
        CHECK(g.edges[0].length == doctest::Approx(4 * std::sqrt(2.0)).epsilon(1e-12));
    }
    SUBCASE("empty raster: empty graph") {
        auto g = skeleton_to_graph(Raster(4, 4));
        CHECK(g.nodes.empty());
        CHECK(g.edges.empty());
    }
}

namespace {
ExtractedGraph two_node_graph(double length) {
    ExtractedGraph g;
    g.nodes.push_back({0, 0});
    g.nodes.push_back({10, 0});
    g.edges.push_back({0, 1, length, {}});
    return g;
}
} // namespace

TEST_CASE("apls: identity, empty, hand-computed two-node case") {
    auto truth = two_node_graph(10);
    CHECK(apls(truth, truth) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(apls_directional(truth, truth) == doctest::Approx(1.0).epsilon(1e-12));

    ExtractedGraph empty;
    CHECK(apls(truth, empty) == 0.0);
    CHECK(apls(empty, truth) == 0.0);
    CHECK(apls(empty, empty) == 1.0);

    // truth path 10, proposal path 15: directional cost min(1, 5/10) = 0.5
    auto prop = two_node_graph(15);
    CHECK(apls_directional(truth, prop) == doctest::Approx(0.5).epsilon(1e-12));
    // reverse direction normalizes by the proposal length (cost 1/3)
    CHECK(apls_directional(prop, truth) == doctest::Approx(1.0 - 5.0 / 15.0).epsilon(1e-12));
    CHECK(apls(truth, prop) == doctest::Approx(0.5 * (0.5 + 2.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("apls: snapping and missing paths") {
    auto truth = two_node_graph(10);
    // proposal nodes too far to snap -> every truth pair costs 1
    ExtractedGraph far;
    far.nodes.push_back({100, 100});
    far.nodes.push_back({110, 100});
    far.edges.push_back({0, 1, 10, {}});
    AplsConfig cfg;
    cfg.snap_radius = 4;
    CHECK(apls_directional(truth, far, cfg) == doctest::Approx(0.0).epsilon(1e-12));

    // proposal with both nodes snapped but no connecting path
    ExtractedGraph split;
    split.nodes.push_back({0, 0});
    split.nodes.push_back({10, 0});
    CHECK(apls_directional(truth, split, cfg) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("apls on rasters matches direct pipeline") {
    Raster truth(16, 16), pred(16, 16);
    for (int x = 2; x <= 13; ++x) { truth.at(8, x) = 1; pred.at(8, x) = 1; }
    CHECK(apls_rasters(truth, pred) == doctest::Approx(1.0).epsilon(1e-12));
    Raster empty(16, 16);
    CHECK(apls_rasters(truth, empty) == 0.0);
}

TEST_CASE("dijkstra shortest paths") {
    ExtractedGraph g;
    for (int i = 0; i < 4; ++i) g.nodes.push_back({static_cast<double>(i), 0});
    g.edges.push_back({0, 1, 1, {}});
    g.edges.push_back({1, 2, 2, {}});
    g.edges.push_back({0, 2, 5, {}});
    auto d = dijkstra(g, 0);
    CHECK(d[1] == doctest::Approx(1));
    CHECK(d[2] == doctest::Approx(3)); // via node 1, not the direct 5
    CHECK(std::isinf(d[3]));
}
