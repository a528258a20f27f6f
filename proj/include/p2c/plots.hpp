#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2c/trainer.hpp"

namespace p2c {

// Minimal SVG line charts for the convergence curves.
namespace svgdetail {

struct Series {
    std::string label;
    std::string color;
    std::vector<double> values; // x = epoch index
};

inline std::string render_chart(const std::string& title, const std::string& y_label,
                                const std::vector<Series>& series) {
    const double W = 640, H = 400, ml = 64, mr = 20, mt = 36, mb = 48;
    const double pw = W - ml - mr, ph = H - mt - mb;

    std::size_t n = 0;
    double lo = 0, hi = 1e-9;
    for (const auto& s : series) {
        n = std::max(n, s.values.size());
        for (double v : s.values) { lo = std::min(lo, v); hi = std::max(hi, v); }
    }
    if (n == 0) throw std::invalid_argument("render_chart: no data");
    if (hi <= lo) hi = lo + 1;
    double x_max = n > 1 ? static_cast<double>(n - 1) : 1.0;

    auto px = [&](double e) { return ml + pw * (x_max > 0 ? e / x_max : 0.5); };
    auto py = [&](double v) { return mt + ph * (1.0 - (v - lo) / (hi - lo)); };

    std::string out;
    out += "<svg xmlns='http://www.w3.org/2000/svg' width='" + std::to_string(static_cast<int>(W)) +
           "' height='" + std::to_string(static_cast<int>(H)) + "'>\n";
    out += "<rect width='100%' height='100%' fill='white'/>\n";
    out += "<text x='" + std::to_string(W / 2) + "' y='20' text-anchor='middle' font-size='14'>" +
           title + "</text>\n";
    // axes
    out += "<line x1='" + std::to_string(ml) + "' y1='" + std::to_string(mt) + "' x2='" +
           std::to_string(ml) + "' y2='" + std::to_string(mt + ph) + "' stroke='black'/>\n";
    out += "<line x1='" + std::to_string(ml) + "' y1='" + std::to_string(mt + ph) + "' x2='" +
           std::to_string(ml + pw) + "' y2='" + std::to_string(mt + ph) + "' stroke='black'/>\n";
    // ticks
    for (int t = 0; t <= 4; ++t) {
        double v = lo + (hi - lo) * t / 4.0;
        double y = py(v);
        char lbl[32];
        std::snprintf(lbl, sizeof(lbl), "%.3g", v);
        out += "<line x1='" + std::to_string(ml - 4) + "' y1='" + std::to_string(y) + "' x2='" +
               std::to_string(ml) + "' y2='" + std::to_string(y) + "' stroke='black'/>\n";
        out += "<text x='" + std::to_string(ml - 8) + "' y='" + std::to_string(y + 4) +
               "' text-anchor='end' font-size='11'>" + lbl + "</text>\n";
        double e = x_max * t / 4.0;
        double x = px(e);
        std::snprintf(lbl, sizeof(lbl), "%d", static_cast<int>(std::lround(e)));
        out += "<line x1='" + std::to_string(x) + "' y1='" + std::to_string(mt + ph) + "' x2='" +
               std::to_string(x) + "' y2='" + std::to_string(mt + ph + 4) + "' stroke='black'/>\n";
        out += "<text x='" + std::to_string(x) + "' y='" + std::to_string(mt + ph + 18) +
               "' text-anchor='middle' font-size='11'>" + lbl + "</text>\n";
    }
    out += "<text x='" + std::to_string(ml + pw / 2) + "' y='" + std::to_string(H - 8) +
           "' text-anchor='middle' font-size='12'>epoch</text>\n";
    out += "<text x='16' y='" + std::to_string(mt + ph / 2) +
           "' text-anchor='middle' font-size='12' transform='rotate(-90 16 " +
           std::to_string(mt + ph / 2) + ")'>" + y_label + "</text>\n";

    double ly = mt + 14;
    for (const auto& s : series) {
        std::string pts;
        for (std::size_t i = 0; i < s.values.size(); ++i)
            pts += std::to_string(px(static_cast<double>(i))) + "," + std::to_string(py(s.values[i])) + " ";
        out += "<polyline fill='none' stroke='" + s.color + "' stroke-width='1.5' points='" + pts + "'/>\n";
        out += "<text x='" + std::to_string(ml + pw - 4) + "' y='" + std::to_string(ly) +
               "' text-anchor='end' font-size='11' fill='" + s.color + "'>" + s.label + "</text>\n";
        ly += 14;
    }
    out += "</svg>\n";
    return out;
}

} // namespace svgdetail

// Loss and IoU convergence curves: train/val total loss plus validation IoU.
inline std::vector<std::string> emit_plots(const RunRecord& rec, const std::string& out_dir) {
    if (rec.epochs.empty()) throw std::invalid_argument("emit_plots: empty run record");
    namespace fs = std::filesystem;
    fs::path dir = fs::path(out_dir) / "figures";
    fs::create_directories(dir);

    std::vector<double> train_loss, val_loss, val_iou;
    for (const auto& e : rec.epochs) {
        train_loss.push_back(e.train_total);
        val_loss.push_back(e.val_loss);
        val_iou.push_back(e.val.iou);
    }

    std::vector<std::string> written;
    {
        std::string svg = svgdetail::render_chart(
            "Training and validation loss", "loss",
            {{"train loss", "#1f77b4", train_loss}, {"val loss", "#d62728", val_loss}});
        fs::path p = dir / "loss_curves.svg";
        std::ofstream f(p);
        f << svg;
        written.push_back(p.string());
    }
    {
        std::string svg = svgdetail::render_chart("Validation IoU", "IoU",
                                                  {{"val IoU", "#2ca02c", val_iou}});
        fs::path p = dir / "val_iou.svg";
        std::ofstream f(p);
        f << svg;
        written.push_back(p.string());
    }
    return written;
}

} // namespace p2c
