#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "p2c/metrics.hpp"
#include "p2c/trainer.hpp"

namespace p2c {

using nlohmann::json;

// full precision in JSON; the human summary rounds to 4 decimals
inline json report_to_json(const MetricsReport& r) {
    return json{{"P", r.precision}, {"R", r.recall},     {"F1", r.f1},
                {"IoU", r.iou},     {"IoU_b", r.iou_b},  {"mIoU", r.miou},
                {"APLS", r.apls},   {"n_images", r.n_images}, {"config_hash", r.config_hash}};
}

inline MetricsReport report_from_json(const json& j) {
    MetricsReport r;
    r.precision = j.at("P");
    r.recall = j.at("R");
    r.f1 = j.at("F1");
    r.iou = j.at("IoU");
    r.iou_b = j.at("IoU_b");
    r.miou = j.at("mIoU");
    r.apls = j.at("APLS");
    r.n_images = j.at("n_images");
    r.config_hash = j.value("config_hash", "");
    return r;
}

inline std::string report_summary(const MetricsReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "P %.4f  R %.4f  F1 %.4f  IoU %.4f  IoU_b %.4f  mIoU %.4f  APLS %.4f  (n=%zu)",
                  r.precision, r.recall, r.f1, r.iou, r.iou_b, r.miou, r.apls, r.n_images);
    return buf;
}

inline json record_to_json(const RunRecord& rec) {
    json epochs = json::array();
    for (const auto& e : rec.epochs) {
        epochs.push_back(json{{"epoch", e.epoch},
                              {"lr", e.lr},
                              {"train", {{"total", e.train_total},
                                         {"s_bce", e.s_bce}, {"s_dice", e.s_dice}, {"s_mp", e.s_mp},
                                         {"p_bce", e.p_bce}, {"p_dice", e.p_dice}, {"p_mp", e.p_mp}}},
                              {"val", {{"loss", e.val_loss},
                                       {"P", e.val.precision}, {"R", e.val.recall}, {"F1", e.val.f1},
                                       {"IoU", e.val.iou}, {"IoU_b", e.val.iou_b}, {"mIoU", e.val.miou},
                                       {"APLS", e.val_apls}}}});
    }
    return json{{"epochs", epochs}, {"best_epoch", rec.best_epoch}, {"best_val_miou", rec.best_val_miou}};
}

inline RunRecord record_from_json(const json& j) {
    RunRecord rec;
    rec.best_epoch = j.at("best_epoch");
    rec.best_val_miou = j.at("best_val_miou");
    for (const auto& e : j.at("epochs")) {
        RunRecord::Epoch ep;
        ep.epoch = e.at("epoch");
        ep.lr = e.at("lr");
        const auto& t = e.at("train");
        ep.train_total = t.at("total");
        ep.s_bce = t.at("s_bce"); ep.s_dice = t.at("s_dice"); ep.s_mp = t.at("s_mp");
        ep.p_bce = t.at("p_bce"); ep.p_dice = t.at("p_dice"); ep.p_mp = t.at("p_mp");
        const auto& v = e.at("val");
        ep.val_loss = v.at("loss");
        ep.val.precision = v.at("P"); ep.val.recall = v.at("R"); ep.val.f1 = v.at("F1");
        ep.val.iou = v.at("IoU"); ep.val.iou_b = v.at("IoU_b"); ep.val.miou = v.at("mIoU");
        ep.val_apls = v.at("APLS");
        rec.epochs.push_back(ep);
    }
    return rec;
}

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << "\n";
}

inline json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    json j;
    f >> j;
    return j;
}

} // namespace p2c
