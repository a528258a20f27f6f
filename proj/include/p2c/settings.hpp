#pragma once

#include <cstdlib>
#include <stdexcept>
#include <string>

#include "p2c/config.hpp"
#include "p2c/p2cnet.hpp"
#include "p2c/trainer.hpp"

namespace p2c {

// Everything is configured through the key-value file; the environment only
// selects the compute device (this build is CPU-only).
inline void check_device_env() {
    const char* dev = std::getenv("P2C_DEVICE");
    if (dev && std::string(dev) != "cpu")
        throw std::runtime_error("P2C_DEVICE=" + std::string(dev) + " unsupported: this build is CPU-only");
}

inline NetworkConfig network_config_from(const Config& c) {
    NetworkConfig nc;
    nc.strategy = fusion_strategy_from_string(c.get_str("model.strategy", "p2cnet"));
    nc.stage_widths = c.get_int_list("model.stage_widths", nc.stage_widths);
    if (c.has("model.preset")) nc.apply_preset(c.get_str("model.preset", "tiny"));
    nc.blocks = c.get_int_list("model.blocks", nc.blocks);
    nc.aspp_rates = c.get_int_list("model.aspp_rates", nc.aspp_rates);
    nc.gsam_variant = gsam_variant_from_string(c.get_str("model.gsam_variant", "full"));
    nc.decoder_gsams = static_cast<int>(c.get_int("model.decoder_gsams", nc.decoder_gsams));
    nc.norm = norm_kind_from_string(c.get_str("model.norm", "batch"));
    nc.seed = static_cast<std::uint64_t>(c.get_int("train.seed", 0));
    return nc;
}

// inverse of the parsers above; round-trips through checkpoints so `eval`
// can rebuild the network from a config echo alone
inline Config config_from_settings(const NetworkConfig& nc, const TrainConfig& tc) {
    Config c;
    auto join = [](const std::vector<int>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
        return s;
    };
    c.set("model.strategy", to_string(nc.strategy));
    c.set("model.stage_widths", join(nc.stage_widths));
    c.set("model.blocks", join(nc.blocks));
    c.set("model.aspp_rates", join(nc.aspp_rates));
    c.set("model.gsam_variant", to_string(nc.gsam_variant));
    c.set("model.decoder_gsams", std::to_string(nc.decoder_gsams));
    c.set("model.norm", nc.norm == NormKind::Batch ? "batch" : "group");
    c.set("train.lr", std::to_string(tc.lr));
    c.set("train.adam_beta1", std::to_string(tc.adam_beta1));
    c.set("train.batch_size", std::to_string(tc.batch_size));
    c.set("train.crop_size", std::to_string(tc.crop_size));
    c.set("train.lr_decay_factor", std::to_string(tc.lr_decay_factor));
    c.set("train.lr_patience_epochs", std::to_string(tc.lr_patience_epochs));
    c.set("train.early_stop_epochs", std::to_string(tc.early_stop_epochs));
    c.set("train.max_epochs", std::to_string(tc.max_epochs));
    c.set("train.seed", std::to_string(tc.seed));
    c.set("train.augment", tc.augment ? "true" : "false");
    c.set("train.val_apls", tc.val_apls ? "true" : "false");
    c.set("loss.lambda", std::to_string(tc.loss.lambda));
    c.set("loss.dice_smooth", std::to_string(tc.loss.dice_smooth));
    c.set("loss.mp_strategy", to_string(tc.loss.mp_strategy));
    return c;
}

inline TrainConfig train_config_from(const Config& c) {
    TrainConfig tc;
    tc.lr = c.get_double("train.lr", tc.lr);
    tc.adam_beta1 = c.get_double("train.adam_beta1", tc.adam_beta1);
    tc.batch_size = static_cast<int>(c.get_int("train.batch_size", tc.batch_size));
    tc.crop_size = static_cast<int>(c.get_int("train.crop_size", tc.crop_size));
    tc.lr_decay_factor = c.get_double("train.lr_decay_factor", tc.lr_decay_factor);
    tc.lr_patience_epochs = static_cast<int>(c.get_int("train.lr_patience_epochs", tc.lr_patience_epochs));
    tc.early_stop_epochs = static_cast<int>(c.get_int("train.early_stop_epochs", tc.early_stop_epochs));
    tc.max_epochs = static_cast<int>(c.get_int("train.max_epochs", tc.max_epochs));
    tc.seed = static_cast<std::uint64_t>(c.get_int("train.seed", 0));
    tc.augment = c.get_bool("train.augment", tc.augment);
    tc.val_apls = c.get_bool("train.val_apls", tc.val_apls);
    tc.loss.lambda = c.get_double("loss.lambda", tc.loss.lambda);
    tc.loss.dice_smooth = c.get_double("loss.dice_smooth", tc.loss.dice_smooth);
    tc.loss.mp_strategy = mp_strategy_from_string(c.get_str("loss.mp_strategy", "sat"));
    return tc;
}

} // namespace p2c
