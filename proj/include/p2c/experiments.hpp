#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "p2c/plots.hpp"
#include "p2c/report.hpp"
#include "p2c/settings.hpp"
#include "p2c/trainer.hpp"

namespace p2c {

// One training configuration plus the alpha settings it is evaluated under.
struct RunSpec {
    std::string name;
    FusionStrategy strategy = FusionStrategy::FeaturesFusion;
    GsamVariant gsam_variant = GsamVariant::Full;
    MpStrategy mp_strategy = MpStrategy::Off;
    double lambda = 0;
    std::optional<DatasetMode> train_alpha;              // nullopt = train data as-is
    std::vector<std::optional<DatasetMode>> eval_alphas; // nullopt = test data as-is
    bool report_sat_row = false;                         // emit a second "(sat)" row
};

struct ExperimentPlan {
    std::string preset;
    std::vector<std::string> columns; // metric columns of the emitted table
    std::vector<RunSpec> runs;
};

struct ExperimentFilter {
    std::vector<double> lambdas;       // empty = all
    std::vector<MpStrategy> strategies; // empty = all
};

inline ExperimentPlan plan_experiment(const std::string& preset, const ExperimentFilter& filter = {}) {
    ExperimentPlan plan;
    plan.preset = preset;
    auto want_lambda = [&](double l) {
        if (filter.lambdas.empty()) return true;
        for (double x : filter.lambdas) if (x == l) return true;
        return false;
    };
    auto want_strategy = [&](MpStrategy s) {
        if (filter.strategies.empty()) return true;
        for (auto x : filter.strategies) if (x == s) return true;
        return false;
    };

    if (preset == "fusion_strategies") {
        plan.columns = {"F1", "IoU"};
        auto add = [&](const std::string& name, FusionStrategy fs, bool sat_row) {
            RunSpec r;
            r.name = name;
            r.strategy = fs;
            r.eval_alphas = {std::nullopt, DatasetMode::A0}; // alpha_test = mix and 0%
            r.report_sat_row = sat_row;
            plan.runs.push_back(r);
        };
        add("outputs_augmentation", FusionStrategy::OutputsAugmentation, false);
        add("outputs_fusion", FusionStrategy::OutputsFusion, false);
        add("inputs_fusion", FusionStrategy::InputsFusion, false);
        add("features_fusion", FusionStrategy::FeaturesFusion, true);
    } else if (preset == "loss_strategies") {
        plan.columns = {"R", "F1", "IoU"};
        for (MpStrategy strat : {MpStrategy::Both, MpStrategy::Par, MpStrategy::Sat}) {
            if (!want_strategy(strat)) continue;
            for (double lambda : {1.0, 10.0, 20.0, 30.0}) {
                if (!want_lambda(lambda)) continue;
                RunSpec r;
                r.name = to_string(strat) + "_lambda" + std::to_string(static_cast<int>(lambda));
                r.strategy = FusionStrategy::FeaturesFusion;
                r.mp_strategy = strat;
                r.lambda = lambda;
                r.eval_alphas = {std::nullopt};
                plan.runs.push_back(r);
            }
        }
    } else if (preset == "gsam_ablation") {
        plan.columns = {"F1", "IoU"};
        auto add = [&](const std::string& name, FusionStrategy fs, GsamVariant v, MpStrategy mp) {
            RunSpec r;
            r.name = name;
            r.strategy = fs;
            r.gsam_variant = v;
            r.mp_strategy = mp;
            r.lambda = mp == MpStrategy::Off ? 0.0 : 30.0;
            r.eval_alphas = {std::nullopt};
            plan.runs.push_back(r);
        };
        add("basic", FusionStrategy::FeaturesFusion, GsamVariant::Full, MpStrategy::Off);
        add("mp", FusionStrategy::FeaturesFusion, GsamVariant::Full, MpStrategy::Sat);
        add("mp_gate_exist", FusionStrategy::P2CNet, GsamVariant::GateExist, MpStrategy::Sat);
        add("mp_gate", FusionStrategy::P2CNet, GsamVariant::GateOnly, MpStrategy::Sat);
        add("mp_gate_attention_exist", FusionStrategy::P2CNet, GsamVariant::AttentionExist, MpStrategy::Sat);
        add("mp_gate_attention", FusionStrategy::P2CNet, GsamVariant::Full, MpStrategy::Sat);
    } else if (preset == "robustness_0pct") {
        plan.columns = {"F1", "IoU"};
        auto add = [&](const std::string& name, FusionStrategy fs) {
            RunSpec r;
            r.name = name;
            r.strategy = fs;
            r.train_alpha = DatasetMode::A0; // train and test with empty partial maps
            r.eval_alphas = {DatasetMode::A0};
            r.mp_strategy = fs == FusionStrategy::P2CNet ? MpStrategy::Sat : MpStrategy::Off;
            r.lambda = r.mp_strategy == MpStrategy::Off ? 0.0 : 30.0;
            plan.runs.push_back(r);
        };
        add("p2cnet", FusionStrategy::P2CNet);
        add("inputs_fusion", FusionStrategy::InputsFusion);
    } else {
        throw std::invalid_argument("unknown experiment preset: " + preset);
    }
    return plan;
}

struct ExperimentRow {
    std::string run;
    std::string alpha_test;
    MetricsReport report;
};

struct ExperimentResult {
    ExperimentPlan plan;
    std::vector<ExperimentRow> rows;
};

inline std::string alpha_label(const std::optional<DatasetMode>& a) {
    return a ? to_string(*a) : "mix";
}

// Train every run of the plan on the given (mix) sample set and evaluate it
// per the plan's alpha protocol. `graphs` enables alpha regeneration.
inline ExperimentResult run_experiment(const ExperimentPlan& plan,
                                       const std::vector<SampleTriple>& samples,
                                       const std::map<std::string, RoadGraph>& graphs,
                                       NetworkConfig net_base, TrainConfig train_base,
                                       const std::string& out_dir, std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    if (!out_dir.empty()) fs::create_directories(out_dir);

    auto split = split_dataset(samples, 0.8, 0.1, 0.1, train_base.seed);
    ExperimentResult result;
    result.plan = plan;

    auto zero_partials = [](std::vector<SampleTriple> set) {
        for (auto& s : set) {
            s.partial = Raster(s.complete.h, s.complete.w);
            s.alpha = 0;
        }
        return set;
    };

    for (const auto& run : plan.runs) {
        NetworkConfig nc = net_base;
        nc.strategy = run.strategy;
        nc.gsam_variant = run.gsam_variant;
        TrainConfig tc = train_base;
        tc.loss.mp_strategy = run.mp_strategy;
        tc.loss.lambda = run.lambda;

        std::vector<SampleTriple> train_set = split.train, val_set = split.val;
        if (run.train_alpha && *run.train_alpha == DatasetMode::A0) {
            train_set = zero_partials(train_set);
            val_set = zero_partials(val_set);
        }

        if (log) (*log) << "[experiment] training " << run.name << " (" << to_string(run.strategy) << ")\n";
        auto net = P2CNetwork<float>::build(nc);
        std::string run_dir = out_dir.empty() ? "" : (fs::path(out_dir) / run.name).string();
        std::string echo = config_from_settings(nc, tc).echo();
        RunRecord rec = train(*net, train_set, val_set, tc, run_dir, echo, log);

        for (const auto& alpha : run.eval_alphas) {
            EvalOptions eo;
            eo.alpha_override = alpha;
            eo.graphs = &graphs;
            eo.crop_size = tc.crop_size;
            eo.seed = tc.seed + 555;
            EvalResult ev = evaluate(*net, split.test, eo);
            if (run.report_sat_row && ev.has_sat)
                result.rows.push_back({run.name + " (sat)", alpha_label(alpha), ev.sat_report});
            std::string name = run.report_sat_row ? run.name + " (par)" : run.name;
            result.rows.push_back({name, alpha_label(alpha), ev.final_report});
        }
        (void)rec;
    }

    if (!out_dir.empty()) {
        // aligned text table, one row per (run, alpha_test)
        std::ofstream tab(fs::path(out_dir) / "table.txt");
        tab << plan.preset << "\n";
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%-32s %-10s", "method", "alpha_test");
        tab << buf;
        for (const auto& c : plan.columns) { std::snprintf(buf, sizeof(buf), " %8s", c.c_str()); tab << buf; }
        tab << "\n";
        for (const auto& row : result.rows) {
            std::snprintf(buf, sizeof(buf), "%-32s %-10s", row.run.c_str(), row.alpha_test.c_str());
            tab << buf;
            for (const auto& c : plan.columns) {
                double v = 0;
                if (c == "P") v = row.report.precision;
                else if (c == "R") v = row.report.recall;
                else if (c == "F1") v = row.report.f1;
                else if (c == "IoU") v = row.report.iou;
                else if (c == "mIoU") v = row.report.miou;
                else if (c == "APLS") v = row.report.apls;
                std::snprintf(buf, sizeof(buf), " %8.4f", v);
                tab << buf;
            }
            tab << "\n";
        }

        json rows = json::array();
        for (const auto& row : result.rows)
            rows.push_back(json{{"run", row.run}, {"alpha_test", row.alpha_test},
                                {"metrics", report_to_json(row.report)}});
        write_json_file((fs::path(out_dir) / "results.json").string(),
                        json{{"preset", plan.preset}, {"rows", rows}});
    }
    return result;
}

} // namespace p2c
