#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "p2c/config.hpp"
#include "p2c/experiments.hpp"
#include "p2c/plots.hpp"
#include "p2c/report.hpp"
#include "p2c/settings.hpp"
#include "p2c/trainer.hpp"

using namespace p2c;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("p2c_harness_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<SampleTriple> tiny_dataset(int n, DatasetMode mode, std::uint64_t seed) {
    std::vector<RoadGraph> graphs;
    Rng rng(seed);
    for (int i = 0; i < n; ++i)
        graphs.push_back(generate_synthetic_graph(rng.next_u64(), 64, 64, {4, 8}));
    return make_dataset(graphs, mode, seed + 1);
}

} // namespace

TEST_CASE("config parsing and echo") {
    Config c = Config::parse_string(
        "model.strategy = p2cnet\n"
        "# a comment\n"
        "model.stage_widths = 8,8,16,32,64\n"
        "train.lr = 2e-4\n"
        "train.batch_size = 2\n"
        "loss.mp_strategy = sat\n");
    CHECK(c.get_str("model.strategy", "") == "p2cnet");
    CHECK(c.get_double("train.lr", 0) == doctest::Approx(2e-4));
    CHECK(c.get_int("train.batch_size", 0) == 2);
    CHECK(c.get_int_list("model.stage_widths", {}) == std::vector<int>{8, 8, 16, 32, 64});
    CHECK(c.get_str("missing", "fallback") == "fallback");
    CHECK_THROWS(Config::parse_string("no equals sign here\n"));

    Config back = Config::parse_string(c.echo());
    CHECK(back.echo() == c.echo());

    NetworkConfig nc = network_config_from(c);
    CHECK(nc.strategy == FusionStrategy::P2CNet);
    CHECK(nc.stage_widths == std::vector<int>{8, 8, 16, 32, 64});
    TrainConfig tc = train_config_from(c);
    CHECK(tc.lr == doctest::Approx(2e-4));
    CHECK(tc.loss.mp_strategy == MpStrategy::Sat);
}

TEST_CASE("plateau scheduler semantics") {
    SUBCASE("five flat epochs decay the rate to 4e-5 for epoch 6") {
        PlateauScheduler s(2e-4, 0.2, 5, 20);
        auto d0 = s.observe(0.5); // epoch 0 sets the baseline
        CHECK(d0.improved);
        CHECK(d0.lr == doctest::Approx(2e-4));
        for (int epoch = 1; epoch <= 4; ++epoch) {
            auto d = s.observe(0.5);
            CHECK(!d.improved);
            CHECK(!d.decayed);
            CHECK(d.lr == doctest::Approx(2e-4)); // epochs 1..4: four misses, no decay yet
        }
        auto d5 = s.observe(0.5); // fifth consecutive miss
        CHECK(d5.decayed);
        CHECK(d5.lr == doctest::Approx(4e-5)); // the rate used from epoch 6 on
        CHECK(!d5.stop);
    }
    SUBCASE("strictly improving history never decays or stops") {
        PlateauScheduler s(2e-4, 0.2, 5, 20);
        for (int i = 0; i < 50; ++i) {
            auto d = s.observe(0.5 + 0.001 * i);
            CHECK(d.improved);
            CHECK(!d.decayed);
            CHECK(!d.stop);
            CHECK(d.lr == doctest::Approx(2e-4));
        }
    }
    SUBCASE("stop after 20 consecutive misses, decaying at 5, 10, 15, 20") {
        PlateauScheduler s(2e-4, 0.2, 5, 20);
        s.observe(0.9);
        int stops = 0, decays = 0;
        for (int i = 0; i < 20; ++i) {
            auto d = s.observe(0.9); // ties are not improvements
            decays += d.decayed ? 1 : 0;
            if (d.stop) { stops = i + 1; break; }
        }
        CHECK(stops == 20);
        CHECK(decays == 4);
        CHECK(s.lr() == doctest::Approx(2e-4 * 0.2 * 0.2 * 0.2 * 0.2));
    }
    SUBCASE("improvement below the epsilon does not reset patience") {
        PlateauScheduler s(1e-3, 0.5, 3, 9, 1e-5);
        s.observe(0.5);
        s.observe(0.5 + 5e-6); // tie under eps
        s.observe(0.5);
        auto d = s.observe(0.5);
        CHECK(d.decayed); // three misses
    }
}

TEST_CASE("split_dataset: sizes, determinism, disjointness") {
    auto samples = tiny_dataset(20, DatasetMode::Mix, 700);
    // pad ids to 100 via copies with fresh ids to check 80/10/10 exactly
    std::vector<SampleTriple> hundred;
    for (int i = 0; i < 100; ++i) {
        SampleTriple s = samples[static_cast<std::size_t>(i % 20)];
        s.id = "s" + std::to_string(i);
        hundred.push_back(std::move(s));
    }
    auto sp = split_dataset(hundred, 0.8, 0.1, 0.1, 42);
    CHECK(sp.train.size() == 80);
    CHECK(sp.val.size() == 10);
    CHECK(sp.test.size() == 10);

    auto sp2 = split_dataset(hundred, 0.8, 0.1, 0.1, 42);
    for (std::size_t i = 0; i < sp.train.size(); ++i) CHECK(sp.train[i].id == sp2.train[i].id);

    std::set<std::string> seen;
    for (const auto* part : {&sp.train, &sp.val, &sp.test})
        for (const auto& s : *part) {
            CHECK(!seen.count(s.id));
            seen.insert(s.id);
        }
    CHECK(seen.size() == 100);

    CHECK_THROWS(split_dataset(hundred, 0.5, 0.2, 0.2, 1)); // ratios must sum to 1
    std::vector<SampleTriple> three(hundred.begin(), hundred.begin() + 3);
    CHECK_THROWS(split_dataset(three, 0.98, 0.01, 0.01, 1)); // empty split
}

TEST_CASE("crops") {
    auto samples = tiny_dataset(1, DatasetMode::A50, 31);
    const auto& s = samples[0];
    SampleTriple c = center_crop(s, 32);
    CHECK(c.complete.h == 32);
    CHECK(c.satellite.shape() == Shape{3, 32, 32});
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            CHECK(c.complete.at(y, x) == s.complete.at(16 + y, 16 + x));
    CHECK_THROWS(center_crop(c, 64)); // crop larger than the sample

    Rng rng(5);
    SampleTriple r = random_crop(s, 48, rng);
    CHECK(r.complete.h == 48);
    CHECK(is_subset_of(r.partial, r.complete));
}

TEST_CASE("checkpoint round-trip with optimizer state") {
    NetworkConfig nc;
    nc.stage_widths = {8, 8, 16, 32, 64};
    nc.norm = NormKind::Group;
    nc.seed = 4;
    auto net = P2CNetwork<float>::build(nc);
    Adam<float> opt(net->store, 1e-3f, 0.5f);

    // one step so moments are nonzero
    Rng rng(88);
    for (int i = 0; i < net->store.size(); ++i)
        if (net->store.entry(i).trainable)
            for (auto& g : net->store.grad(i).vec()) g = static_cast<float>(rng.normal());
    opt.step();

    auto dir = temp_dir("ckpt");
    std::string echo = "model.stage_widths = 8,8,16,32,64\nmodel.norm = group\n";
    save_checkpoint((dir / "ckpt").string(), *net, echo, 17, 0.625, &opt);

    auto loaded = load_checkpoint((dir / "ckpt").string());
    CHECK(loaded.meta.epoch == 17);
    CHECK(loaded.meta.best_val_miou == doctest::Approx(0.625));
    CHECK(loaded.meta.config_echo == echo);
    CHECK(loaded.has_optimizer);

    auto net2 = P2CNetwork<float>::build(nc);
    Adam<float> opt2(net2->store, 1e-3f, 0.5f);
    apply_checkpoint(loaded, *net2, &opt2);
    for (int i = 0; i < net->store.size(); ++i)
        CHECK(net2->store.value(i).vec() == net->store.value(i).vec());
    CHECK(opt2.step_count() == opt.step_count());

    // predictions agree bitwise after restore
    Tensor<float> sat = Tensor<float>::rand_uniform({3, 64, 64}, rng);
    Tensor<float> par({1, 64, 64}, 0.f);
    CHECK(net->predict(sat, par).m_par.vec() == net2->predict(sat, par).m_par.vec());
    fs::remove_all(dir);
}

TEST_CASE("evaluate: alpha overrides") {
    auto graphs_vec = std::vector<RoadGraph>{generate_synthetic_graph(91, 64, 64, {4, 8}),
                                             generate_synthetic_graph(92, 64, 64, {4, 8})};
    auto ds = make_dataset(graphs_vec, DatasetMode::A50, 10);
    std::map<std::string, RoadGraph> graphs;
    for (std::size_t i = 0; i < ds.size(); ++i) graphs[ds[i].id] = graphs_vec[i];

    NetworkConfig nc;
    nc.stage_widths = {8, 8, 16, 32, 64};
    nc.norm = NormKind::Group;
    auto net = P2CNetwork<float>::build(nc);

    EvalOptions eo;
    eo.crop_size = 64;
    eo.compute_apls = false;
    auto base = evaluate(*net, ds, eo);
    CHECK(base.final_report.n_images == 2);
    CHECK(base.has_sat);

    eo.alpha_override = DatasetMode::A0; // zero partials need no graphs
    auto zero = evaluate(*net, ds, eo);
    CHECK(zero.final_report.n_images == 2);

    eo.alpha_override = DatasetMode::A75;
    CHECK_THROWS(evaluate(*net, ds, eo)); // graphs required
    eo.graphs = &graphs;
    auto r75 = evaluate(*net, ds, eo);
    CHECK(r75.final_report.n_images == 2);

    eo.alpha_override = DatasetMode::Mix; // per-sample alpha redraw
    auto rmix = evaluate(*net, ds, eo);
    CHECK(rmix.final_report.n_images == 2);
}

TEST_CASE("metrics report json schema") {
    MetricsReport r;
    r.precision = 0.8424;
    r.recall = 0.8150;
    r.f1 = 0.8285;
    r.iou = 0.7071;
    r.iou_b = 0.9781;
    r.miou = 0.8426;
    r.apls = 0.7489;
    r.n_images = 12;
    r.config_hash = "deadbeef";
    json j = report_to_json(r);
    for (const char* key : {"P", "R", "F1", "IoU", "IoU_b", "mIoU", "APLS", "n_images", "config_hash"})
        CHECK(j.contains(key));
    MetricsReport back = report_from_json(j);
    CHECK(back.iou == doctest::Approx(r.iou).epsilon(1e-15));
    CHECK(report_summary(r).find("0.7071") != std::string::npos);
}

TEST_CASE("run record json round-trip") {
    RunRecord rec;
    for (int i = 0; i < 3; ++i) {
        RunRecord::Epoch e;
        e.epoch = i;
        e.lr = 2e-4;
        e.train_total = 3.0 - i;
        e.val_loss = 2.5 - i;
        e.val.iou = 0.1 * (i + 1);
        e.val.miou = 0.5 + 0.1 * i;
        rec.epochs.push_back(e);
    }
    rec.best_epoch = 2;
    rec.best_val_miou = 0.7;
    RunRecord back = record_from_json(record_to_json(rec));
    CHECK(back.epochs.size() == 3);
    CHECK(back.best_epoch == 2);
    CHECK(back.epochs[1].train_total == doctest::Approx(2.0));
    CHECK(back.epochs[2].val.iou == doctest::Approx(0.3));
}

TEST_CASE("plots: three series, labeled axes, empty-record guard") {
    RunRecord rec;
    for (int i = 0; i < 40; ++i) {
        RunRecord::Epoch e;
        e.epoch = i;
        e.train_total = 4.0 / (1 + i);
        e.val_loss = 4.5 / (1 + i);
        e.val.iou = 1.0 - 1.0 / (1 + i);
        rec.epochs.push_back(e);
    }
    auto dir = temp_dir("plots");
    auto files = emit_plots(rec, dir.string());
    REQUIRE(files.size() == 2);
    int polylines = 0;
    bool have_epoch_label = false, have_loss_label = false, have_iou_label = false;
    for (const auto& f : files) {
        std::ifstream in(f);
        std::string svg((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        for (std::size_t pos = 0; (pos = svg.find("<polyline", pos)) != std::string::npos; ++pos)
            ++polylines;
        have_epoch_label |= svg.find(">epoch<") != std::string::npos;
        have_loss_label |= svg.find(">loss<") != std::string::npos;
        have_iou_label |= svg.find(">IoU<") != std::string::npos;
    }
    CHECK(polylines == 3); // train loss, val loss, val IoU
    CHECK(have_epoch_label);
    CHECK(have_loss_label);
    CHECK(have_iou_label);

    RunRecord empty;
    CHECK_THROWS(emit_plots(empty, dir.string()));
    fs::remove_all(dir);
}

TEST_CASE("experiment plan layouts") {
    SUBCASE("loss_strategies: 3 strategies x 4 lambdas, R/F1/IoU columns") {
        auto plan = plan_experiment("loss_strategies");
        CHECK(plan.runs.size() == 12);
        CHECK(plan.columns == std::vector<std::string>{"R", "F1", "IoU"});
        int sat30 = 0;
        for (const auto& r : plan.runs) {
            CHECK(r.strategy == FusionStrategy::FeaturesFusion);
            if (r.mp_strategy == MpStrategy::Sat && r.lambda == 30.0) ++sat30;
        }
        CHECK(sat30 == 1);
    }
    SUBCASE("loss_strategies filter for the directional check") {
        ExperimentFilter f;
        f.lambdas = {30.0};
        f.strategies = {MpStrategy::Both, MpStrategy::Sat};
        auto plan = plan_experiment("loss_strategies", f);
        CHECK(plan.runs.size() == 2);
    }
    SUBCASE("fusion_strategies: 4 trained models, mix and 0% eval points") {
        auto plan = plan_experiment("fusion_strategies");
        CHECK(plan.runs.size() == 4);
        for (const auto& r : plan.runs) {
            REQUIRE(r.eval_alphas.size() == 2);
            CHECK(!r.eval_alphas[0].has_value());
            CHECK(r.eval_alphas[1] == DatasetMode::A0);
        }
        CHECK(plan.runs.back().report_sat_row); // features fusion emits (sat) and (par)
    }
    SUBCASE("gsam_ablation rows") {
        auto plan = plan_experiment("gsam_ablation");
        REQUIRE(plan.runs.size() == 6);
        CHECK(plan.runs[0].mp_strategy == MpStrategy::Off);
        CHECK(plan.runs[1].strategy == FusionStrategy::FeaturesFusion);
        CHECK(plan.runs[2].gsam_variant == GsamVariant::GateExist);
        CHECK(plan.runs[3].gsam_variant == GsamVariant::GateOnly);
        CHECK(plan.runs[4].gsam_variant == GsamVariant::AttentionExist);
        CHECK(plan.runs[5].gsam_variant == GsamVariant::Full);
        CHECK(plan.runs[5].strategy == FusionStrategy::P2CNet);
    }
    SUBCASE("robustness preset trains and tests at 0%") {
        auto plan = plan_experiment("robustness_0pct");
        for (const auto& r : plan.runs) {
            CHECK(r.train_alpha == DatasetMode::A0);
            REQUIRE(r.eval_alphas.size() == 1);
            CHECK(r.eval_alphas[0] == DatasetMode::A0);
        }
    }
    CHECK_THROWS(plan_experiment("unknown_preset"));
}

TEST_CASE("training loop: smoke run with checkpoints and determinism") {
    auto samples = tiny_dataset(8, DatasetMode::Mix, 2024);
    std::vector<SampleTriple> train_set(samples.begin(), samples.begin() + 6);
    std::vector<SampleTriple> val_set(samples.begin() + 6, samples.end());

    NetworkConfig nc;
    nc.stage_widths = {8, 8, 16, 32, 64};
    nc.norm = NormKind::Group;
    nc.seed = 9;
    TrainConfig tc;
    tc.max_epochs = 2;
    tc.batch_size = 2;
    tc.seed = 9;
    tc.val_apls = false;
    tc.loss.lambda = 1.0;

    auto dir = temp_dir("train");
    auto net = P2CNetwork<float>::build(nc);
    RunRecord rec = train(*net, train_set, val_set, tc, dir.string(), "train.seed = 9\n");
    CHECK(rec.epochs.size() == 2);
    CHECK(rec.best_epoch >= 0);
    CHECK(fs::exists(dir / "ckpt_best"));
    CHECK(fs::exists(dir / "ckpt_last"));
    CHECK(fs::exists(dir / "config.echo"));

    // bitwise determinism of the recorded losses across reruns
    auto net2 = P2CNetwork<float>::build(nc);
    RunRecord rec2 = train(*net2, train_set, val_set, tc);
    REQUIRE(rec2.epochs.size() == rec.epochs.size());
    for (std::size_t i = 0; i < rec.epochs.size(); ++i) {
        CHECK(rec.epochs[i].train_total == rec2.epochs[i].train_total);
        CHECK(rec.epochs[i].val.miou == rec2.epochs[i].val.miou);
    }
    CHECK_THROWS(train(*net, {}, val_set, tc));
    fs::remove_all(dir);
}

TEST_CASE("run_experiment: micro fusion study writes table and json") {
    auto samples = tiny_dataset(20, DatasetMode::Mix, 4242);
    std::map<std::string, RoadGraph> graphs; // A0 override only, no graphs needed
    NetworkConfig nc;
    nc.stage_widths = {8, 8, 16, 32, 64};
    nc.norm = NormKind::Group;
    nc.seed = 2;
    TrainConfig tc;
    tc.max_epochs = 1;
    tc.batch_size = 2;
    tc.seed = 2;
    tc.val_apls = false;

    auto dir = temp_dir("experiment");
    auto result = run_experiment(plan_experiment("fusion_strategies"), samples, graphs, nc, tc,
                                 dir.string());
    // 4 models x 2 alpha points, features_fusion contributing (sat) and (par)
    CHECK(result.rows.size() == 10);
    int sat_rows = 0, zero_rows = 0;
    for (const auto& row : result.rows) {
        if (row.run.find("(sat)") != std::string::npos) ++sat_rows;
        if (row.alpha_test == "0") ++zero_rows;
        CHECK(row.report.n_images == 2);
    }
    CHECK(sat_rows == 2);
    CHECK(zero_rows == 5);

    CHECK(fs::exists(dir / "table.txt"));
    std::ifstream tab(dir / "table.txt");
    std::string text((std::istreambuf_iterator<char>(tab)), std::istreambuf_iterator<char>());
    CHECK(text.find("features_fusion (par)") != std::string::npos);
    CHECK(text.find("alpha_test") != std::string::npos);

    json res = read_json_file((dir / "results.json").string());
    CHECK(res.at("preset") == "fusion_strategies");
    CHECK(res.at("rows").size() == 10);

    // each run dir holds a checkpoint whose echo rebuilds the network
    auto ckpt = load_checkpoint((dir / "inputs_fusion" / "ckpt_best").string());
    Config echo = Config::parse_string(ckpt.meta.config_echo);
    auto rebuilt = P2CNetwork<float>::build(network_config_from(echo));
    CHECK_NOTHROW(apply_checkpoint(ckpt, *rebuilt));
    CHECK(rebuilt->cfg.strategy == FusionStrategy::InputsFusion);
    fs::remove_all(dir);
}

TEST_CASE("settings round-trip through a config echo") {
    NetworkConfig nc;
    nc.strategy = FusionStrategy::FeaturesFusion;
    nc.stage_widths = {8, 8, 16, 32, 64};
    nc.gsam_variant = GsamVariant::AttentionExist;
    nc.decoder_gsams = 1;
    nc.norm = NormKind::Group;
    TrainConfig tc;
    tc.lr = 5e-4;
    tc.batch_size = 3;
    tc.loss.lambda = 10;
    tc.loss.mp_strategy = MpStrategy::Par;

    Config echo = config_from_settings(nc, tc);
    NetworkConfig nc2 = network_config_from(echo);
    TrainConfig tc2 = train_config_from(echo);
    CHECK(nc2.strategy == nc.strategy);
    CHECK(nc2.stage_widths == nc.stage_widths);
    CHECK(nc2.gsam_variant == nc.gsam_variant);
    CHECK(nc2.decoder_gsams == nc.decoder_gsams);
    CHECK(nc2.norm == nc.norm);
    CHECK(tc2.lr == doctest::Approx(tc.lr));
    CHECK(tc2.batch_size == tc.batch_size);
    CHECK(tc2.loss.lambda == doctest::Approx(10));
    CHECK(tc2.loss.mp_strategy == MpStrategy::Par);
}

TEST_CASE("device environment guard") {
    CHECK_NOTHROW(check_device_env());
#ifdef _GNU_SOURCE
    setenv("P2C_DEVICE", "cuda:0", 1);
    CHECK_THROWS(check_device_env());
    setenv("P2C_DEVICE", "cpu", 1);
    CHECK_NOTHROW(check_device_env());
    unsetenv("P2C_DEVICE");
#endif
}
