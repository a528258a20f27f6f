// p2c: synthetic road data generation, partial-to-complete training,
// evaluation, experiment presets, APLS scoring and run plots.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "p2c/dataset.hpp"
#include "p2c/experiments.hpp"
#include "p2c/plots.hpp"
#include "p2c/report.hpp"
#include "p2c/settings.hpp"

namespace fs = std::filesystem;
using namespace p2c;

namespace {

int cmd_gen_synthetic(std::uint64_t seed, int count, int size, int roads_lo, int roads_hi,
                      const std::string& out) {
    if (size < 32) throw std::runtime_error("gen-synthetic: --size must be >= 32");
    fs::create_directories(fs::path(out) / "graphs");
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "synt_%06d", i);
        RoadGraph g = generate_synthetic_graph(rng.next_u64(), size, size, {roads_lo, roads_hi});
        SampleTriple s = make_sample(g, 0.0, rng.next_u64(), id); // partial filled by make-partial
        save_sample(out, s);
        save_graph((fs::path(out) / "graphs" / (std::string(id) + ".txt")).string(), g);
    }
    std::cout << "wrote " << count << " samples (sat/complete/graphs) to " << out << "\n";
    return 0;
}

int cmd_make_partial(const std::string& alpha_str, std::uint64_t seed, const std::string& in,
                     const std::string& out) {
    DatasetMode mode = dataset_mode_from_string(alpha_str);
    auto graphs = load_graph_map(in);
    if (graphs.empty()) throw std::runtime_error("make-partial: no graphs under " + in + "/graphs");
    fs::create_directories(fs::path(out) / "partial");
    if (!fs::equivalent(fs::path(in), fs::path(out))) {
        for (const char* sub : {"sat", "complete", "graphs"}) {
            fs::create_directories(fs::path(out) / sub);
            if (fs::exists(fs::path(in) / sub))
                fs::copy(fs::path(in) / sub, fs::path(out) / sub,
                         fs::copy_options::overwrite_existing | fs::copy_options::recursive);
        }
    }
    Rng rng(seed);
    const double mix[3] = {0.25, 0.50, 0.75};
    int n = 0;
    for (const auto& [id, g] : graphs) {
        double alpha = 0;
        switch (mode) {
            case DatasetMode::A0: alpha = 0.0; break;
            case DatasetMode::A25: alpha = 0.25; break;
            case DatasetMode::A50: alpha = 0.50; break;
            case DatasetMode::A75: alpha = 0.75; break;
            case DatasetMode::Mix: alpha = mix[rng.uniform_int(3)]; break;
        }
        Raster partial = alpha == 0.0 ? Raster(g.h, g.w) : erase_to_ratio(g, alpha, rng.next_u64()).partial;
        png_write((fs::path(out) / "partial" / (id + ".png")).string(), gray_from_raster(partial));
        ++n;
    }
    std::cout << "wrote " << n << " partial maps (alpha=" << alpha_str << ") to " << out << "\n";
    return 0;
}

struct LoadedData {
    SplitResult split;
    std::map<std::string, RoadGraph> graphs;
};

LoadedData load_training_data(const Config& cfg) {
    std::string root = cfg.get_str("data.root", "");
    if (root.empty()) throw std::runtime_error("config: data.root is required");
    std::string layout = cfg.get_str("data.layout", "flat");
    LoadedData d;
    if (layout == "split") {
        d.split.train = load_tiles(root + "/train").samples;
        d.split.val = load_tiles(root + "/val").samples;
        d.split.test = load_tiles(root + "/test").samples;
        if (d.split.train.empty() || d.split.val.empty())
            throw std::runtime_error("data: empty train or val split under " + root);
        for (const char* sub : {"train", "val", "test"})
            for (auto& [id, g] : load_graph_map(root + "/" + std::string(sub))) d.graphs[id] = g;
    } else if (layout == "flat") {
        auto loaded = load_tiles(root);
        if (loaded.skipped) std::cerr << "warning: skipped " << loaded.skipped << " incomplete triples\n";
        if (loaded.samples.empty()) throw std::runtime_error("data: no samples under " + root);
        double rt = cfg.get_double("data.train_ratio", 0.8);
        double rv = cfg.get_double("data.val_ratio", 0.1);
        double rs = cfg.get_double("data.test_ratio", 0.1);
        auto seed = static_cast<std::uint64_t>(cfg.get_int("data.split_seed", 1));
        d.split = split_dataset(loaded.samples, rt, rv, rs, seed);
        d.graphs = load_graph_map(root);
    } else {
        throw std::runtime_error("config: data.layout must be flat or split");
    }
    return d;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    Config cfg = Config::load(config_path);
    NetworkConfig nc = network_config_from(cfg);
    TrainConfig tc = train_config_from(cfg);
    LoadedData data = load_training_data(cfg);

    std::cout << "train: " << data.split.train.size() << " train / " << data.split.val.size()
              << " val / " << data.split.test.size() << " test samples\n";
    auto net = P2CNetwork<float>::build(nc);
    std::cout << "model " << to_string(nc.strategy) << ", " << net->count_parameters()
              << " parameters\n";

    RunRecord rec = train(*net, data.split.train, data.split.val, tc, out_dir, cfg.echo(), &std::cout);
    write_json_file((fs::path(out_dir) / "record.json").string(), record_to_json(rec));
    emit_plots(rec, out_dir);

    if (!data.split.test.empty()) {
        EvalOptions eo;
        eo.crop_size = tc.crop_size;
        eo.graphs = &data.graphs;
        EvalResult ev = evaluate(*net, data.split.test, eo);
        ev.final_report.config_hash = fnv1a_hex(cfg.echo());
        write_json_file((fs::path(out_dir) / "report.json").string(), report_to_json(ev.final_report));
        std::cout << "test: " << report_summary(ev.final_report) << "\n";
        if (ev.has_sat) std::cout << "test (sat branch): " << report_summary(ev.sat_report) << "\n";
    }
    std::cout << "best epoch " << rec.best_epoch << " val mIoU " << rec.best_val_miou << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::optional<std::string>& alpha, const std::string& out_path) {
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
    Config cfg = Config::parse_string(ckpt.meta.config_echo);
    NetworkConfig nc = network_config_from(cfg);
    auto net = P2CNetwork<float>::build(nc);
    apply_checkpoint(ckpt, *net);

    auto loaded = load_tiles(data_dir);
    if (loaded.samples.empty()) throw std::runtime_error("eval: no samples under " + data_dir);
    auto graphs = load_graph_map(data_dir);

    EvalOptions eo;
    eo.crop_size = static_cast<int>(cfg.get_int("train.crop_size", 64));
    eo.graphs = &graphs;
    if (alpha) eo.alpha_override = dataset_mode_from_string(*alpha);
    EvalResult ev = evaluate(*net, loaded.samples, eo);
    ev.final_report.config_hash = fnv1a_hex(ckpt.meta.config_echo);

    std::cout << report_summary(ev.final_report) << "\n";
    if (ev.has_sat) std::cout << "(sat branch) " << report_summary(ev.sat_report) << "\n";
    if (!out_path.empty()) write_json_file(out_path, report_to_json(ev.final_report));
    return 0;
}

int cmd_experiment(const std::string& preset, const std::string& data_dir, const std::string& out_dir,
                   const std::string& config_path, const std::vector<double>& lambdas,
                   const std::vector<std::string>& strategies) {
    Config cfg = config_path.empty() ? Config() : Config::load(config_path);
    if (!data_dir.empty()) cfg.set("data.root", data_dir);
    NetworkConfig nc = network_config_from(cfg);
    TrainConfig tc = train_config_from(cfg);
    LoadedData data = load_training_data(cfg);

    ExperimentFilter filter;
    filter.lambdas = lambdas;
    for (const auto& s : strategies) filter.strategies.push_back(mp_strategy_from_string(s));
    ExperimentPlan plan = plan_experiment(preset, filter);

    std::vector<SampleTriple> all;
    all.insert(all.end(), data.split.train.begin(), data.split.train.end());
    all.insert(all.end(), data.split.val.begin(), data.split.val.end());
    all.insert(all.end(), data.split.test.begin(), data.split.test.end());

    ExperimentResult res = run_experiment(plan, all, data.graphs, nc, tc, out_dir, &std::cout);
    std::cout << "rows:\n";
    for (const auto& row : res.rows)
        std::cout << "  " << row.run << " @ " << row.alpha_test << ": " << report_summary(row.report)
                  << "\n";
    std::cout << "table written to " << (fs::path(out_dir) / "table.txt").string() << "\n";
    return 0;
}

int cmd_plot(const std::string& run_dir) {
    RunRecord rec = record_from_json(read_json_file((fs::path(run_dir) / "record.json").string()));
    auto files = emit_plots(rec, run_dir);
    for (const auto& f : files) std::cout << "wrote " << f << "\n";
    return 0;
}

int cmd_apls(const std::string& truth_path, const std::string& pred_path, double snap_radius) {
    AplsConfig ac;
    ac.snap_radius = snap_radius;
    Raster truth = raster_from_gray(png_read(truth_path));
    Raster pred = raster_from_gray(png_read(pred_path));
    double score = apls_rasters(truth, pred, ac);
    std::printf("%.6f\n", score);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"partial-to-complete road extraction toolkit"};
    app.require_subcommand(1);

    // gen-synthetic
    std::uint64_t gen_seed = 7;
    int gen_count = 100, gen_size = 64, roads_lo = 4, roads_hi = 8;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-synthetic", "generate synthetic tiles (sat/complete/graphs)");
    gen->add_option("--seed", gen_seed, "rng seed");
    gen->add_option("--count", gen_count, "number of tiles")->required();
    gen->add_option("--size", gen_size, "tile side in pixels (>= 32)");
    gen->add_option("--roads-min", roads_lo, "min roads per tile");
    gen->add_option("--roads-max", roads_hi, "max roads per tile");
    gen->add_option("--out", gen_out, "output directory")->required();

    // make-partial
    std::string mp_alpha, mp_in, mp_out;
    std::uint64_t mp_seed = 13;
    auto* mp = app.add_subcommand("make-partial", "derive partial maps at a completeness ratio");
    mp->add_option("--alpha", mp_alpha, "0 | 0.25 | 0.5 | 0.75 | mix")
        ->required()
        ->check(CLI::IsMember({"0", "0.25", "0.5", "0.75", "mix"}));
    mp->add_option("--seed", mp_seed, "rng seed");
    mp->add_option("--in", mp_in, "input directory (needs graphs/)")->required();
    mp->add_option("--out", mp_out, "output directory")->required();

    // train
    std::string tr_config, tr_out;
    auto* tr = app.add_subcommand("train", "train a model from a config file");
    tr->add_option("--config", tr_config, "config file")->required();
    tr->add_option("--out", tr_out, "run directory")->required();

    // eval
    std::string ev_ckpt, ev_data, ev_out;
    std::optional<std::string> ev_alpha;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset directory");
    ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--data", ev_data, "dataset directory (sat/partial/complete)")->required();
    ev->add_option("--alpha", ev_alpha, "override alpha: mix | 0 | 0.25 | 0.5 | 0.75")
        ->check(CLI::IsMember({"mix", "0", "0.25", "0.5", "0.75"}));
    ev->add_option("--out", ev_out, "write report JSON here");

    // experiment
    std::string ex_preset, ex_data, ex_out, ex_config;
    std::vector<double> ex_lambdas;
    std::vector<std::string> ex_strategies;
    auto* ex = app.add_subcommand("experiment", "run a preset study");
    ex->add_option("--preset", ex_preset,
                   "fusion_strategies | loss_strategies | gsam_ablation | robustness_0pct")
        ->required();
    ex->add_option("--data", ex_data, "dataset directory");
    ex->add_option("--out", ex_out, "output directory")->required();
    ex->add_option("--config", ex_config, "base config file");
    ex->add_option("--lambda", ex_lambdas, "restrict loss_strategies lambdas");
    ex->add_option("--strategy", ex_strategies, "restrict loss_strategies strategies");

    // plot
    std::string pl_run;
    auto* pl = app.add_subcommand("plot", "emit convergence curves for a run directory");
    pl->add_option("--run", pl_run, "run directory containing record.json")->required();

    // apls
    std::string ap_truth, ap_pred;
    double ap_snap = 4.0;
    auto* ap = app.add_subcommand("apls", "APLS score between two binary map PNGs");
    ap->add_option("--truth", ap_truth, "ground-truth map PNG")->required();
    ap->add_option("--pred", ap_pred, "proposal map PNG")->required();
    ap->add_option("--snap-radius", ap_snap, "node snap radius in pixels");

    CLI11_PARSE(app, argc, argv);

    try {
        check_device_env();
        if (*gen) return cmd_gen_synthetic(gen_seed, gen_count, gen_size, roads_lo, roads_hi, gen_out);
        if (*mp) return cmd_make_partial(mp_alpha, mp_seed, mp_in, mp_out);
        if (*tr) return cmd_train(tr_config, tr_out);
        if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_alpha, ev_out);
        if (*ex) return cmd_experiment(ex_preset, ex_data, ex_out, ex_config, ex_lambdas, ex_strategies);
        if (*pl) return cmd_plot(pl_run);
        if (*ap) return cmd_apls(ap_truth, ap_pred, ap_snap);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
