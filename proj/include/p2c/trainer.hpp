#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2c/checkpoint.hpp"
#include "p2c/dataset.hpp"
#include "p2c/losses.hpp"
#include "p2c/metrics.hpp"
#include "p2c/optim.hpp"
#include "p2c/p2cnet.hpp"

namespace p2c {

struct TrainConfig {
    double lr = 2e-4;
    double adam_beta1 = 0.5; // Adam first-moment coefficient
    int batch_size = 2;
    int crop_size = 64;
    double lr_decay_factor = 0.2;
    int lr_patience_epochs = 5;
    int early_stop_epochs = 20;
    int max_epochs = 200;
    LossConfig loss;
    std::uint64_t seed = 0;
    bool augment = true;
    double improve_eps = 1e-5; // ties must not reset patience
    bool val_apls = true;
};

// Validation-mIoU-driven schedule: after `patience` consecutive epochs without
// a strict improvement the learning rate is multiplied by `factor`; after
// `early_stop` consecutive epochs training stops. Stands alone so synthetic
// histories can drive it in tests.
class PlateauScheduler {
public:
    PlateauScheduler(double lr, double factor, int patience, int early_stop, double eps = 1e-5)
        : lr_(lr), factor_(factor), patience_(patience), early_stop_(early_stop), eps_(eps) {}

    struct Decision {
        double lr = 0;
        bool improved = false;
        bool decayed = false;
        bool stop = false;
    };

    Decision observe(double miou) {
        Decision d;
        d.improved = miou > best_ + eps_;
        if (d.improved) {
            best_ = miou;
            bad_ = 0;
        } else {
            ++bad_;
            if (patience_ > 0 && bad_ % patience_ == 0) {
                lr_ *= factor_;
                d.decayed = true;
            }
        }
        d.stop = bad_ >= early_stop_;
        d.lr = lr_;
        return d;
    }

    double lr() const { return lr_; }
    double best() const { return best_; }
    int epochs_since_improvement() const { return bad_; }

private:
    double lr_, factor_;
    int patience_, early_stop_;
    double eps_;
    double best_ = -std::numeric_limits<double>::infinity();
    int bad_ = 0;
};

// ---- split ----

struct SplitResult {
    std::vector<SampleTriple> train, val, test;
};

inline SplitResult split_dataset(const std::vector<SampleTriple>& samples, double r_train,
                                 double r_val, double r_test, std::uint64_t seed) {
    if (std::fabs(r_train + r_val + r_test - 1.0) > 1e-9)
        throw std::invalid_argument("split_dataset: ratios must sum to 1");
    std::size_t n = samples.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(i)]);

    std::size_t n_train = static_cast<std::size_t>(std::floor(r_train * static_cast<double>(n)));
    std::size_t n_val = static_cast<std::size_t>(std::floor(r_val * static_cast<double>(n)));
    SplitResult out;
    for (std::size_t i = 0; i < n; ++i) {
        const SampleTriple& s = samples[idx[i]];
        if (i < n_train) out.train.push_back(s);
        else if (i < n_train + n_val) out.val.push_back(s);
        else out.test.push_back(s);
    }
    if (out.train.empty() || out.val.empty() || out.test.empty())
        throw std::invalid_argument("split_dataset: a split came out empty");
    return out;
}

// ---- cropping ----

inline SampleTriple crop_sample(const SampleTriple& s, int y0, int x0, int size) {
    int h = s.complete.h, w = s.complete.w;
    if (size > h || size > w)
        throw std::invalid_argument("crop: sample " + std::to_string(h) + "x" + std::to_string(w) +
                                    " smaller than crop " + std::to_string(size));
    if (y0 == 0 && x0 == 0 && size == h && size == w) return s;
    SampleTriple out;
    out.alpha = s.alpha;
    out.id = s.id;
    out.partial = Raster(size, size);
    out.complete = Raster(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            out.partial.at(y, x) = s.partial.at(y0 + y, x0 + x);
            out.complete.at(y, x) = s.complete.at(y0 + y, x0 + x);
        }
    out.satellite = Tensor<float>({3, size, size});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                out.satellite[(static_cast<std::size_t>(c) * size + y) * size + x] =
                    s.satellite[(static_cast<std::size_t>(c) * h + y0 + y) * w + x0 + x];
    return out;
}

inline SampleTriple center_crop(const SampleTriple& s, int size) {
    return crop_sample(s, (s.complete.h - size) / 2, (s.complete.w - size) / 2, size);
}

inline SampleTriple random_crop(const SampleTriple& s, int size, Rng& rng) {
    int my = s.complete.h - size, mx = s.complete.w - size;
    int y0 = my > 0 ? static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(my + 1))) : 0;
    int x0 = mx > 0 ? static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(mx + 1))) : 0;
    return crop_sample(s, y0, x0, size);
}

// ---- batching ----

inline Tensor<float> raster_to_tensor(const Raster& r) {
    Tensor<float> t({1, r.h, r.w});
    for (std::size_t i = 0; i < r.px.size(); ++i) t[i] = r.px[i] ? 1.0f : 0.0f;
    return t;
}

struct Batch {
    Tensor<float> sat, partial, complete;
};

inline Batch make_batch(const std::vector<const SampleTriple*>& samples) {
    int b = static_cast<int>(samples.size());
    int h = samples[0]->complete.h, w = samples[0]->complete.w;
    Batch batch{Tensor<float>({b, 3, h, w}), Tensor<float>({b, 1, h, w}), Tensor<float>({b, 1, h, w})};
    std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < b; ++i) {
        const SampleTriple& s = *samples[static_cast<std::size_t>(i)];
        std::copy(s.satellite.data(), s.satellite.data() + 3 * plane,
                  batch.sat.data() + static_cast<std::size_t>(i) * 3 * plane);
        for (std::size_t p = 0; p < plane; ++p) {
            batch.partial[static_cast<std::size_t>(i) * plane + p] = s.partial.px[p] ? 1.0f : 0.0f;
            batch.complete[static_cast<std::size_t>(i) * plane + p] = s.complete.px[p] ? 1.0f : 0.0f;
        }
    }
    return batch;
}

// ---- evaluation ----

struct EvalOptions {
    std::optional<DatasetMode> alpha_override;
    const std::map<std::string, RoadGraph>* graphs = nullptr; // required for overrides > 0
    std::uint64_t seed = 99;
    int crop_size = 64;
    bool compute_apls = true;
    AplsConfig apls;
};

struct EvalResult {
    MetricsReport final_report;           // metrics of the designated output map
    bool has_sat = false;
    MetricsReport sat_report;             // satellite-branch metrics when present
};

inline EvalResult evaluate(P2CNetwork<float>& net, const std::vector<SampleTriple>& samples,
                           const EvalOptions& opt = {}) {
    ConfusionCounts agg, agg_sat;
    double apls_sum = 0;
    std::size_t n = 0;
    bool any_sat = false;
    Rng rng(opt.seed);

    for (const auto& sample : samples) {
        SampleTriple s = sample;
        if (opt.alpha_override) {
            double alpha = 0;
            switch (*opt.alpha_override) {
                case DatasetMode::A0: alpha = 0.0; break;
                case DatasetMode::A25: alpha = 0.25; break;
                case DatasetMode::A50: alpha = 0.50; break;
                case DatasetMode::A75: alpha = 0.75; break;
                case DatasetMode::Mix: {
                    const double mix[3] = {0.25, 0.50, 0.75};
                    alpha = mix[rng.uniform_int(3)];
                    break;
                }
            }
            if (alpha == 0.0) {
                s.partial = Raster(s.complete.h, s.complete.w);
            } else {
                if (!opt.graphs || !opt.graphs->count(s.id))
                    throw std::runtime_error("evaluate: alpha override " + std::to_string(alpha) +
                                             " needs the road graph for sample '" + s.id + "'");
                s.partial = erase_to_ratio(opt.graphs->at(s.id), alpha, rng.next_u64()).partial;
            }
            s.alpha = alpha;
        }
        SampleTriple c = center_crop(s, opt.crop_size);
        auto out = net.predict(c.satellite, raster_to_tensor(c.partial));
        Raster pred = binarize(out.final);
        agg += confusion(pred, c.complete);
        if (out.has_sat) {
            any_sat = true;
            agg_sat += confusion(binarize(out.m_sat), c.complete);
        }
        if (opt.compute_apls) apls_sum += apls_rasters(c.complete, pred, opt.apls);
        ++n;
    }

    EvalResult res;
    res.final_report = MetricsReport::from(segmentation_metrics(agg),
                                           n && opt.compute_apls ? apls_sum / static_cast<double>(n) : 0.0, n);
    if (any_sat) {
        res.has_sat = true;
        res.sat_report = MetricsReport::from(segmentation_metrics(agg_sat), 0.0, n);
    }
    return res;
}

// ---- training ----

struct TrainAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunRecord {
    struct Epoch {
        int epoch = 0;
        double lr = 0;
        double train_total = 0;
        double s_bce = 0, s_dice = 0, s_mp = 0, p_bce = 0, p_dice = 0, p_mp = 0;
        double val_loss = 0;
        SegMetrics val;
        double val_apls = 0;
    };
    std::vector<Epoch> epochs;
    int best_epoch = -1;
    double best_val_miou = 0;
};

// per-image loss recomputed from eval-mode predictions, for the curves
inline double sample_loss(const NetworkOutput<float>& out, const SampleTriple& s,
                          const LossConfig& cfg) {
    Tape<float> tape;
    Value<float> msat{};
    if (out.has_sat) msat = make_leaf(tape, out.m_sat);
    auto mpar = make_leaf(tape, out.m_par);
    auto com = make_leaf(tape, raster_to_tensor(s.complete));
    auto par = make_leaf(tape, raster_to_tensor(s.partial));
    return total_loss(msat, mpar, com, par, cfg).total.val().item();
}

inline RunRecord train(P2CNetwork<float>& net, const std::vector<SampleTriple>& train_set,
                       const std::vector<SampleTriple>& val_set, const TrainConfig& cfg,
                       const std::string& out_dir = "", const std::string& config_echo = "",
                       std::ostream* log = nullptr,
                       const std::function<bool(const RunRecord&)>& stop_early = nullptr) {
    namespace fs = std::filesystem;
    if (train_set.empty() || val_set.empty())
        throw std::invalid_argument("train: empty train or validation split");

    Adam<float> opt(net.store, static_cast<float>(cfg.lr), static_cast<float>(cfg.adam_beta1));
    PlateauScheduler sched(cfg.lr, cfg.lr_decay_factor, cfg.lr_patience_epochs,
                           cfg.early_stop_epochs, cfg.improve_eps);
    Rng run_rng(cfg.seed ^ 0x7E46A12B9C03D5F1ull);
    RunRecord rec;

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream echo(fs::path(out_dir) / "config.echo");
        echo << config_echo;
    }

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        Rng epoch_rng = run_rng.fork(static_cast<std::uint64_t>(epoch) + 1);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[epoch_rng.uniform_int(i)]);

        RunRecord::Epoch ep;
        ep.epoch = epoch;
        ep.lr = sched.lr();
        opt.set_lr(static_cast<float>(sched.lr()));

        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<SampleTriple> cropped;
            cropped.reserve(end - start);
            std::vector<const SampleTriple*> ptrs;
            for (std::size_t i = start; i < end; ++i) {
                Rng srng = epoch_rng.fork(1000 + order[i]);
                SampleTriple s = random_crop(train_set[order[i]], cfg.crop_size, srng);
                if (cfg.augment) s = augment(s, srng.next_u64());
                cropped.push_back(std::move(s));
            }
            for (const auto& s : cropped) ptrs.push_back(&s);
            Batch batch = make_batch(ptrs);

            Tape<float> tape;
            Binder<float> bind(tape, net.store);
            auto vs = make_leaf(tape, batch.sat);
            auto vp = make_leaf(tape, batch.partial);
            auto res = net.forward(bind, vs, vp, /*training=*/true);
            auto vc = make_leaf(tape, batch.complete);
            auto lt = total_loss(res.m_sat, res.m_par, vc, vp, cfg.loss);

            auto check = [&](double v, const char* name) {
                if (!std::isfinite(v))
                    throw TrainAbort("non-finite " + std::string(name) + " at epoch " +
                                     std::to_string(epoch));
            };
            check(lt.s_bce, "satellite BCE"); check(lt.s_dice, "satellite Dice");
            check(lt.s_mp, "satellite MP"); check(lt.p_bce, "partial BCE");
            check(lt.p_dice, "partial Dice"); check(lt.p_mp, "partial MP");
            double total = lt.total.val().item();
            check(total, "total loss");

            tape.backward(lt.total.idx);
            bind.harvest();
            opt.step();
            opt.zero_grad();

            ep.train_total += total;
            ep.s_bce += lt.s_bce; ep.s_dice += lt.s_dice; ep.s_mp += lt.s_mp;
            ep.p_bce += lt.p_bce; ep.p_dice += lt.p_dice; ep.p_mp += lt.p_mp;
            ++steps;
        }
        double inv = steps ? 1.0 / steps : 0.0;
        ep.train_total *= inv;
        ep.s_bce *= inv; ep.s_dice *= inv; ep.s_mp *= inv;
        ep.p_bce *= inv; ep.p_dice *= inv; ep.p_mp *= inv;

        // validation: center crop, eval mode
        ConfusionCounts agg;
        double apls_sum = 0, vloss = 0;
        for (const auto& sample : val_set) {
            SampleTriple c = center_crop(sample, cfg.crop_size);
            auto out = net.predict(c.satellite, raster_to_tensor(c.partial));
            agg += confusion(binarize(out.final), c.complete);
            vloss += sample_loss(out, c, cfg.loss);
            if (cfg.val_apls) apls_sum += apls_rasters(c.complete, binarize(out.final));
        }
        ep.val = segmentation_metrics(agg);
        ep.val_loss = vloss / static_cast<double>(val_set.size());
        ep.val_apls = cfg.val_apls ? apls_sum / static_cast<double>(val_set.size()) : 0.0;

        auto dec = sched.observe(ep.val.miou);
        rec.epochs.push_back(ep);

        if (dec.improved || rec.best_epoch < 0) {
            if (ep.val.miou > rec.best_val_miou || rec.best_epoch < 0) {
                rec.best_epoch = epoch;
                rec.best_val_miou = ep.val.miou;
                if (!out_dir.empty())
                    save_checkpoint((fs::path(out_dir) / "ckpt_best").string(), net, config_echo,
                                    epoch, rec.best_val_miou, &opt);
            }
        }
        if (!out_dir.empty())
            save_checkpoint((fs::path(out_dir) / "ckpt_last").string(), net, config_echo, epoch,
                            rec.best_val_miou, &opt);
        if (log)
            (*log) << "epoch " << epoch << " lr " << ep.lr << " train " << ep.train_total
                   << " val_loss " << ep.val_loss << " val_miou " << ep.val.miou
                   << " val_iou " << ep.val.iou << (dec.improved ? " *" : "") << "\n";

        if (stop_early && stop_early(rec)) break;
        if (dec.stop) break;
    }
    return rec;
}

} // namespace p2c
