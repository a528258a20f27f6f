#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2c/deeplab.hpp"
#include "p2c/gsam.hpp"
#include "p2c/raster.hpp"

namespace p2c {

enum class FusionStrategy { P2CNet, InputsFusion, OutputsFusion, OutputsAugmentation, FeaturesFusion };

inline FusionStrategy fusion_strategy_from_string(const std::string& s) {
    if (s == "p2cnet") return FusionStrategy::P2CNet;
    if (s == "inputs_fusion") return FusionStrategy::InputsFusion;
    if (s == "outputs_fusion") return FusionStrategy::OutputsFusion;
    if (s == "outputs_augmentation") return FusionStrategy::OutputsAugmentation;
    if (s == "features_fusion") return FusionStrategy::FeaturesFusion;
    throw std::invalid_argument("unknown fusion strategy: " + s);
}

inline std::string to_string(FusionStrategy s) {
    switch (s) {
        case FusionStrategy::P2CNet: return "p2cnet";
        case FusionStrategy::InputsFusion: return "inputs_fusion";
        case FusionStrategy::OutputsFusion: return "outputs_fusion";
        case FusionStrategy::OutputsAugmentation: return "outputs_augmentation";
        case FusionStrategy::FeaturesFusion: return "features_fusion";
    }
    return "?";
}

struct NetworkConfig {
    std::vector<int> stage_widths = {16, 16, 32, 64, 128};
    std::vector<int> blocks = {1, 1, 1, 1}; // "tiny" preset; full ResNet-34 is {3,4,6,3}
    std::vector<int> aspp_rates = {6, 12, 18};
    GsamVariant gsam_variant = GsamVariant::Full;
    FusionStrategy strategy = FusionStrategy::P2CNet;
    int decoder_gsams = 2; // 0..2: ASPP-output fusion, then low-level fusion
    NormKind norm = NormKind::Batch;
    std::uint64_t seed = 0;

    void apply_preset(const std::string& name) {
        if (name == "tiny") blocks = {1, 1, 1, 1};
        else if (name == "resnet34") blocks = {3, 4, 6, 3};
        else throw std::invalid_argument("unknown width preset: " + name);
    }
};

inline constexpr int kEncoderStride = 32;
inline constexpr double kBinarizeThreshold = 0.5;

// A fusion point is a GSAM for p2cnet and a 3x3 conv block for the
// features-fusion baseline; both map (F_S, F_P) -> fused C-channel features.
template <typename T>
struct FusionModule {
    bool use_gsam = true;
    GsamModule<T> gsam;
    ConvBlock<T> conv;

    static FusionModule make(ParamStore<T>& store, const std::string& name, int channels,
                             bool use_gsam, GsamVariant variant, NormKind nk, Rng& rng) {
        FusionModule m;
        m.use_gsam = use_gsam;
        if (use_gsam)
            m.gsam = GsamModule<T>::make(store, name, channels, variant, nk, rng);
        else
            m.conv = ConvBlock<T>::make(store, name, 2 * channels, channels, 3, {1, 1, 1}, nk, rng);
        return m;
    }

    Value<T> forward(Binder<T>& bind, Value<T> f_s, Value<T> f_p, bool training) const {
        if (use_gsam) return gsam.forward(bind, f_s, f_p, training);
        return conv.forward(bind, concat(f_s, f_p, 1), training);
    }
};

template <typename T>
struct ForwardResult {
    Value<T> m_sat; // invalid for single-trunk strategies
    Value<T> m_par; // the designated main prediction
};

// eval-time tensors for a single sample
template <typename T>
struct NetworkOutput {
    bool has_sat = false;
    Tensor<T> m_sat;
    Tensor<T> m_par;
    Tensor<T> final; // the designated output map (union-augmented for outputs_augmentation)
};

template <typename T>
class P2CNetwork {
public:
    NetworkConfig cfg;
    ParamStore<T> store;

    static std::unique_ptr<P2CNetwork> build(const NetworkConfig& config) {
        auto net = std::make_unique<P2CNetwork>();
        net->cfg = config;
        Rng rng(config.seed ^ 0xA5C3B1D97E2F4680ull);
        auto& st = net->store;
        const auto& w = config.stage_widths;
        bool two_branch = config.strategy == FusionStrategy::P2CNet ||
                          config.strategy == FusionStrategy::FeaturesFusion;
        if (two_branch) {
            bool use_gsam = config.strategy == FusionStrategy::P2CNet;
            net->sat_ = DeepLabBranch<T>::make(st, "sat", 3, w, config.blocks, config.aspp_rates,
                                               config.norm, rng);
            net->par_ = DeepLabBranch<T>::make(st, "par", 1, w, config.blocks, config.aspp_rates,
                                               config.norm, rng, /*decoder_input_ch=*/4);
            for (int i = 0; i < 4; ++i)
                net->enc_fuse_.push_back(FusionModule<T>::make(
                    st, "fuse.enc" + std::to_string(i + 1), w[static_cast<std::size_t>(i + 1)],
                    use_gsam, config.gsam_variant, config.norm, rng));
            if (config.decoder_gsams >= 1)
                net->dec_fuse_aspp_ = FusionModule<T>::make(st, "fuse.aspp", net->par_.aspp_ch,
                                                            use_gsam, config.gsam_variant,
                                                            config.norm, rng);
            if (config.decoder_gsams >= 2)
                net->dec_fuse_low_ = FusionModule<T>::make(st, "fuse.low", net->par_.low_ch,
                                                           use_gsam, config.gsam_variant,
                                                           config.norm, rng);
        } else {
            int in_ch = config.strategy == FusionStrategy::InputsFusion ? 4 : 3;
            net->trunk_ = DeepLabBranch<T>::make(st, "trunk", in_ch, w, config.blocks,
                                                 config.aspp_rates, config.norm, rng);
            if (config.strategy == FusionStrategy::OutputsFusion) {
                const int fch = 16;
                net->of_pred_ = Conv2dLayer<T>::make(st, "ofusion.pred", 1, fch, 3, {1, 1, 1}, true, rng);
                net->of_par_ = Conv2dLayer<T>::make(st, "ofusion.par", 1, fch, 3, {1, 1, 1}, true, rng);
                net->of_merge_ = Conv2dLayer<T>::make(st, "ofusion.merge", 2 * fch, 1, 1, {1, 0, 1}, true, rng);
            }
        }
        return net;
    }

    std::size_t count_parameters() const { return store.trainable_scalars(); }

    // GateExist cannot be toggled after build; the other variants can.
    void set_gsam_variant(GsamVariant v) {
        cfg.gsam_variant = v;
        for (auto& f : enc_fuse_)
            if (f.use_gsam) f.gsam.set_variant(v);
        if (dec_fuse_aspp_ && dec_fuse_aspp_->use_gsam) dec_fuse_aspp_->gsam.set_variant(v);
        if (dec_fuse_low_ && dec_fuse_low_->use_gsam) dec_fuse_low_->gsam.set_variant(v);
    }

    ForwardResult<T> forward(Binder<T>& bind, Value<T> sat, Value<T> partial, bool training) const {
        const Shape& ss = sat.shape();
        const Shape& ps = partial.shape();
        if (ss.size() != 4 || ps.size() != 4 || ss[1] != 3 || ps[1] != 1 || ss[0] != ps[0] ||
            ss[2] != ps[2] || ss[3] != ps[3])
            throw std::invalid_argument("forward: expected sat (B,3,H,W) and partial (B,1,H,W)");
        int H = ss[2], W = ss[3];
        if (H % kEncoderStride != 0 || W % kEncoderStride != 0)
            throw std::invalid_argument("forward: input " + std::to_string(H) + "x" + std::to_string(W) +
                                        " not divisible by the encoder stride " +
                                        std::to_string(kEncoderStride));

        ForwardResult<T> out;
        switch (cfg.strategy) {
            case FusionStrategy::P2CNet:
            case FusionStrategy::FeaturesFusion: {
                auto sat_f = sat_.encoder.forward(bind, sat, training);
                Value<T> sat_aspp = sat_.aspp.forward(bind, sat_f.s4, training);
                Value<T> sat_low = sat_.low_reduce.forward(bind, sat_f.s1, training);
                out.m_sat = sigmoid(sat_.decoder.forward(bind, sat_aspp, sat_low, sat, H, W, training));

                Value<T> y = par_.encoder.stem_pool(bind, partial, training);
                Value<T> sat_stage[4] = {sat_f.s1, sat_f.s2, sat_f.s3, sat_f.s4};
                Value<T> p1;
                for (int s = 0; s < 4; ++s) {
                    y = par_.encoder.run_stage(bind, y, s, training);
                    y = enc_fuse_[static_cast<std::size_t>(s)].forward(bind, sat_stage[s], y, training);
                    if (s == 0) p1 = y;
                }
                Value<T> par_aspp = par_.aspp.forward(bind, y, training);
                if (dec_fuse_aspp_) par_aspp = dec_fuse_aspp_->forward(bind, sat_aspp, par_aspp, training);
                Value<T> par_low = par_.low_reduce.forward(bind, p1, training);
                if (dec_fuse_low_) par_low = dec_fuse_low_->forward(bind, sat_low, par_low, training);
                out.m_par = sigmoid(par_.decoder.forward(bind, par_aspp, par_low, concat(partial, sat, 1), H, W, training));
                break;
            }
            case FusionStrategy::InputsFusion: {
                Value<T> x = concat(sat, partial, 1);
                out.m_par = sigmoid(trunk_.forward_logits(bind, x, training));
                break;
            }
            case FusionStrategy::OutputsAugmentation: {
                out.m_par = sigmoid(trunk_.forward_logits(bind, sat, training));
                break;
            }
            case FusionStrategy::OutputsFusion: {
                Value<T> logits = trunk_.forward_logits(bind, sat, training);
                Value<T> a = relu(of_pred_.forward(bind, logits));
                Value<T> b = relu(of_par_.forward(bind, partial));
                out.m_par = sigmoid(of_merge_.forward(bind, concat(a, b, 1)));
                break;
            }
        }
        return out;
    }

    // single-sample eval-mode inference; no gradients, no stat updates
    NetworkOutput<T> predict(const Tensor<T>& sat_chw, const Tensor<T>& partial_hw1) {
        Shape s3 = sat_chw.shape();
        Shape s1 = partial_hw1.shape();
        if (s3.size() != 3 || s1.size() != 3)
            throw std::invalid_argument("predict: expected (3,H,W) and (1,H,W)");
        Tape<T> tape;
        Binder<T> bind(tape, store, /*with_grad=*/false);
        auto vs = make_leaf(tape, sat_chw.reshaped({1, s3[0], s3[1], s3[2]}));
        auto vp = make_leaf(tape, partial_hw1.reshaped({1, s1[0], s1[1], s1[2]}));
        auto res = forward(bind, vs, vp, /*training=*/false);

        NetworkOutput<T> out;
        out.m_par = res.m_par.val().reshaped({1, s3[1], s3[2]});
        if (res.m_sat.valid()) {
            out.has_sat = true;
            out.m_sat = res.m_sat.val().reshaped({1, s3[1], s3[2]});
        }
        if (cfg.strategy == FusionStrategy::OutputsAugmentation) {
            // union of binarized trunk output and the partial map
            out.final = out.m_par;
            for (std::size_t i = 0; i < out.final.numel(); ++i)
                if (partial_hw1[i] > T(0.5)) out.final[i] = T(1);
        } else {
            out.final = out.m_par;
        }
        return out;
    }

private:
    DeepLabBranch<T> sat_, par_, trunk_;
    std::vector<FusionModule<T>> enc_fuse_;
    std::optional<FusionModule<T>> dec_fuse_aspp_;
    std::optional<FusionModule<T>> dec_fuse_low_;
    Conv2dLayer<T> of_pred_, of_par_, of_merge_;
};

inline Raster binarize(const Tensor<float>& map, double threshold = kBinarizeThreshold) {
    const Shape& s = map.shape();
    int h = s[s.size() - 2], w = s[s.size() - 1];
    Raster r(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            r.at(y, x) = map[static_cast<std::size_t>(y) * w + x] > threshold ? 1 : 0;
    return r;
}

} // namespace p2c
