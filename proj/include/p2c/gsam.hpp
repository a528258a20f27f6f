#pragma once

#include <stdexcept>
#include <string>

#include "p2c/nn.hpp"

namespace p2c {

// Gated self-attention fusion of the satellite and partial feature branches.
//
//   affinity      A[j,i] = softmax_i(F^i . F^j)             (C x C per sample)
//   fusion        A_fuse = A_S (*) A_P, no renormalization
//   enhancement   F'^j   = beta * sum_i A_fuse[j,i] F^i + F^j
//   gate          softmax over the two conv-block outputs, complementary
//                 per (channel, pixel); F_fuse = F_S'.g0 + F_P'.g1
//
// Affinity storage is C x C by construction, never HW x HW.

enum class GsamVariant { Full, GateOnly, GateExist, AttentionExist };

inline GsamVariant gsam_variant_from_string(const std::string& s) {
    if (s == "full") return GsamVariant::Full;
    if (s == "gate_only") return GsamVariant::GateOnly;
    if (s == "gate_exist") return GsamVariant::GateExist;
    if (s == "attention_exist") return GsamVariant::AttentionExist;
    throw std::invalid_argument("unknown gsam variant: " + s);
}

inline std::string to_string(GsamVariant v) {
    switch (v) {
        case GsamVariant::Full: return "full";
        case GsamVariant::GateOnly: return "gate_only";
        case GsamVariant::GateExist: return "gate_exist";
        case GsamVariant::AttentionExist: return "attention_exist";
    }
    return "?";
}

// F: (B,C,H,W) -> row-stochastic (B,C,C)
template <typename T>
Value<T> channel_affinity(Value<T> f) {
    const Shape& s = f.shape();
    if (s.size() != 4) throw std::invalid_argument("channel_affinity: (B,C,H,W) required");
    int B = s[0], C = s[1];
    int hw = s[2] * s[3];
    Value<T> flat = reshape(f, {B, C, hw});
    Value<T> logits = bmm(flat, flat, /*transpose_b=*/true); // (B,C,C), [j,i] = F^j . F^i
    return softmax(logits, 2);
}

template <typename T>
Value<T> fuse_affinities(Value<T> a_s, Value<T> a_p) {
    if (a_s.shape() != a_p.shape())
        throw std::invalid_argument("fuse_affinities: shape mismatch");
    return mul(a_s, a_p);
}

// F'(j) = beta * sum_i A[j,i] F(i) + F(j); beta is a scalar parameter
template <typename T>
Value<T> attention_enhance(Value<T> f, Value<T> a_fuse, Value<T> beta) {
    const Shape& s = f.shape();
    int B = s[0], C = s[1], H = s[2], W = s[3];
    if (a_fuse.shape() != Shape{B, C, C})
        throw std::invalid_argument("attention_enhance: affinity must be (B,C,C)");
    Value<T> flat = reshape(f, {B, C, H * W});
    Value<T> mixed = bmm(a_fuse, flat); // row j mixes input channels i
    return add(mul(beta, reshape(mixed, {B, C, H, W})), f);
}

template <typename T>
struct GsamModule {
    int beta_s = -1, beta_p = -1;
    ConvBlock<T> conv_s, conv_p;
    GsamVariant variant = GsamVariant::Full;
    int channels = 0;

    static GsamModule make(ParamStore<T>& store, const std::string& name, int channels,
                           GsamVariant variant, NormKind nk, Rng& rng) {
        GsamModule m;
        m.variant = variant;
        m.channels = channels;
        m.beta_s = store.add(name + ".beta_s", Tensor<T>({1}, T(0)));
        m.beta_p = store.add(name + ".beta_p", Tensor<T>({1}, T(0)));
        int gate_out = variant == GsamVariant::GateExist ? 1 : channels;
        m.conv_s = ConvBlock<T>::make(store, name + ".gate_s", 2 * channels, gate_out, 3,
                                      {1, 1, 1}, nk, rng);
        m.conv_p = ConvBlock<T>::make(store, name + ".gate_p", 2 * channels, gate_out, 3,
                                      {1, 1, 1}, nk, rng);
        return m;
    }

    // GateExist changes parameter shapes, so it is fixed at build time.
    void set_variant(GsamVariant v) {
        bool was_exist = variant == GsamVariant::GateExist;
        bool is_exist = v == GsamVariant::GateExist;
        if (was_exist != is_exist)
            throw std::invalid_argument("gsam: cannot switch gate_exist after build");
        variant = v;
    }

    // softmaxed gate pair (B,2,gc,H,W); slices sum to 1 per (channel, pixel)
    Value<T> gate_values(Binder<T>& bind, Value<T> fs_e, Value<T> fp_e, bool training) const {
        const Shape& s = fs_e.shape();
        int B = s[0], H = s[2], W = s[3];
        Value<T> cat = concat(fs_e, fp_e, 1); // (B,2C,H,W)
        Value<T> g_s = conv_s.forward(bind, cat, training);
        Value<T> g_p = conv_p.forward(bind, cat, training);
        int gc = variant == GsamVariant::GateExist ? 1 : channels;
        Value<T> stacked = concat(reshape(g_s, {B, 1, gc, H, W}), reshape(g_p, {B, 1, gc, H, W}), 1);
        return softmax(stacked, 1);
    }

    Value<T> forward(Binder<T>& bind, Value<T> f_s, Value<T> f_p, bool training) const {
        if (f_s.shape() != f_p.shape())
            throw std::invalid_argument("gsam: branch feature shapes differ");
        const Shape& s = f_s.shape();
        int B = s[0], C = s[1], H = s[2], W = s[3];
        if (C != channels) throw std::invalid_argument("gsam: channel count mismatch");

        Value<T> fs_e = f_s, fp_e = f_p;
        if (variant == GsamVariant::Full || variant == GsamVariant::AttentionExist) {
            Value<T> a_s = channel_affinity(f_s);
            Value<T> a_p = channel_affinity(f_p);
            if (variant == GsamVariant::Full) {
                Value<T> a_fuse = fuse_affinities(a_s, a_p);
                fs_e = attention_enhance(f_s, a_fuse, bind(beta_s));
                fp_e = attention_enhance(f_p, a_fuse, bind(beta_p));
            } else {
                fs_e = attention_enhance(f_s, a_s, bind(beta_s));
                fp_e = attention_enhance(f_p, a_p, bind(beta_p));
            }
        }

        Value<T> gate = gate_values(bind, fs_e, fp_e, training);
        int gc = variant == GsamVariant::GateExist ? 1 : C;
        Value<T> g0 = reshape(slice(gate, 1, 0, 1), {B, gc, H, W});
        Value<T> g1 = reshape(slice(gate, 1, 1, 1), {B, gc, H, W});
        if (variant == GsamVariant::GateExist)
            return add(mul_broadcast_channel(fs_e, g0), mul_broadcast_channel(fp_e, g1));
        return add(mul(fs_e, g0), mul(fp_e, g1));
    }
};

// ---- plain-tensor wrappers (single sample, C x H x W) ----

template <typename T>
Tensor<T> channel_affinity_eval(const Tensor<T>& f_chw) {
    Tape<T> tape;
    Shape s = f_chw.shape();
    if (s.size() != 3) throw std::invalid_argument("channel_affinity_eval: (C,H,W) required");
    auto f = make_leaf(tape, f_chw.reshaped({1, s[0], s[1], s[2]}));
    Value<T> a = channel_affinity(f);
    return a.val().reshaped({s[0], s[0]});
}

template <typename T>
Tensor<T> fuse_affinities_eval(const Tensor<T>& a_s, const Tensor<T>& a_p) {
    if (!a_s.same_shape(a_p)) throw std::invalid_argument("fuse_affinities_eval: shape mismatch");
    Tensor<T> out(a_s.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a_s[i] * a_p[i];
    return out;
}

template <typename T>
Tensor<T> attention_enhance_eval(const Tensor<T>& f_chw, const Tensor<T>& a_fuse, T beta) {
    Tape<T> tape;
    Shape s = f_chw.shape();
    auto f = make_leaf(tape, f_chw.reshaped({1, s[0], s[1], s[2]}));
    auto a = make_leaf(tape, a_fuse.reshaped({1, s[0], s[0]}));
    auto b = make_leaf(tape, Tensor<T>({1}, beta));
    Value<T> out = attention_enhance(f, a, b);
    return out.val().reshaped(s);
}

} // namespace p2c
