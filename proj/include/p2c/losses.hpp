#pragma once

#include <stdexcept>
#include <string>

#include "p2c/autograd.hpp"

namespace p2c {

enum class MpStrategy { Sat, Par, Both, Off };

inline MpStrategy mp_strategy_from_string(const std::string& s) {
    if (s == "sat") return MpStrategy::Sat;
    if (s == "par") return MpStrategy::Par;
    if (s == "both") return MpStrategy::Both;
    if (s == "off") return MpStrategy::Off;
    throw std::invalid_argument("unknown mp strategy: " + s);
}

inline std::string to_string(MpStrategy s) {
    switch (s) {
        case MpStrategy::Sat: return "sat";
        case MpStrategy::Par: return "par";
        case MpStrategy::Both: return "both";
        case MpStrategy::Off: return "off";
    }
    return "?";
}

struct LossConfig {
    double lambda = 30.0;     // MP weight; the Sat strategy peaks here
    double dice_smooth = 1.0;
    MpStrategy mp_strategy = MpStrategy::Sat;
};

inline constexpr double kPredClampEps = 1e-7;

// mean over all pixels of -(I log M + (1-I) log(1-M)); M clamped to
// [eps, 1-eps] before the logs
template <typename T>
Value<T> bce_loss(Value<T> m, Value<T> truth) {
    if (m.shape() != truth.shape())
        throw std::invalid_argument("bce_loss: shape mismatch " + shape_str(m.shape()) + " vs " +
                                    shape_str(truth.shape()));
    T eps = static_cast<T>(kPredClampEps);
    Value<T> mc = clamp(m, eps, T(1) - eps);
    Value<T> pos = mul(truth, vlog(mc));
    Value<T> neg_mask = add_const(neg(truth), T(1));          // 1 - I
    Value<T> neg_term = mul(neg_mask, vlog(add_const(neg(mc), T(1)))); // (1-I) log(1-M)
    return neg(mean_all(add(pos, neg_term)));
}

// 1 - (2 sum(M.I) + s) / (sum M + sum I + s); soft intersection
template <typename T>
Value<T> dice_loss(Value<T> m, Value<T> truth, T smooth) {
    if (m.shape() != truth.shape()) throw std::invalid_argument("dice_loss: shape mismatch");
    if (!(smooth > T(0))) throw std::invalid_argument("dice_loss: smooth must be > 0");
    Value<T> inter = sum_all(mul(m, truth));
    Value<T> denom = add_const(add(sum_all(m), sum_all(truth)), smooth);
    Value<T> num = add_const(scale(inter, T(2)), smooth);
    return add_const(neg(div(num, denom)), T(1));
}

// positive-class BCE restricted to the missing part I_C - I_P; zero when the
// missing set is empty. I_P must be a subset of I_C.
template <typename T>
Value<T> mp_loss(Value<T> m_sat, Value<T> complete, Value<T> partial) {
    if (m_sat.shape() != complete.shape() || m_sat.shape() != partial.shape())
        throw std::invalid_argument("mp_loss: shape mismatch");
    const Tensor<T>& ic = complete.val();
    const Tensor<T>& ip = partial.val();
    double count = 0;
    for (std::size_t i = 0; i < ic.numel(); ++i) {
        if (ip[i] > ic[i])
            throw std::invalid_argument("mp_loss: partial map is not a subset of the complete map");
        if (ic[i] - ip[i] > T(0.5)) count += 1;
    }
    Tape<T>& tape = *m_sat.tape;
    if (count == 0) return make_constant(tape, T(0));
    T eps = static_cast<T>(kPredClampEps);
    Value<T> mask = sub(complete, partial); // I_MP, constant w.r.t. the prediction
    Value<T> mc = clamp(m_sat, eps, T(1) - eps);
    Value<T> summed = sum_all(mul(mask, vlog(mc)));
    return neg(scale(summed, static_cast<T>(1.0 / count)));
}

template <typename T>
struct LossTerms {
    Value<T> total;
    T s_bce = 0, s_dice = 0, s_mp = 0;
    T p_bce = 0, p_dice = 0, p_mp = 0;
};

// Branch losses plus the MP term routed per strategy. m_sat may be invalid
// for single-trunk networks; the trunk prediction is passed as m_par.
template <typename T>
LossTerms<T> total_loss(Value<T> m_sat, Value<T> m_par, Value<T> complete, Value<T> partial,
                        const LossConfig& cfg) {
    Tape<T>& tape = *m_par.tape;
    T smooth = static_cast<T>(cfg.dice_smooth);
    T lam = static_cast<T>(cfg.lambda);

    LossTerms<T> terms;
    Value<T> total = make_constant(tape, T(0));

    if (m_sat.valid()) {
        Value<T> sb = bce_loss(m_sat, complete);
        Value<T> sd = dice_loss(m_sat, complete, smooth);
        terms.s_bce = sb.val().item();
        terms.s_dice = sd.val().item();
        total = add(add(total, sb), sd);
    }
    Value<T> pb = bce_loss(m_par, complete);
    Value<T> pd = dice_loss(m_par, complete, smooth);
    terms.p_bce = pb.val().item();
    terms.p_dice = pd.val().item();
    total = add(add(total, pb), pd);

    if (!m_sat.valid()) {
        // single trunk: any enabled strategy routes one MP term to it
        if (cfg.mp_strategy != MpStrategy::Off) {
            Value<T> pmp = mp_loss(m_par, complete, partial);
            terms.p_mp = pmp.val().item();
            total = add(total, scale(pmp, lam));
        }
    } else {
        if (cfg.mp_strategy == MpStrategy::Sat || cfg.mp_strategy == MpStrategy::Both) {
            Value<T> smp = mp_loss(m_sat, complete, partial);
            terms.s_mp = smp.val().item();
            total = add(total, scale(smp, lam));
        }
        if (cfg.mp_strategy == MpStrategy::Par || cfg.mp_strategy == MpStrategy::Both) {
            Value<T> pmp = mp_loss(m_par, complete, partial);
            terms.p_mp = pmp.val().item();
            total = add(total, scale(pmp, lam));
        }
    }

    terms.total = total;
    return terms;
}

// ---- plain-tensor wrappers ----

template <typename T>
T bce_loss_eval(const Tensor<T>& m, const Tensor<T>& truth) {
    Tape<T> tape;
    return bce_loss(make_leaf(tape, m), make_leaf(tape, truth)).val().item();
}

template <typename T>
T dice_loss_eval(const Tensor<T>& m, const Tensor<T>& truth, T smooth) {
    Tape<T> tape;
    return dice_loss(make_leaf(tape, m), make_leaf(tape, truth), smooth).val().item();
}

template <typename T>
T mp_loss_eval(const Tensor<T>& m_sat, const Tensor<T>& complete, const Tensor<T>& partial) {
    Tape<T> tape;
    return mp_loss(make_leaf(tape, m_sat), make_leaf(tape, complete), make_leaf(tape, partial))
        .val().item();
}

} // namespace p2c
