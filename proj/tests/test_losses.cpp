#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_util.hpp"
#include "p2c/losses.hpp"

using namespace p2c;
using p2c::testutil::max_grad_rel_err;

namespace {
Rng& rng() {
    static Rng r(4242);
    return r;
}
} // namespace

TEST_CASE("bce: analytic reference points") {
    // M = 0.5 everywhere -> ln 2 regardless of the target
    Tensor<double> half({1, 4, 4}, 0.5);
    Tensor<double> any({1, 4, 4}, 0.0);
    any[3] = 1;
    any[7] = 1;
    CHECK(bce_loss_eval(half, any) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // single pixel, I = 1, M = 0.25 -> -ln 0.25
    Tensor<double> m1({1, 1, 1}, 0.25), i1({1, 1, 1}, 1.0);
    CHECK(bce_loss_eval(m1, i1) == doctest::Approx(-std::log(0.25)).epsilon(1e-12));

    // perfect prediction is ~0 after clamping
    Tensor<double> perfect = any;
    CHECK(bce_loss_eval(perfect, any) <= -std::log(1.0 - 1e-7) + 1e-12);

    Tensor<double> wrong_shape({1, 2, 2}, 0.5);
    CHECK_THROWS(bce_loss_eval(wrong_shape, any));
}

TEST_CASE("dice: identity, disjoint and degenerate cases") {
    double s = 1.0;
    Tensor<double> m({1, 4, 4}, 0.0), t({1, 4, 4}, 0.0);
    for (int i = 0; i < 5; ++i) { m[i] = 1; t[i] = 1; }
    CHECK(dice_loss_eval(m, t, s) == doctest::Approx(0.0).epsilon(1e-12)); // 1 - (2k+s)/(2k+s)

    Tensor<double> dm({1, 4, 4}, 0.0), dt({1, 4, 4}, 0.0);
    for (int i = 0; i < 4; ++i) dm[i] = 1;
    for (int i = 4; i < 8; ++i) dt[i] = 1;
    CHECK(dice_loss_eval(dm, dt, s) == doctest::Approx(1.0 - s / (8 + s)).epsilon(1e-12));

    Tensor<double> z({1, 4, 4}, 0.0);
    CHECK(dice_loss_eval(z, z, s) == doctest::Approx(0.0).epsilon(1e-12)); // smoothing-forced 1 - s/s

    CHECK_THROWS(dice_loss_eval(m, t, 0.0));
}

TEST_CASE("mp loss: restriction to the missing part") {
    Tensor<double> ic({1, 3, 3}, 0.0), ip({1, 3, 3}, 0.0);
    ic[0] = ic[4] = ic[8] = 1;
    ip[0] = ip[4] = 1; // one missing pixel at index 8

    SUBCASE("I_P = I_C gives zero") {
        Tensor<double> m = Tensor<double>::rand_uniform({1, 3, 3}, rng(), 0.1, 0.9);
        CHECK(mp_loss_eval(m, ic, ic) == 0.0);
    }
    SUBCASE("one missing pixel with M = 0.5 gives ln 2") {
        Tensor<double> m({1, 3, 3}, 0.123);
        m[8] = 0.5;
        CHECK(mp_loss_eval(m, ic, ip) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("invariant to values outside the missing set") {
        Tensor<double> m1 = Tensor<double>::rand_uniform({1, 3, 3}, rng(), 0.1, 0.9);
        Tensor<double> m2 = Tensor<double>::rand_uniform({1, 3, 3}, rng(), 0.1, 0.9);
        m2[8] = m1[8];
        CHECK(mp_loss_eval(m1, ic, ip) == doctest::Approx(mp_loss_eval(m2, ic, ip)).epsilon(1e-12));
    }
    SUBCASE("all-zero partial covers every road pixel (zero-partial mode)") {
        Tensor<double> zero({1, 3, 3}, 0.0);
        Tensor<double> m({1, 3, 3}, 0.5);
        CHECK(mp_loss_eval(m, ic, zero) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("subset violation is an error") {
        Tensor<double> bad = ip;
        bad[1] = 1; // not in I_C
        Tensor<double> m({1, 3, 3}, 0.5);
        CHECK_THROWS(mp_loss_eval(m, ic, bad));
    }
    SUBCASE("mp equals positive-class bce on the missing set") {
        // enumerated 8x8 toy: MP == mean over missing pixels of -log M
        Tensor<double> c8({1, 8, 8}, 0.0), p8({1, 8, 8}, 0.0);
        Rng r(31);
        for (std::size_t i = 0; i < 64; ++i)
            if (r.bernoulli(0.3)) c8[i] = 1;
        for (std::size_t i = 0; i < 64; ++i)
            if (c8[i] == 1 && r.bernoulli(0.5)) p8[i] = 1;
        Tensor<double> m = Tensor<double>::rand_uniform({1, 8, 8}, r, 0.05, 0.95);
        double manual = 0;
        int count = 0;
        for (std::size_t i = 0; i < 64; ++i)
            if (c8[i] == 1 && p8[i] == 0) { manual -= std::log(m[i]); ++count; }
        if (count) manual /= count;
        CHECK(mp_loss_eval(m, c8, p8) == doctest::Approx(manual).epsilon(1e-12));
    }
}

TEST_CASE("total loss strategies") {
    Rng r(8);
    Tensor<double> ms = Tensor<double>::rand_uniform({1, 8, 8}, r, 0.1, 0.9);
    Tensor<double> mp = Tensor<double>::rand_uniform({1, 8, 8}, r, 0.1, 0.9);
    Tensor<double> ic({1, 8, 8}, 0.0), ip({1, 8, 8}, 0.0);
    for (std::size_t i = 0; i < 64; i += 5) ic[i] = 1;
    for (std::size_t i = 0; i < 64; i += 10) ip[i] = 1;

    auto total_for = [&](MpStrategy strat, double lambda) {
        Tape<double> t;
        LossConfig cfg;
        cfg.mp_strategy = strat;
        cfg.lambda = lambda;
        auto terms = total_loss(make_leaf(t, ms), make_leaf(t, mp), make_leaf(t, ic),
                                make_leaf(t, ip), cfg);
        return std::pair<double, LossTerms<double>>(terms.total.val().item(), terms);
    };

    // lambda = 0: all strategies agree with the four-term sum
    double base = total_for(MpStrategy::Off, 0).first;
    for (auto strat : {MpStrategy::Sat, MpStrategy::Par, MpStrategy::Both})
        CHECK(total_for(strat, 0).first == doctest::Approx(base).epsilon(1e-12));

    // sat strategy decomposes into the four branch terms plus lambda * MP(sat)
    auto [sat_total, sat_terms] = total_for(MpStrategy::Sat, 2.5);
    CHECK(sat_total == doctest::Approx(sat_terms.s_bce + sat_terms.s_dice + sat_terms.p_bce +
                                       sat_terms.p_dice + 2.5 * sat_terms.s_mp).epsilon(1e-12));
    CHECK(sat_terms.s_mp == doctest::Approx(mp_loss_eval(ms, ic, ip)).epsilon(1e-12));

    // both = sat + lambda * mp(M_P) on the same toy
    double both = total_for(MpStrategy::Both, 1.0).first;
    double sat1 = total_for(MpStrategy::Sat, 1.0).first;
    CHECK(both == doctest::Approx(sat1 + mp_loss_eval(mp, ic, ip)).epsilon(1e-10));

    // empty missing part: sat == off
    {
        Tape<double> t;
        LossConfig cfg;
        cfg.mp_strategy = MpStrategy::Sat;
        cfg.lambda = 7;
        auto terms = total_loss(make_leaf(t, ms), make_leaf(t, mp), make_leaf(t, ic),
                                make_leaf(t, ic), cfg);
        // partial == complete makes the MP term exactly zero: sat == off
        Tape<double> t2;
        cfg.mp_strategy = MpStrategy::Off;
        auto off_terms = total_loss(make_leaf(t2, ms), make_leaf(t2, mp), make_leaf(t2, ic),
                                    make_leaf(t2, ic), cfg);
        CHECK(terms.total.val().item() == doctest::Approx(off_terms.total.val().item()).epsilon(1e-12));
    }
}

TEST_CASE("loss gradients match finite differences") {
    Rng r(99);
    Tensor<double> ic({1, 4, 4}, 0.0), ip({1, 4, 4}, 0.0);
    ic[1] = ic[5] = ic[9] = ic[13] = 1;
    ip[1] = ip[5] = 1;
    Tensor<double> m = Tensor<double>::rand_uniform({1, 4, 4}, r, 0.1, 0.9);

    auto bce_fn = [&ic](Tape<double>& t, std::vector<Value<double>>& v) {
        return bce_loss(v[0], make_leaf(t, ic));
    };
    CHECK(max_grad_rel_err<double>(bce_fn, {m}, 1e-6) < 1e-4);

    auto dice_fn = [&ic](Tape<double>& t, std::vector<Value<double>>& v) {
        return dice_loss(v[0], make_leaf(t, ic), 1.0);
    };
    CHECK(max_grad_rel_err<double>(dice_fn, {m}, 1e-6) < 1e-4);

    auto mp_fn = [&](Tape<double>& t, std::vector<Value<double>>& v) {
        return mp_loss(v[0], make_leaf(t, ic), make_leaf(t, ip));
    };
    CHECK(max_grad_rel_err<double>(mp_fn, {m}, 1e-6) < 1e-4);

    auto total_fn = [&](Tape<double>& t, std::vector<Value<double>>& v) {
        LossConfig cfg;
        cfg.mp_strategy = MpStrategy::Both;
        cfg.lambda = 3.0;
        return total_loss(v[0], v[1], make_leaf(t, ic), make_leaf(t, ip), cfg).total;
    };
    Tensor<double> m2 = Tensor<double>::rand_uniform({1, 4, 4}, r, 0.1, 0.9);
    CHECK(max_grad_rel_err<double>(total_fn, {m, m2}, 1e-6) < 1e-4);
}

TEST_CASE("losses are nonnegative, dice below one") {
    Rng r(123);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<double> m = Tensor<double>::rand_uniform({1, 6, 6}, r, 0.01, 0.99);
        Tensor<double> ic({1, 6, 6}, 0.0), ip({1, 6, 6}, 0.0);
        for (std::size_t i = 0; i < 36; ++i)
            if (r.bernoulli(0.3)) ic[i] = 1;
        for (std::size_t i = 0; i < 36; ++i)
            if (ic[i] == 1 && r.bernoulli(0.5)) ip[i] = 1;
        CHECK(bce_loss_eval(m, ic) >= 0.0);
        double d = dice_loss_eval(m, ic, 1.0);
        CHECK(d >= 0.0);
        CHECK(d < 1.0);
        CHECK(mp_loss_eval(m, ic, ip) >= 0.0);
    }
}
