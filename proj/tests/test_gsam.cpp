#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_util.hpp"
#include "p2c/gsam.hpp"

using namespace p2c;
using p2c::testutil::max_grad_rel_err;

namespace {
Rng& rng() {
    static Rng r(77);
    return r;
}

// copy conv-block parameters so both gate branches compute the same map
template <typename T>
void mirror_gate_params(ParamStore<T>& store, const GsamModule<T>& g) {
    store.value(g.conv_p.conv.weight) = store.value(g.conv_s.conv.weight);
    store.value(g.conv_p.norm.gamma) = store.value(g.conv_s.norm.gamma);
    store.value(g.conv_p.norm.beta) = store.value(g.conv_s.norm.beta);
    if (g.conv_p.norm.running_mean >= 0) {
        store.value(g.conv_p.norm.running_mean) = store.value(g.conv_s.norm.running_mean);
        store.value(g.conv_p.norm.running_var) = store.value(g.conv_s.norm.running_var);
    }
}
} // namespace

TEST_CASE("channel affinity: identical channels give the uniform matrix") {
    Tensor<double> f({2, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) f[i] = f[i + 4] = 0.3 + 0.1 * static_cast<double>(i);
    Tensor<double> a = channel_affinity_eval(f);
    for (std::size_t i = 0; i < 4; ++i) CHECK(a[i] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("channel affinity: hand-computed 2x2 case") {
    // F^1 = (1,0), F^2 = (0,0): row 1 = softmax(1,0), row 2 = softmax(0,0)
    Tensor<double> f({2, 1, 2});
    f[0] = 1; f[1] = 0; f[2] = 0; f[3] = 0;
    Tensor<double> a = channel_affinity_eval(f);
    double e = std::exp(1.0);
    CHECK(a.at2(0, 0) == doctest::Approx(e / (e + 1)).epsilon(1e-9)); // 0.7311
    CHECK(a.at2(0, 1) == doctest::Approx(1 / (e + 1)).epsilon(1e-9)); // 0.2689
    CHECK(a.at2(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(a.at2(1, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("channel affinity: rows sum to one, all-zero input is uniform") {
    Tensor<double> f = Tensor<double>::randn({6, 4, 5}, rng(), 2.0);
    Tensor<double> a = channel_affinity_eval(f);
    for (int r = 0; r < 6; ++r) {
        double s = 0;
        for (int c = 0; c < 6; ++c) s += a.at2(r, c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        for (int c = 0; c < 6; ++c) CHECK(a.at2(r, c) > 0.0);
    }
    Tensor<double> z({3, 2, 2}, 0.0);
    Tensor<double> az = channel_affinity_eval(z);
    for (std::size_t i = 0; i < az.numel(); ++i)
        CHECK(az[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("fuse_affinities: element-wise product, no renormalization") {
    Tensor<double> u({2, 2}, 0.5);
    Tensor<double> fused = fuse_affinities_eval(u, u);
    for (std::size_t i = 0; i < 4; ++i) CHECK(fused[i] == doctest::Approx(0.25));

    Tensor<double> ones({2, 2}, 1.0);
    Tensor<double> a = Tensor<double>::rand_uniform({2, 2}, rng());
    CHECK(fuse_affinities_eval(a, ones).vec() == a.vec());

    // row-stochastic operands: fused entries never exceed either factor
    Tensor<double> f1 = channel_affinity_eval(Tensor<double>::randn({4, 3, 3}, rng()));
    Tensor<double> f2 = channel_affinity_eval(Tensor<double>::randn({4, 3, 3}, rng()));
    Tensor<double> ff = fuse_affinities_eval(f1, f2);
    for (std::size_t i = 0; i < ff.numel(); ++i) {
        CHECK(ff[i] <= f1[i]);
        CHECK(ff[i] <= f2[i]);
        CHECK(ff[i] > 0.0);
        CHECK(ff[i] < 1.0);
    }

    Tensor<double> bad({3, 3}, 0.1);
    CHECK_THROWS(fuse_affinities_eval(a, bad));
}

TEST_CASE("attention_enhance: beta = 0 is the exact identity") {
    Tensor<double> f = Tensor<double>::randn({3, 4, 4}, rng());
    Tensor<double> a = channel_affinity_eval(f);
    Tensor<double> out = attention_enhance_eval(f, a, 0.0);
    CHECK(out.vec() == f.vec()); // bitwise

    // beta = 1 with the identity affinity doubles the features
    Tensor<double> eye({3, 3}, 0.0);
    for (int i = 0; i < 3; ++i) eye.at2(i, i) = 1.0;
    Tensor<double> twice = attention_enhance_eval(f, eye, 1.0);
    for (std::size_t i = 0; i < f.numel(); ++i)
        CHECK(twice[i] == doctest::Approx(2 * f[i]).epsilon(1e-12));
}

TEST_CASE("attention_enhance: gradient w.r.t. beta matches finite differences") {
    Tensor<double> f = Tensor<double>::randn({1, 4, 3, 3}, rng());
    Tensor<double> beta = Tensor<double>::scalar(0.37);
    auto fn = [](Tape<double>&, std::vector<Value<double>>& v) {
        Value<double> a = channel_affinity(v[0]);
        Value<double> y = attention_enhance(v[0], a, v[1]);
        return sum_all(mul(y, y));
    };
    CHECK(max_grad_rel_err<double>(fn, {f, beta}, 1e-5) < 1e-4);
}

TEST_CASE("gate: symmetric inputs give 0.5 everywhere and F_fuse = F_S'") {
    ParamStore<double> store;
    Rng r(5);
    auto g = GsamModule<double>::make(store, "g", 3, GsamVariant::GateOnly, NormKind::Group, r);
    mirror_gate_params(store, g);

    Tensor<double> f = Tensor<double>::randn({2, 3, 4, 4}, rng());
    Tape<double> tape;
    Binder<double> bind(tape, store);
    auto vf = make_leaf(tape, f);
    auto gate = g.gate_values(bind, vf, vf, false);
    for (std::size_t i = 0; i < gate.val().numel(); ++i)
        CHECK(gate.val()[i] == doctest::Approx(0.5).epsilon(1e-12));

    auto fused = g.forward(bind, vf, vf, false);
    for (std::size_t i = 0; i < f.numel(); ++i)
        CHECK(fused.val()[i] == doctest::Approx(f[i]).epsilon(1e-9));
}

TEST_CASE("gate complementarity holds for every variant") {
    for (auto variant : {GsamVariant::Full, GsamVariant::GateOnly, GsamVariant::GateExist,
                         GsamVariant::AttentionExist}) {
        ParamStore<double> store;
        Rng r(11);
        auto g = GsamModule<double>::make(store, "g", 4, variant, NormKind::Group, r);
        Tensor<double> fs = Tensor<double>::randn({2, 4, 3, 3}, rng());
        Tensor<double> fp = Tensor<double>::randn({2, 4, 3, 3}, rng());
        Tape<double> tape;
        Binder<double> bind(tape, store);
        auto gate = g.gate_values(bind, make_leaf(tape, fs), make_leaf(tape, fp), true);
        const auto& gv = gate.val();
        int gc = variant == GsamVariant::GateExist ? 1 : 4;
        CHECK(gate.shape() == Shape{2, 2, gc, 3, 3});
        std::size_t plane = static_cast<std::size_t>(gc) * 9;
        for (int b = 0; b < 2; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
                double s0 = gv[static_cast<std::size_t>(b) * 2 * plane + i];
                double s1 = gv[static_cast<std::size_t>(b) * 2 * plane + plane + i];
                CHECK(s0 + s1 == doctest::Approx(1.0).epsilon(1e-6));
            }
    }
}

TEST_CASE("gate_fuse end-to-end gradient vs finite differences") {
    ParamStore<double> store;
    Rng r(3);
    auto g = GsamModule<double>::make(store, "g", 4, GsamVariant::Full, NormKind::Group, r);
    store.value(g.beta_s)[0] = 0.2;
    store.value(g.beta_p)[0] = -0.1;
    Tensor<double> fs = Tensor<double>::randn({2, 4, 3, 3}, rng());
    Tensor<double> fp = Tensor<double>::randn({2, 4, 3, 3}, rng());

    auto loss_now = [&]() -> double {
        Tape<double> tape;
        Binder<double> bind(tape, store);
        auto out = g.forward(bind, make_leaf(tape, fs), make_leaf(tape, fp), true);
        return sum_all(mul(out, out)).val().item();
    };
    store.zero_grad();
    {
        Tape<double> tape;
        Binder<double> bind(tape, store);
        auto out = g.forward(bind, make_leaf(tape, fs), make_leaf(tape, fp), true);
        auto l = sum_all(mul(out, out));
        tape.backward(l.idx);
        bind.harvest();
    }
    double max_rel = 0;
    for (int pid = 0; pid < store.size(); ++pid) {
        if (!store.entry(pid).trainable) continue;
        auto& v = store.value(pid);
        for (std::size_t j = 0; j < v.numel(); j += 5) {
            double h = 1e-5, orig = v[j];
            v[j] = orig + h;
            double up = loss_now();
            v[j] = orig - h;
            double dn = loss_now();
            v[j] = orig;
            double fd = (up - dn) / (2 * h);
            double an = store.grad(pid)[j];
            double denom = std::max(1e-8, std::max(std::fabs(fd), std::fabs(an)));
            max_rel = std::max(max_rel, std::fabs(fd - an) / denom);
        }
    }
    CHECK(max_rel < 1e-3);
}

TEST_CASE("gsam_forward: full at init behaves exactly like gate_only") {
    ParamStore<float> store;
    Rng r(9);
    auto g = GsamModule<float>::make(store, "g", 4, GsamVariant::Full, NormKind::Group, r);
    REQUIRE(store.value(g.beta_s)[0] == 0.0f); // "two learnable weights initialized as 0"
    REQUIRE(store.value(g.beta_p)[0] == 0.0f);

    Tensor<float> fs = Tensor<float>::randn({1, 4, 5, 5}, rng());
    Tensor<float> fp = Tensor<float>::randn({1, 4, 5, 5}, rng());
    Tape<float> t1;
    Binder<float> b1(t1, store);
    auto full = g.forward(b1, make_leaf(t1, fs), make_leaf(t1, fp), false);
    g.set_variant(GsamVariant::GateOnly);
    Tape<float> t2;
    Binder<float> b2(t2, store);
    auto gate_only = g.forward(b2, make_leaf(t2, fs), make_leaf(t2, fp), false);
    CHECK(full.val().vec() == gate_only.val().vec()); // bit-for-bit
}

TEST_CASE("gsam_forward: output shape equals input shape for all variants") {
    for (auto variant : {GsamVariant::Full, GsamVariant::GateOnly, GsamVariant::GateExist,
                         GsamVariant::AttentionExist}) {
        ParamStore<float> store;
        Rng r(21);
        auto g = GsamModule<float>::make(store, "g", 8, variant, NormKind::Group, r);
        Tensor<float> fs = Tensor<float>::randn({2, 8, 4, 6}, rng());
        Tensor<float> fp = Tensor<float>::randn({2, 8, 4, 6}, rng());
        Tape<float> tape;
        Binder<float> bind(tape, store);
        auto out = g.forward(bind, make_leaf(tape, fs), make_leaf(tape, fp), true);
        CHECK(out.shape() == Shape{2, 8, 4, 6});
    }
}

TEST_CASE("variant plumbing: strings and gate_exist rebuild rule") {
    CHECK(gsam_variant_from_string("full") == GsamVariant::Full);
    CHECK(gsam_variant_from_string("gate_exist") == GsamVariant::GateExist);
    CHECK_THROWS(gsam_variant_from_string("nope"));

    ParamStore<float> store;
    Rng r(2);
    auto g = GsamModule<float>::make(store, "g", 4, GsamVariant::GateExist, NormKind::Group, r);
    CHECK_THROWS(g.set_variant(GsamVariant::Full)); // parameter shapes differ
    auto g2 = GsamModule<float>::make(store, "g2", 4, GsamVariant::Full, NormKind::Group, r);
    CHECK_THROWS(g2.set_variant(GsamVariant::GateExist));
    g2.set_variant(GsamVariant::AttentionExist); // compatible switch
}

TEST_CASE("affinity storage is C x C, never HW x HW") {
    Tensor<double> f = Tensor<double>::randn({1, 3, 16, 16}, rng());
    Tape<double> tape;
    auto a = channel_affinity(make_leaf(tape, f));
    CHECK(a.shape() == Shape{1, 3, 3});
    CHECK(a.val().numel() == 9); // not (16*16)^2
}
