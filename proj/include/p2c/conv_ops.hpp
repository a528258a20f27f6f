#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "p2c/autograd.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace p2c {

// Parallelism note: every omp loop below assigns each output element to
// exactly one thread and keeps all reductions sequential inside that thread,
// so results are bitwise identical for any thread count.

struct Conv2dSpec {
    int stride = 1;
    int pad = 0;
    int dilation = 1;
};

inline int conv_out_size(int in, int kernel, const Conv2dSpec& s) {
    return (in + 2 * s.pad - s.dilation * (kernel - 1) - 1) / s.stride + 1;
}

template <typename T>
Value<T> conv2d(Value<T> x, Value<T> w, Value<T> bias, const Conv2dSpec& spec) {
    Tape<T>& tape = *x.tape;
    const Tensor<T>& xv = x.val();
    const Tensor<T>& wv = w.val();
    if (xv.rank() != 4 || wv.rank() != 4) throw std::invalid_argument("conv2d: rank-4 required");
    const int B = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Cout = wv.dim(0), KH = wv.dim(2), KW = wv.dim(3);
    if (wv.dim(1) != Cin) throw std::invalid_argument("conv2d: channel mismatch");
    const int OH = conv_out_size(H, KH, spec);
    const int OW = conv_out_size(W, KW, spec);
    if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv2d: empty output");
    const bool has_bias = bias.valid();
    const int st = spec.stride, pd = spec.pad, dl = spec.dilation;

    Tensor<T> out({B, Cout, OH, OW});
    {
        const T* xp = xv.data();
        const T* wp = wv.data();
        const T* bp = has_bias ? bias.val().data() : nullptr;
        T* op = out.data();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
        for (int b = 0; b < B; ++b) {
            for (int oc = 0; oc < Cout; ++oc) {
                T* oplane = op + (static_cast<std::size_t>(b) * Cout + oc) * OH * OW;
                T bv = bp ? bp[oc] : T(0);
                for (int i = 0; i < OH * OW; ++i) oplane[i] = bv;
                for (int ic = 0; ic < Cin; ++ic) {
                    const T* xplane = xp + (static_cast<std::size_t>(b) * Cin + ic) * H * W;
                    const T* wk = wp + ((static_cast<std::size_t>(oc) * Cin + ic) * KH) * KW;
                    for (int ky = 0; ky < KH; ++ky) {
                        for (int kx = 0; kx < KW; ++kx) {
                            T wgt = wk[ky * KW + kx];
                            if (wgt == T(0)) continue;
                            for (int oy = 0; oy < OH; ++oy) {
                                int iy = oy * st - pd + ky * dl;
                                if (iy < 0 || iy >= H) continue;
                                const T* xrow = xplane + static_cast<std::size_t>(iy) * W;
                                T* orow = oplane + static_cast<std::size_t>(oy) * OW;
                                // valid ox range: 0 <= ox*st - pd + kx*dl < W
                                int lo = 0, off = kx * dl - pd;
                                while (lo < OW && lo * st + off < 0) ++lo;
                                int hi = OW;
                                while (hi > lo && (hi - 1) * st + off >= W) --hi;
                                for (int ox = lo; ox < hi; ++ox)
                                    orow[ox] += wgt * xrow[ox * st + off];
                            }
                        }
                    }
                }
            }
        }
    }

    bool rg = x.requires_grad() || w.requires_grad() || (has_bias && bias.requires_grad());
    int xi = x.idx, wi = w.idx, bi = has_bias ? bias.idx : -1;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, xi, wi, bi, oi, B, Cin, Cout, H, W, OH, OW, KH, KW, st, pd, dl]() {
            const Tensor<T>& g = tape.node(oi).grad;
            const T* gp = g.data();
            const Tensor<T>& xv2 = tape.node(xi).value;
            const Tensor<T>& wv2 = tape.node(wi).value;
            if (tape.node(xi).requires_grad) {
                Tensor<T>& gx = tape.grad(xi);
                T* gxp = gx.data();
                const T* wp = wv2.data();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
                for (int b = 0; b < B; ++b) {
                    for (int ic = 0; ic < Cin; ++ic) {
                        T* gxplane = gxp + (static_cast<std::size_t>(b) * Cin + ic) * H * W;
                        for (int oc = 0; oc < Cout; ++oc) {
                            const T* gplane = gp + (static_cast<std::size_t>(b) * Cout + oc) * OH * OW;
                            const T* wk = wp + ((static_cast<std::size_t>(oc) * Cin + ic) * KH) * KW;
                            for (int ky = 0; ky < KH; ++ky) {
                                for (int kx = 0; kx < KW; ++kx) {
                                    T wgt = wk[ky * KW + kx];
                                    if (wgt == T(0)) continue;
                                    for (int oy = 0; oy < OH; ++oy) {
                                        int iy = oy * st - pd + ky * dl;
                                        if (iy < 0 || iy >= H) continue;
                                        const T* grow = gplane + static_cast<std::size_t>(oy) * OW;
                                        T* gxrow = gxplane + static_cast<std::size_t>(iy) * W;
                                        int lo = 0, off = kx * dl - pd;
                                        while (lo < OW && lo * st + off < 0) ++lo;
                                        int hi = OW;
                                        while (hi > lo && (hi - 1) * st + off >= W) --hi;
                                        for (int ox = lo; ox < hi; ++ox)
                                            gxrow[ox * st + off] += wgt * grow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if (tape.node(wi).requires_grad) {
                Tensor<T>& gw = tape.grad(wi);
                T* gwp = gw.data();
                const T* xp = xv2.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
                for (int oc = 0; oc < Cout; ++oc) {
                    for (int ic = 0; ic < Cin; ++ic) {
                        for (int ky = 0; ky < KH; ++ky) {
                            for (int kx = 0; kx < KW; ++kx) {
                                T s = 0;
                                for (int b = 0; b < B; ++b) {
                                    const T* gplane = gp + (static_cast<std::size_t>(b) * Cout + oc) * OH * OW;
                                    const T* xplane = xp + (static_cast<std::size_t>(b) * Cin + ic) * H * W;
                                    for (int oy = 0; oy < OH; ++oy) {
                                        int iy = oy * st - pd + ky * dl;
                                        if (iy < 0 || iy >= H) continue;
                                        const T* grow = gplane + static_cast<std::size_t>(oy) * OW;
                                        const T* xrow = xplane + static_cast<std::size_t>(iy) * W;
                                        int lo = 0, off = kx * dl - pd;
                                        while (lo < OW && lo * st + off < 0) ++lo;
                                        int hi = OW;
                                        while (hi > lo && (hi - 1) * st + off >= W) --hi;
                                        for (int ox = lo; ox < hi; ++ox)
                                            s += grow[ox] * xrow[ox * st + off];
                                    }
                                }
                                gwp[((static_cast<std::size_t>(oc) * Cin + ic) * KH + ky) * KW + kx] += s;
                            }
                        }
                    }
                }
            }
            if (bi >= 0 && tape.node(bi).requires_grad) {
                Tensor<T>& gb = tape.grad(bi);
                for (int oc = 0; oc < Cout; ++oc) {
                    T s = 0;
                    for (int b = 0; b < B; ++b) {
                        const T* gplane = gp + (static_cast<std::size_t>(b) * Cout + oc) * OH * OW;
                        for (int i = 0; i < OH * OW; ++i) s += gplane[i];
                    }
                    gb[oc] += s;
                }
            }
        };
    }
    return {&tape, oi};
}

template <typename T>
Value<T> conv2d(Value<T> x, Value<T> w, const Conv2dSpec& spec) {
    return conv2d(x, w, Value<T>{}, spec);
}

// channel bias broadcast over (B,C,H,W)
template <typename T>
Value<T> bias_add(Value<T> x, Value<T> b) {
    Tape<T>& tape = *x.tape;
    const Tensor<T>& xv = x.val();
    const Tensor<T>& bv = b.val();
    if (xv.rank() != 4 || bv.numel() != static_cast<std::size_t>(xv.dim(1)))
        throw std::invalid_argument("bias_add: expected (B,C,H,W) + [C]");
    int B = xv.dim(0), C = xv.dim(1);
    std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor<T> out(xv.shape());
    for (int bb = 0; bb < B; ++bb)
        for (int c = 0; c < C; ++c) {
            const T* xrow = xv.data() + (static_cast<std::size_t>(bb) * C + c) * hw;
            T* orow = out.data() + (static_cast<std::size_t>(bb) * C + c) * hw;
            T add = bv[c];
            for (std::size_t i = 0; i < hw; ++i) orow[i] = xrow[i] + add;
        }
    bool rg = x.requires_grad() || b.requires_grad();
    int xi = x.idx, bi = b.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, xi, bi, oi, B, C, hw]() {
            const Tensor<T>& g = tape.node(oi).grad;
            if (tape.node(xi).requires_grad) {
                Tensor<T>& gx = tape.grad(xi);
                for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
            }
            if (tape.node(bi).requires_grad) {
                Tensor<T>& gb = tape.grad(bi);
                for (int bb = 0; bb < B; ++bb)
                    for (int c = 0; c < C; ++c) {
                        const T* grow = g.data() + (static_cast<std::size_t>(bb) * C + c) * hw;
                        T s = 0;
                        for (std::size_t i = 0; i < hw; ++i) s += grow[i];
                        gb[c] += s;
                    }
            }
        };
    }
    return {&tape, oi};
}

// 3x3 stride-2 pad-1 max pooling (ResNet stem); ties resolve to the first
// scanned index so routing is deterministic.
template <typename T>
Value<T> maxpool2d_3x3s2(Value<T> x) {
    Tape<T>& tape = *x.tape;
    const Tensor<T>& xv = x.val();
    if (xv.rank() != 4) throw std::invalid_argument("maxpool: rank-4 required");
    int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    int OH = (H + 2 - 3) / 2 + 1, OW = (W + 2 - 3) / 2 + 1;
    Tensor<T> out({B, C, OH, OW});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(out.numel());
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* xplane = xv.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
            std::size_t obase = (static_cast<std::size_t>(b) * C + c) * OH * OW;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    T best = -std::numeric_limits<T>::infinity();
                    int best_idx = 0;
                    for (int ky = 0; ky < 3; ++ky) {
                        int iy = oy * 2 - 1 + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int ix = ox * 2 - 1 + kx;
                            if (ix < 0 || ix >= W) continue;
                            T v = xplane[iy * W + ix];
                            if (v > best) { best = v; best_idx = iy * W + ix; }
                        }
                    }
                    out[obase + oy * OW + ox] = best;
                    (*argmax)[obase + oy * OW + ox] = best_idx;
                }
        }
    bool rg = x.requires_grad();
    int xi = x.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, xi, oi, argmax, B, C, H, W, OH, OW]() {
            const Tensor<T>& g = tape.node(oi).grad;
            Tensor<T>& gx = tape.grad(xi);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    std::size_t obase = (static_cast<std::size_t>(b) * C + c) * OH * OW;
                    std::size_t ibase = (static_cast<std::size_t>(b) * C + c) * H * W;
                    for (int i = 0; i < OH * OW; ++i)
                        gx[ibase + (*argmax)[obase + i]] += g[obase + i];
                }
        };
    }
    return {&tape, oi};
}

template <typename T>
Value<T> global_avg_pool(Value<T> x) {
    Tape<T>& tape = *x.tape;
    const Tensor<T>& xv = x.val();
    int B = xv.dim(0), C = xv.dim(1);
    std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor<T> out({B, C, 1, 1});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* row = xv.data() + (static_cast<std::size_t>(b) * C + c) * hw;
            T s = 0;
            for (std::size_t i = 0; i < hw; ++i) s += row[i];
            out[static_cast<std::size_t>(b) * C + c] = s / static_cast<T>(hw);
        }
    bool rg = x.requires_grad();
    int xi = x.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, xi, oi, B, C, hw]() {
            const Tensor<T>& g = tape.node(oi).grad;
            Tensor<T>& gx = tape.grad(xi);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    T gv = g[static_cast<std::size_t>(b) * C + c] / static_cast<T>(hw);
                    T* row = gx.data() + (static_cast<std::size_t>(b) * C + c) * hw;
                    for (std::size_t i = 0; i < hw; ++i) row[i] += gv;
                }
        };
    }
    return {&tape, oi};
}

// bilinear interpolation, half-pixel centers
template <typename T>
Value<T> upsample_bilinear(Value<T> x, int OH, int OW) {
    Tape<T>& tape = *x.tape;
    const Tensor<T>& xv = x.val();
    int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    struct Lerp { int i0, i1; T w0, w1; };
    auto make_axis = [](int in, int out) {
        std::vector<Lerp> m(static_cast<std::size_t>(out));
        double scale = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            double src = (o + 0.5) * scale - 0.5;
            if (src < 0) src = 0;
            int i0 = static_cast<int>(src);
            if (i0 > in - 1) i0 = in - 1;
            int i1 = i0 + 1 < in ? i0 + 1 : in - 1;
            T w1 = static_cast<T>(src - i0);
            if (i1 == i0) w1 = T(0);
            m[static_cast<std::size_t>(o)] = {i0, i1, T(1) - w1, w1};
        }
        return m;
    };
    auto ys = std::make_shared<std::vector<Lerp>>(make_axis(H, OH));
    auto xs = std::make_shared<std::vector<Lerp>>(make_axis(W, OW));

    Tensor<T> out({B, C, OH, OW});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* xplane = xv.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
            T* oplane = out.data() + (static_cast<std::size_t>(b) * C + c) * OH * OW;
            for (int oy = 0; oy < OH; ++oy) {
                const Lerp& ly = (*ys)[static_cast<std::size_t>(oy)];
                for (int ox = 0; ox < OW; ++ox) {
                    const Lerp& lx = (*xs)[static_cast<std::size_t>(ox)];
                    oplane[oy * OW + ox] =
                        ly.w0 * (lx.w0 * xplane[ly.i0 * W + lx.i0] + lx.w1 * xplane[ly.i0 * W + lx.i1]) +
                        ly.w1 * (lx.w0 * xplane[ly.i1 * W + lx.i0] + lx.w1 * xplane[ly.i1 * W + lx.i1]);
                }
            }
        }
    bool rg = x.requires_grad();
    int xi = x.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, xi, oi, ys, xs, B, C, H, W, OH, OW]() {
            const Tensor<T>& g = tape.node(oi).grad;
            Tensor<T>& gx = tape.grad(xi);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const T* gplane = g.data() + (static_cast<std::size_t>(b) * C + c) * OH * OW;
                    T* gxplane = gx.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
                    for (int oy = 0; oy < OH; ++oy) {
                        const Lerp& ly = (*ys)[static_cast<std::size_t>(oy)];
                        for (int ox = 0; ox < OW; ++ox) {
                            const Lerp& lx = (*xs)[static_cast<std::size_t>(ox)];
                            T gv = gplane[oy * OW + ox];
                            gxplane[ly.i0 * W + lx.i0] += gv * ly.w0 * lx.w0;
                            gxplane[ly.i0 * W + lx.i1] += gv * ly.w0 * lx.w1;
                            gxplane[ly.i1 * W + lx.i0] += gv * ly.w1 * lx.w0;
                            gxplane[ly.i1 * W + lx.i1] += gv * ly.w1 * lx.w1;
                        }
                    }
                }
        };
    }
    return {&tape, oi};
}

// ---- normalization ----

// Running statistics live outside the tape (in the parameter store, as
// non-trainable buffers) and are mutated in training mode.
template <typename T>
Value<T> batchnorm2d(Value<T> x, Value<T> gamma, Value<T> beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, bool training, T momentum = T(0.1), T eps = T(1e-5)) {
    Tape<T>& tape = *x.tape;
    const Tensor<T>& xv = x.val();
    int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    std::size_t plane = static_cast<std::size_t>(H) * W;
    std::size_t n_per_c = static_cast<std::size_t>(B) * plane;

    auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));
    if (training) {
        for (int c = 0; c < C; ++c) {
            T m = 0;
            for (int b = 0; b < B; ++b) {
                const T* row = xv.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) m += row[i];
            }
            m /= static_cast<T>(n_per_c);
            T v = 0;
            for (int b = 0; b < B; ++b) {
                const T* row = xv.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) { T d = row[i] - m; v += d * d; }
            }
            v /= static_cast<T>(n_per_c);
            (*mean)[static_cast<std::size_t>(c)] = m;
            (*inv_std)[static_cast<std::size_t>(c)] = T(1) / std::sqrt(v + eps);
            // unbiased variance feeds the running buffer
            T unbiased = n_per_c > 1 ? v * static_cast<T>(n_per_c) / static_cast<T>(n_per_c - 1) : v;
            running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * m;
            running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            (*mean)[static_cast<std::size_t>(c)] = running_mean[c];
            (*inv_std)[static_cast<std::size_t>(c)] = T(1) / std::sqrt(running_var[c] + eps);
        }
    }

    const Tensor<T>& gv = gamma.val();
    const Tensor<T>& bv = beta.val();
    Tensor<T> out(xv.shape());
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* row = xv.data() + (static_cast<std::size_t>(b) * C + c) * plane;
            T* orow = out.data() + (static_cast<std::size_t>(b) * C + c) * plane;
            T m = (*mean)[static_cast<std::size_t>(c)], is = (*inv_std)[static_cast<std::size_t>(c)];
            T gg = gv[c], bb2 = bv[c];
            for (std::size_t i = 0; i < plane; ++i) orow[i] = gg * (row[i] - m) * is + bb2;
        }

    bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    int xi = x.idx, gi = gamma.idx, bi = beta.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, xi, gi, bi, oi, mean, inv_std, B, C, plane, n_per_c, training]() {
            const Tensor<T>& g = tape.node(oi).grad;
            const Tensor<T>& xv2 = tape.node(xi).value;
            const Tensor<T>& gv2 = tape.node(gi).value;
            for (int c = 0; c < C; ++c) {
                T m = (*mean)[static_cast<std::size_t>(c)], is = (*inv_std)[static_cast<std::size_t>(c)];
                T sum_dy = 0, sum_dy_xhat = 0;
                for (int b = 0; b < B; ++b) {
                    const T* grow = g.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                    const T* xrow = xv2.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_dy += grow[i];
                        sum_dy_xhat += grow[i] * (xrow[i] - m) * is;
                    }
                }
                if (tape.node(gi).requires_grad) tape.grad(gi)[c] += sum_dy_xhat;
                if (tape.node(bi).requires_grad) tape.grad(bi)[c] += sum_dy;
                if (tape.node(xi).requires_grad) {
                    Tensor<T>& gx = tape.grad(xi);
                    T gg = gv2[c];
                    if (training) {
                        T inv_n = T(1) / static_cast<T>(n_per_c);
                        for (int b = 0; b < B; ++b) {
                            const T* grow = g.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                            const T* xrow = xv2.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                            T* gxrow = gx.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                            for (std::size_t i = 0; i < plane; ++i) {
                                T xhat = (xrow[i] - m) * is;
                                gxrow[i] += gg * is * (grow[i] - inv_n * sum_dy - xhat * inv_n * sum_dy_xhat);
                            }
                        }
                    } else {
                        for (int b = 0; b < B; ++b) {
                            const T* grow = g.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                            T* gxrow = gx.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                            for (std::size_t i = 0; i < plane; ++i) gxrow[i] += gg * is * grow[i];
                        }
                    }
                }
            }
        };
    }
    return {&tape, oi};
}

// Batch-size-independent alternative; groups = largest of {8,4,2,1} dividing C.
inline int group_count_for(int channels) {
    for (int g : {8, 4, 2}) if (channels % g == 0 && channels >= 2 * g) return g;
    return 1;
}

template <typename T>
Value<T> groupnorm(Value<T> x, Value<T> gamma, Value<T> beta, int groups, T eps = T(1e-5)) {
    Tape<T>& tape = *x.tape;
    const Tensor<T>& xv = x.val();
    int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (C % groups != 0) throw std::invalid_argument("groupnorm: groups must divide C");
    int cpg = C / groups;
    std::size_t plane = static_cast<std::size_t>(H) * W;
    std::size_t gsize = static_cast<std::size_t>(cpg) * plane;

    auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B) * groups);
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B) * groups);
    const Tensor<T>& gv = gamma.val();
    const Tensor<T>& bv = beta.val();
    Tensor<T> out(xv.shape());
    for (int b = 0; b < B; ++b) {
        for (int gr = 0; gr < groups; ++gr) {
            const T* gx = xv.data() + (static_cast<std::size_t>(b) * C + gr * cpg) * plane;
            T m = 0;
            for (std::size_t i = 0; i < gsize; ++i) m += gx[i];
            m /= static_cast<T>(gsize);
            T v = 0;
            for (std::size_t i = 0; i < gsize; ++i) { T d = gx[i] - m; v += d * d; }
            v /= static_cast<T>(gsize);
            T is = T(1) / std::sqrt(v + eps);
            (*mean)[static_cast<std::size_t>(b) * groups + gr] = m;
            (*inv_std)[static_cast<std::size_t>(b) * groups + gr] = is;
            for (int cc = 0; cc < cpg; ++cc) {
                int c = gr * cpg + cc;
                const T* row = xv.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                T* orow = out.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) orow[i] = gv[c] * (row[i] - m) * is + bv[c];
            }
        }
    }

    bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    int xi = x.idx, gi = gamma.idx, bi = beta.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, xi, gi, bi, oi, mean, inv_std, B, C, groups, cpg, plane, gsize]() {
            const Tensor<T>& g = tape.node(oi).grad;
            const Tensor<T>& xv2 = tape.node(xi).value;
            const Tensor<T>& gv2 = tape.node(gi).value;
            // per-channel param grads
            if (tape.node(gi).requires_grad || tape.node(bi).requires_grad) {
                for (int c = 0; c < C; ++c) {
                    int gr = c / cpg;
                    T sdy = 0, sdyx = 0;
                    for (int b = 0; b < B; ++b) {
                        T m = (*mean)[static_cast<std::size_t>(b) * groups + gr];
                        T is = (*inv_std)[static_cast<std::size_t>(b) * groups + gr];
                        const T* grow = g.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                        const T* xrow = xv2.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                            sdy += grow[i];
                            sdyx += grow[i] * (xrow[i] - m) * is;
                        }
                    }
                    if (tape.node(gi).requires_grad) tape.grad(gi)[c] += sdyx;
                    if (tape.node(bi).requires_grad) tape.grad(bi)[c] += sdy;
                }
            }
            if (tape.node(xi).requires_grad) {
                Tensor<T>& gx = tape.grad(xi);
                for (int b = 0; b < B; ++b) {
                    for (int gr = 0; gr < groups; ++gr) {
                        T m = (*mean)[static_cast<std::size_t>(b) * groups + gr];
                        T is = (*inv_std)[static_cast<std::size_t>(b) * groups + gr];
                        T sum_dyg = 0, sum_dyg_xhat = 0;
                        for (int cc = 0; cc < cpg; ++cc) {
                            int c = gr * cpg + cc;
                            const T* grow = g.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                            const T* xrow = xv2.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                            T gg = gv2[c];
                            for (std::size_t i = 0; i < plane; ++i) {
                                T dyg = grow[i] * gg;
                                sum_dyg += dyg;
                                sum_dyg_xhat += dyg * (xrow[i] - m) * is;
                            }
                        }
                        T inv_n = T(1) / static_cast<T>(gsize);
                        for (int cc = 0; cc < cpg; ++cc) {
                            int c = gr * cpg + cc;
                            const T* grow = g.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                            const T* xrow = xv2.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                            T* gxrow = gx.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                            T gg = gv2[c];
                            for (std::size_t i = 0; i < plane; ++i) {
                                T xhat = (xrow[i] - m) * is;
                                gxrow[i] += is * (grow[i] * gg - inv_n * sum_dyg - xhat * inv_n * sum_dyg_xhat);
                            }
                        }
                    }
                }
            }
        };
    }
    return {&tape, oi};
}

} // namespace p2c
