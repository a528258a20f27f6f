#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "p2c/tensor.hpp"

namespace p2c {

// Reverse-mode tape. A forward pass records nodes in creation order; backward
// walks them in reverse. Node indices stay valid across vector growth, so
// closures capture indices, never references.
template <typename T>
class Tape {
public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;          // allocated lazily at backward()
        bool requires_grad = false;
        bool grad_alloc = false;
        std::function<void()> backward; // empty for leaves
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    int leaf(Tensor<T> v, bool requires_grad) {
        Node n;
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int record(Tensor<T> v, bool requires_grad, std::function<void()> bw) {
        Node n;
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Node& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }
    const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return nodes_.size(); }

    Tensor<T>& grad(int i) {
        Node& n = node(i);
        if (!n.grad_alloc) {
            n.grad = Tensor<T>(n.value.shape(), T(0));
            n.grad_alloc = true;
        }
        return n.grad;
    }

    // seed d(root)/d(root) = 1 and propagate
    void backward(int root) {
        Node& r = node(root);
        if (r.value.numel() != 1)
            throw std::logic_error("backward() root must be a scalar");
        grad(root).fill(T(1));
        for (int i = root; i >= 0; --i) {
            Node& n = node(i);
            if (n.backward && n.requires_grad && n.grad_alloc) n.backward();
        }
    }

    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

template <typename T>
struct Value {
    Tape<T>* tape = nullptr;
    int idx = -1;

    bool valid() const { return tape != nullptr && idx >= 0; }
    const Tensor<T>& val() const { return tape->node(idx).value; }
    Tensor<T>& grad() const { return tape->grad(idx); }
    bool requires_grad() const { return tape->node(idx).requires_grad; }
    const Shape& shape() const { return val().shape(); }
};

template <typename T>
Value<T> make_leaf(Tape<T>& tape, Tensor<T> v, bool requires_grad = false) {
    return {&tape, tape.leaf(std::move(v), requires_grad)};
}

template <typename T>
Value<T> make_constant(Tape<T>& tape, T v) {
    return make_leaf(tape, Tensor<T>::scalar(v), false);
}

namespace detail {

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

// grads for a broadcast operand (numel()==1) collapse by summation
template <typename T>
void add_reduced(Tape<T>& tape, int idx, const Tensor<T>& full_grad) {
    auto& n = tape.node(idx);
    if (!n.requires_grad) return;
    Tensor<T>& g = tape.grad(idx);
    if (g.numel() == full_grad.numel()) {
        accumulate(g, full_grad);
    } else if (g.numel() == 1) {
        T s = 0;
        for (std::size_t i = 0; i < full_grad.numel(); ++i) s += full_grad[i];
        g[0] += s;
    } else {
        throw std::logic_error("unsupported broadcast in backward");
    }
}

template <typename T>
inline T bval(const Tensor<T>& t, std::size_t i) { return t.numel() == 1 ? t[0] : t[i]; }

} // namespace detail

// ---- elementwise binary ops (same shape, or either operand scalar) ----

template <typename T, typename FwdFn, typename BwdFn>
Value<T> binary_op(Value<T> a, Value<T> b, FwdFn f, BwdFn dfd, const char* name) {
    Tape<T>& tape = *a.tape;
    const Tensor<T>& av = a.val();
    const Tensor<T>& bv = b.val();
    bool a_scalar = av.numel() == 1, b_scalar = bv.numel() == 1;
    if (!a_scalar && !b_scalar && !av.same_shape(bv))
        throw std::invalid_argument(std::string(name) + ": shape mismatch " + shape_str(av.shape()) +
                                    " vs " + shape_str(bv.shape()));
    const Shape& out_shape = a_scalar ? bv.shape() : av.shape();
    Tensor<T> out(out_shape);
    std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(detail::bval(av, i), detail::bval(bv, i));

    bool rg = a.requires_grad() || b.requires_grad();
    int ai = a.idx, bi = b.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, ai, bi, oi, dfd]() {
            const Tensor<T>& g = tape.node(oi).grad;
            const Tensor<T>& av2 = tape.node(ai).value;
            const Tensor<T>& bv2 = tape.node(bi).value;
            std::size_t n2 = g.numel();
            if (tape.node(ai).requires_grad) {
                Tensor<T> da(g.shape());
                for (std::size_t i = 0; i < n2; ++i)
                    da[i] = g[i] * dfd(detail::bval(av2, i), detail::bval(bv2, i), true);
                detail::add_reduced(tape, ai, da);
            }
            if (tape.node(bi).requires_grad) {
                Tensor<T> db(g.shape());
                for (std::size_t i = 0; i < n2; ++i)
                    db[i] = g[i] * dfd(detail::bval(av2, i), detail::bval(bv2, i), false);
                detail::add_reduced(tape, bi, db);
            }
        };
    }
    return {&tape, oi};
}

template <typename T>
Value<T> add(Value<T> a, Value<T> b) {
    return binary_op(a, b, [](T x, T y) { return x + y; },
                     [](T, T, bool) { return T(1); }, "add");
}

template <typename T>
Value<T> sub(Value<T> a, Value<T> b) {
    return binary_op(a, b, [](T x, T y) { return x - y; },
                     [](T, T, bool wrt_a) { return wrt_a ? T(1) : T(-1); }, "sub");
}

template <typename T>
Value<T> mul(Value<T> a, Value<T> b) {
    return binary_op(a, b, [](T x, T y) { return x * y; },
                     [](T x, T y, bool wrt_a) { return wrt_a ? y : x; }, "mul");
}

template <typename T>
Value<T> div(Value<T> a, Value<T> b) {
    return binary_op(a, b, [](T x, T y) { return x / y; },
                     [](T x, T y, bool wrt_a) { return wrt_a ? T(1) / y : -x / (y * y); }, "div");
}

// ---- elementwise unary ----

template <typename T, typename FwdFn, typename BwdFn>
Value<T> unary_op(Value<T> a, FwdFn f, BwdFn dfdx) {
    Tape<T>& tape = *a.tape;
    const Tensor<T>& av = a.val();
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < av.numel(); ++i) out[i] = f(av[i]);
    bool rg = a.requires_grad();
    int ai = a.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, ai, oi, dfdx]() {
            const Tensor<T>& g = tape.node(oi).grad;
            const Tensor<T>& x = tape.node(ai).value;
            const Tensor<T>& y = tape.node(oi).value;
            Tensor<T>& ga = tape.grad(ai);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
        };
    }
    return {&tape, oi};
}

template <typename T>
Value<T> neg(Value<T> a) {
    return unary_op(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Value<T> vlog(Value<T> a) {
    return unary_op(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Value<T> relu(Value<T> a) {
    return unary_op(a, [](T x) { return x > T(0) ? x : T(0); },
                    [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Value<T> sigmoid(Value<T> a) {
    return unary_op(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                    [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Value<T> clamp(Value<T> a, T lo, T hi) {
    return unary_op(a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
                    [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Value<T> scale(Value<T> a, T c) {
    return unary_op(a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <typename T>
Value<T> add_const(Value<T> a, T c) {
    return unary_op(a, [c](T x) { return x + c; }, [c](T, T) { return T(1); });
}

// ---- reshape (shares data, reshapes gradient) ----

template <typename T>
Value<T> reshape(Value<T> a, Shape s) {
    Tape<T>& tape = *a.tape;
    Tensor<T> out = a.val().reshaped(s);
    bool rg = a.requires_grad();
    int ai = a.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, ai, oi]() {
            const Tensor<T>& g = tape.node(oi).grad;
            Tensor<T>& ga = tape.grad(ai);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        };
    }
    return {&tape, oi};
}

// ---- reductions ----

template <typename T>
Value<T> sum_all(Value<T> a) {
    Tape<T>& tape = *a.tape;
    const Tensor<T>& av = a.val();
    T s = 0;
    for (std::size_t i = 0; i < av.numel(); ++i) s += av[i];
    bool rg = a.requires_grad();
    int ai = a.idx;
    int oi = tape.record(Tensor<T>::scalar(s), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, ai, oi]() {
            T g = tape.node(oi).grad[0];
            Tensor<T>& ga = tape.grad(ai);
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
        };
    }
    return {&tape, oi};
}

template <typename T>
Value<T> mean_all(Value<T> a) {
    std::size_t n = a.val().numel();
    return scale(sum_all(a), T(1) / static_cast<T>(n));
}

// ---- softmax over an axis ----

template <typename T>
Value<T> softmax(Value<T> a, int axis) {
    Tape<T>& tape = *a.tape;
    const Tensor<T>& av = a.val();
    int rank = av.rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw std::invalid_argument("softmax: bad axis");
    std::size_t axis_len = static_cast<std::size_t>(av.dim(axis));
    std::size_t inner = 1, outer = 1;
    for (int i = axis + 1; i < rank; ++i) inner *= static_cast<std::size_t>(av.dim(i));
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(av.dim(i));

    Tensor<T> out(av.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            std::size_t base = o * axis_len * inner + in;
            // max-shifted for stability: dot products grow with HW
            T mx = av[base];
            for (std::size_t k = 1; k < axis_len; ++k) mx = std::max(mx, av[base + k * inner]);
            T denom = 0;
            for (std::size_t k = 0; k < axis_len; ++k) {
                T e = std::exp(av[base + k * inner] - mx);
                out[base + k * inner] = e;
                denom += e;
            }
            for (std::size_t k = 0; k < axis_len; ++k) out[base + k * inner] /= denom;
        }
    }
    bool rg = a.requires_grad();
    int ai = a.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, ai, oi, axis_len, inner, outer]() {
            const Tensor<T>& g = tape.node(oi).grad;
            const Tensor<T>& y = tape.node(oi).value;
            Tensor<T>& ga = tape.grad(ai);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    std::size_t base = o * axis_len * inner + in;
                    T dot = 0;
                    for (std::size_t k = 0; k < axis_len; ++k)
                        dot += g[base + k * inner] * y[base + k * inner];
                    for (std::size_t k = 0; k < axis_len; ++k) {
                        std::size_t p = base + k * inner;
                        ga[p] += y[p] * (g[p] - dot);
                    }
                }
            }
        };
    }
    return {&tape, oi};
}

// ---- concat / slice along an axis ----

template <typename T>
Value<T> concat(Value<T> a, Value<T> b, int axis) {
    Tape<T>& tape = *a.tape;
    const Tensor<T>& av = a.val();
    const Tensor<T>& bv = b.val();
    if (av.rank() != bv.rank()) throw std::invalid_argument("concat: rank mismatch");
    int rank = av.rank();
    if (axis < 0) axis += rank;
    Shape out_shape = av.shape();
    for (int i = 0; i < rank; ++i) {
        if (i == axis) continue;
        if (av.dim(i) != bv.dim(i)) throw std::invalid_argument("concat: shape mismatch off-axis");
    }
    out_shape[static_cast<std::size_t>(axis)] = av.dim(axis) + bv.dim(axis);

    std::size_t inner = 1, outer = 1;
    for (int i = axis + 1; i < rank; ++i) inner *= static_cast<std::size_t>(av.dim(i));
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(av.dim(i));
    std::size_t a_len = static_cast<std::size_t>(av.dim(axis)) * inner;
    std::size_t b_len = static_cast<std::size_t>(bv.dim(axis)) * inner;

    Tensor<T> out(out_shape);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy(av.data() + o * a_len, av.data() + (o + 1) * a_len, out.data() + o * (a_len + b_len));
        std::copy(bv.data() + o * b_len, bv.data() + (o + 1) * b_len,
                  out.data() + o * (a_len + b_len) + a_len);
    }
    bool rg = a.requires_grad() || b.requires_grad();
    int ai = a.idx, bi = b.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, ai, bi, oi, outer, a_len, b_len]() {
            const Tensor<T>& g = tape.node(oi).grad;
            if (tape.node(ai).requires_grad) {
                Tensor<T>& ga = tape.grad(ai);
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < a_len; ++i)
                        ga[o * a_len + i] += g[o * (a_len + b_len) + i];
            }
            if (tape.node(bi).requires_grad) {
                Tensor<T>& gb = tape.grad(bi);
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < b_len; ++i)
                        gb[o * b_len + i] += g[o * (a_len + b_len) + a_len + i];
            }
        };
    }
    return {&tape, oi};
}

template <typename T>
Value<T> slice(Value<T> a, int axis, int start, int len) {
    Tape<T>& tape = *a.tape;
    const Tensor<T>& av = a.val();
    int rank = av.rank();
    if (axis < 0) axis += rank;
    if (start < 0 || start + len > av.dim(axis)) throw std::invalid_argument("slice: out of range");
    Shape out_shape = av.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;

    std::size_t inner = 1, outer = 1;
    for (int i = axis + 1; i < rank; ++i) inner *= static_cast<std::size_t>(av.dim(i));
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(av.dim(i));
    std::size_t src_len = static_cast<std::size_t>(av.dim(axis)) * inner;
    std::size_t dst_len = static_cast<std::size_t>(len) * inner;
    std::size_t off = static_cast<std::size_t>(start) * inner;

    Tensor<T> out(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy(av.data() + o * src_len + off, av.data() + o * src_len + off + dst_len,
                  out.data() + o * dst_len);
    bool rg = a.requires_grad();
    int ai = a.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, ai, oi, outer, src_len, dst_len, off]() {
            const Tensor<T>& g = tape.node(oi).grad;
            Tensor<T>& ga = tape.grad(ai);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < dst_len; ++i)
                    ga[o * src_len + off + i] += g[o * dst_len + i];
        };
    }
    return {&tape, oi};
}

// ---- batched matmul ----
// a: B x m x k, b: B x k x n  ->  B x m x n.  transpose_b multiplies by b^T
// (b given as B x n x k), which is how the channel affinity C x C products
// are formed without materializing transposes.

template <typename T>
Value<T> bmm(Value<T> a, Value<T> b, bool transpose_b = false) {
    Tape<T>& tape = *a.tape;
    const Tensor<T>& av = a.val();
    const Tensor<T>& bv = b.val();
    if (av.rank() != 3 || bv.rank() != 3) throw std::invalid_argument("bmm: rank-3 tensors required");
    int B = av.dim(0), m = av.dim(1), k = av.dim(2);
    int bk = transpose_b ? bv.dim(2) : bv.dim(1);
    int n = transpose_b ? bv.dim(1) : bv.dim(2);
    if (bv.dim(0) != B || bk != k) throw std::invalid_argument("bmm: inner dim mismatch");

    Tensor<T> out({B, m, n});
    auto a_at = [&](int bb, int i, int j) { return av[(static_cast<std::size_t>(bb) * m + i) * k + j]; };
    auto b_at = [&](int bb, int i, int j) {
        return transpose_b ? bv[(static_cast<std::size_t>(bb) * n + j) * k + i]
                           : bv[(static_cast<std::size_t>(bb) * k + i) * n + j];
    };
    for (int bb = 0; bb < B; ++bb)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                T s = 0;
                for (int kk = 0; kk < k; ++kk) s += a_at(bb, i, kk) * b_at(bb, kk, j);
                out[(static_cast<std::size_t>(bb) * m + i) * n + j] = s;
            }

    bool rg = a.requires_grad() || b.requires_grad();
    int ai = a.idx, bi = b.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, ai, bi, oi, B, m, n, k, transpose_b]() {
            const Tensor<T>& g = tape.node(oi).grad;
            const Tensor<T>& av2 = tape.node(ai).value;
            const Tensor<T>& bv2 = tape.node(bi).value;
            auto gv = [&](int bb, int i, int j) { return g[(static_cast<std::size_t>(bb) * m + i) * n + j]; };
            if (tape.node(ai).requires_grad) {
                Tensor<T>& ga = tape.grad(ai);
                // dA = dOut * B^T  (or dOut * B when transpose_b)
                for (int bb = 0; bb < B; ++bb)
                    for (int i = 0; i < m; ++i)
                        for (int kk = 0; kk < k; ++kk) {
                            T s = 0;
                            for (int j = 0; j < n; ++j) {
                                T bvv = transpose_b ? bv2[(static_cast<std::size_t>(bb) * n + j) * k + kk]
                                                    : bv2[(static_cast<std::size_t>(bb) * k + kk) * n + j];
                                s += gv(bb, i, j) * bvv;
                            }
                            ga[(static_cast<std::size_t>(bb) * m + i) * k + kk] += s;
                        }
            }
            if (tape.node(bi).requires_grad) {
                Tensor<T>& gb = tape.grad(bi);
                if (!transpose_b) {
                    // dB = A^T * dOut
                    for (int bb = 0; bb < B; ++bb)
                        for (int kk = 0; kk < k; ++kk)
                            for (int j = 0; j < n; ++j) {
                                T s = 0;
                                for (int i = 0; i < m; ++i)
                                    s += av2[(static_cast<std::size_t>(bb) * m + i) * k + kk] * gv(bb, i, j);
                                gb[(static_cast<std::size_t>(bb) * k + kk) * n + j] += s;
                            }
                } else {
                    // out = A * B^T, B is B x n x k: dB = dOut^T * A
                    for (int bb = 0; bb < B; ++bb)
                        for (int j = 0; j < n; ++j)
                            for (int kk = 0; kk < k; ++kk) {
                                T s = 0;
                                for (int i = 0; i < m; ++i)
                                    s += gv(bb, i, j) * av2[(static_cast<std::size_t>(bb) * m + i) * k + kk];
                                gb[(static_cast<std::size_t>(bb) * n + j) * k + kk] += s;
                            }
                }
            }
        };
    }
    return {&tape, oi};
}

// ---- broadcast multiply over channels: x (B,C,H,W) * g (B,1,H,W) ----

template <typename T>
Value<T> mul_broadcast_channel(Value<T> x, Value<T> g) {
    Tape<T>& tape = *x.tape;
    const Tensor<T>& xv = x.val();
    const Tensor<T>& gv = g.val();
    if (xv.rank() != 4 || gv.rank() != 4 || gv.dim(1) != 1 || xv.dim(0) != gv.dim(0) ||
        xv.dim(2) != gv.dim(2) || xv.dim(3) != gv.dim(3))
        throw std::invalid_argument("mul_broadcast_channel: expected (B,C,H,W) x (B,1,H,W)");
    int B = xv.dim(0), C = xv.dim(1);
    std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor<T> out(xv.shape());
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (std::size_t p = 0; p < hw; ++p)
                out[(static_cast<std::size_t>(b) * C + c) * hw + p] =
                    xv[(static_cast<std::size_t>(b) * C + c) * hw + p] * gv[b * hw + p];
    bool rg = x.requires_grad() || g.requires_grad();
    int xi = x.idx, gi = g.idx;
    int oi = tape.record(std::move(out), rg, nullptr);
    if (rg) {
        tape.node(oi).backward = [&tape, xi, gi, oi, B, C, hw]() {
            const Tensor<T>& go = tape.node(oi).grad;
            const Tensor<T>& xv2 = tape.node(xi).value;
            const Tensor<T>& gv2 = tape.node(gi).value;
            if (tape.node(xi).requires_grad) {
                Tensor<T>& gx = tape.grad(xi);
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c)
                        for (std::size_t p = 0; p < hw; ++p)
                            gx[(static_cast<std::size_t>(b) * C + c) * hw + p] +=
                                go[(static_cast<std::size_t>(b) * C + c) * hw + p] * gv2[b * hw + p];
            }
            if (tape.node(gi).requires_grad) {
                Tensor<T>& gg = tape.grad(gi);
                for (int b = 0; b < B; ++b)
                    for (std::size_t p = 0; p < hw; ++p) {
                        T s = 0;
                        for (int c = 0; c < C; ++c)
                            s += go[(static_cast<std::size_t>(b) * C + c) * hw + p] *
                                 xv2[(static_cast<std::size_t>(b) * C + c) * hw + p];
                        gg[b * hw + p] += s;
                    }
            }
        };
    }
    return {&tape, oi};
}

} // namespace p2c
