#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2c/rng.hpp"

namespace p2c {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major tensor with value semantics. T is float for training and
// double for the finite-difference test fixtures.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(std::initializer_list<int> shape, T fill = T(0))
        : Tensor(Shape(shape), fill) {}

    static Tensor scalar(T v) {
        Tensor t(Shape{});
        t.data_ = {v};
        return t;
    }

    const Shape& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // B,C,H,W convenience accessors (rank-4 tensors)
    T& at4(int b, int c, int h, int w) {
        return data_[((static_cast<std::size_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at4(int b, int c, int h, int w) const {
        return data_[((static_cast<std::size_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    T& at2(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    const T& at2(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    T item() const {
        if (numel() != 1) throw std::logic_error("item() on tensor with numel != 1");
        return data_[0];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw std::invalid_argument("reshape numel mismatch: " + shape_str(shape_) + " -> " + shape_str(s));
        Tensor out = *this;
        out.shape_ = std::move(s);
        return out;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    static Tensor randn(const Shape& s, Rng& rng, T stddev = T(1), T mean = T(0)) {
        Tensor t(s);
        for (auto& v : t.data_) v = static_cast<T>(rng.normal(mean, stddev));
        return t;
    }
    static Tensor rand_uniform(const Shape& s, Rng& rng, T lo = T(0), T hi = T(1)) {
        Tensor t(s);
        for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    Shape shape_;
    std::vector<T> data_;
};

} // namespace p2c
