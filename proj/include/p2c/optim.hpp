#pragma once

#include <cmath>
#include <vector>

#include "p2c/nn.hpp"

namespace p2c {

template <typename T>
class Adam {
public:
    Adam(ParamStore<T>& store, T lr, T beta1 = T(0.5), T beta2 = T(0.999), T eps = T(1e-8))
        : store_(&store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(static_cast<std::size_t>(store.size()));
        v_.resize(static_cast<std::size_t>(store.size()));
        for (int i = 0; i < store.size(); ++i) {
            if (!store.entry(i).trainable) continue;
            m_[static_cast<std::size_t>(i)] = Tensor<T>(store.value(i).shape(), T(0));
            v_[static_cast<std::size_t>(i)] = Tensor<T>(store.value(i).shape(), T(0));
        }
    }

    void step() {
        ++t_;
        T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), t_));
        T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), t_));
        for (int i = 0; i < store_->size(); ++i) {
            if (!store_->entry(i).trainable) continue;
            Tensor<T>& p = store_->value(i);
            Tensor<T>& g = store_->grad(i);
            Tensor<T>& m = m_[static_cast<std::size_t>(i)];
            Tensor<T>& v = v_[static_cast<std::size_t>(i)];
            for (std::size_t j = 0; j < p.numel(); ++j) {
                m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
                T mhat = m[j] / bc1;
                T vhat = v[j] / bc2;
                p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    void zero_grad() { store_->zero_grad(); }

    T lr() const { return lr_; }
    void set_lr(T lr) { lr_ = lr; }
    long long step_count() const { return t_; }

    // checkpoint access
    std::vector<Tensor<T>>& moment1() { return m_; }
    std::vector<Tensor<T>>& moment2() { return v_; }
    void set_step_count(long long t) { t_ = t; }

private:
    ParamStore<T>* store_;
    T lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
};

} // namespace p2c
