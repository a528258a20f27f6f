#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "p2c/autograd.hpp"
#include "p2c/conv_ops.hpp"
#include "p2c/rng.hpp"

namespace p2c {

// All learnable tensors and normalization buffers, keyed by hierarchical
// names ("par.encoder.stage2.block0.conv1.weight"). A network holds ids into
// this store; each forward pass binds the needed ids into the current tape.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
        bool trainable = true;
    };

    int add(const std::string& name, Tensor<T> value, bool trainable = true) {
        if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        Entry e;
        e.name = name;
        e.grad = Tensor<T>(value.shape(), T(0));
        e.value = std::move(value);
        e.trainable = trainable;
        entries_.push_back(std::move(e));
        int id = static_cast<int>(entries_.size()) - 1;
        by_name_[name] = id;
        return id;
    }

    Entry& entry(int id) { return entries_[static_cast<std::size_t>(id)]; }
    const Entry& entry(int id) const { return entries_[static_cast<std::size_t>(id)]; }
    Tensor<T>& value(int id) { return entries_[static_cast<std::size_t>(id)].value; }
    Tensor<T>& grad(int id) { return entries_[static_cast<std::size_t>(id)].grad; }
    int size() const { return static_cast<int>(entries_.size()); }
    int find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? -1 : it->second;
    }

    std::size_t trainable_scalars() const {
        std::size_t n = 0;
        for (const auto& e : entries_) if (e.trainable) n += e.value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.grad.fill(T(0));
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> by_name_;
};

// Per-forward-pass bridge between the store and a tape. Parameters are bound
// lazily; after backward(), harvest() accumulates tape grads into the store.
template <typename T>
class Binder {
public:
    Binder(Tape<T>& tape, ParamStore<T>& store, bool with_grad = true)
        : tape_(&tape), store_(&store), with_grad_(with_grad),
          bound_(static_cast<std::size_t>(store.size()), -1) {}

    Value<T> operator()(int pid) {
        if (pid < 0 || pid >= store_->size()) throw std::logic_error("Binder: bad param id");
        int& idx = bound_[static_cast<std::size_t>(pid)];
        if (idx < 0)
            idx = tape_->leaf(store_->value(pid), with_grad_ && store_->entry(pid).trainable);
        return {tape_, idx};
    }

    Tape<T>& tape() { return *tape_; }
    ParamStore<T>& store() { return *store_; }

    void harvest() {
        for (std::size_t pid = 0; pid < bound_.size(); ++pid) {
            int idx = bound_[pid];
            if (idx < 0) continue;
            auto& node = tape_->node(idx);
            if (!node.requires_grad || !node.grad_alloc) continue;
            Tensor<T>& g = store_->grad(static_cast<int>(pid));
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += node.grad[i];
        }
    }

private:
    Tape<T>* tape_;
    ParamStore<T>* store_;
    bool with_grad_;
    std::vector<int> bound_;
};

enum class NormKind { Batch, Group };

inline NormKind norm_kind_from_string(const std::string& s) {
    if (s == "batch") return NormKind::Batch;
    if (s == "group") return NormKind::Group;
    throw std::invalid_argument("unknown norm kind: " + s + " (expected batch|group)");
}

// ---- layer modules: plain structs of param ids ----

template <typename T>
struct Conv2dLayer {
    int weight = -1;
    int bias = -1; // -1 when followed by a norm layer
    Conv2dSpec spec;

    static Conv2dLayer make(ParamStore<T>& store, const std::string& name, int cin, int cout,
                            int k, Conv2dSpec spec, bool with_bias, Rng& rng) {
        Conv2dLayer l;
        l.spec = spec;
        T std_dev = static_cast<T>(std::sqrt(2.0 / (static_cast<double>(cin) * k * k)));
        l.weight = store.add(name + ".weight", Tensor<T>::randn({cout, cin, k, k}, rng, std_dev));
        if (with_bias) l.bias = store.add(name + ".bias", Tensor<T>({cout}, T(0)));
        return l;
    }

    Value<T> forward(Binder<T>& bind, Value<T> x) const {
        Value<T> b = bias >= 0 ? bind(bias) : Value<T>{};
        return conv2d(x, bind(weight), b, spec);
    }
};

template <typename T>
struct NormLayer {
    NormKind kind = NormKind::Batch;
    int gamma = -1, beta = -1;
    int running_mean = -1, running_var = -1; // batch only
    int groups = 1;

    static NormLayer make(ParamStore<T>& store, const std::string& name, int channels, NormKind kind) {
        NormLayer l;
        l.kind = kind;
        l.gamma = store.add(name + ".gamma", Tensor<T>({channels}, T(1)));
        l.beta = store.add(name + ".beta", Tensor<T>({channels}, T(0)));
        if (kind == NormKind::Batch) {
            l.running_mean = store.add(name + ".running_mean", Tensor<T>({channels}, T(0)), false);
            l.running_var = store.add(name + ".running_var", Tensor<T>({channels}, T(1)), false);
        } else {
            l.groups = group_count_for(channels);
        }
        return l;
    }

    Value<T> forward(Binder<T>& bind, Value<T> x, bool training) const {
        if (kind == NormKind::Batch)
            return batchnorm2d(x, bind(gamma), bind(beta), bind.store().value(running_mean),
                               bind.store().value(running_var), training);
        return groupnorm(x, bind(gamma), bind(beta), groups);
    }
};

// conv (no bias) + norm + ReLU
template <typename T>
struct ConvBlock {
    Conv2dLayer<T> conv;
    NormLayer<T> norm;
    bool relu_after = true;

    static ConvBlock make(ParamStore<T>& store, const std::string& name, int cin, int cout, int k,
                          Conv2dSpec spec, NormKind nk, Rng& rng, bool relu_after = true) {
        ConvBlock b;
        b.conv = Conv2dLayer<T>::make(store, name + ".conv", cin, cout, k, spec, false, rng);
        b.norm = NormLayer<T>::make(store, name + ".norm", cout, nk);
        b.relu_after = relu_after;
        return b;
    }

    Value<T> forward(Binder<T>& bind, Value<T> x, bool training) const {
        Value<T> y = norm.forward(bind, conv.forward(bind, x), training);
        return relu_after ? relu(y) : y;
    }
};

} // namespace p2c
