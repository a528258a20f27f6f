#pragma once

#include <string>
#include <vector>

#include "p2c/nn.hpp"

namespace p2c {

// Two 3x3 convs with an identity or projected skip.
template <typename T>
struct BasicBlock {
    ConvBlock<T> conv1;
    ConvBlock<T> conv2;
    bool has_proj = false;
    ConvBlock<T> proj;

    static BasicBlock make(ParamStore<T>& store, const std::string& name, int cin, int cout,
                           int stride, NormKind nk, Rng& rng) {
        BasicBlock b;
        b.conv1 = ConvBlock<T>::make(store, name + ".conv1", cin, cout, 3, {stride, 1, 1}, nk, rng);
        b.conv2 = ConvBlock<T>::make(store, name + ".conv2", cout, cout, 3, {1, 1, 1}, nk, rng,
                                     /*relu_after=*/false);
        if (stride != 1 || cin != cout) {
            b.has_proj = true;
            b.proj = ConvBlock<T>::make(store, name + ".proj", cin, cout, 1, {stride, 0, 1}, nk, rng,
                                        /*relu_after=*/false);
        }
        return b;
    }

    Value<T> forward(Binder<T>& bind, Value<T> x, bool training) const {
        Value<T> y = conv2.forward(bind, conv1.forward(bind, x, training), training);
        Value<T> skip = has_proj ? proj.forward(bind, x, training) : x;
        return relu(add(y, skip));
    }
};

// ResNet-34 stage layout: 7x7/2 stem, 3x3/2 max pool, then four residual
// stages at strides 1,2,2,2 (total stride 32). Block counts are configurable
// so the desk-scale preset can run one block per stage.
template <typename T>
struct Encoder {
    ConvBlock<T> stem;
    std::vector<BasicBlock<T>> stage[4];

    struct Feats {
        Value<T> s1, s2, s3, s4; // strides 4, 8, 16, 32
    };

    static Encoder make(ParamStore<T>& store, const std::string& name, int in_channels,
                        const std::vector<int>& widths, const std::vector<int>& blocks,
                        NormKind nk, Rng& rng) {
        if (widths.size() != 5) throw std::invalid_argument("encoder: stage_widths must have 5 entries");
        if (blocks.size() != 4) throw std::invalid_argument("encoder: blocks must have 4 entries");
        Encoder e;
        e.stem = ConvBlock<T>::make(store, name + ".stem", in_channels, widths[0], 7, {2, 3, 1}, nk, rng);
        int cin = widths[0];
        for (int s = 0; s < 4; ++s) {
            int cout = widths[static_cast<std::size_t>(s + 1)];
            for (int b = 0; b < blocks[static_cast<std::size_t>(s)]; ++b) {
                int stride = (s == 0 || b > 0) ? 1 : 2;
                e.stage[s].push_back(BasicBlock<T>::make(
                    store, name + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b),
                    cin, cout, stride, nk, rng));
                cin = cout;
            }
        }
        return e;
    }

    Value<T> stem_pool(Binder<T>& bind, Value<T> x, bool training) const {
        return maxpool2d_3x3s2(stem.forward(bind, x, training));
    }

    Value<T> run_stage(Binder<T>& bind, Value<T> x, int s, bool training) const {
        for (const auto& b : stage[s]) x = b.forward(bind, x, training);
        return x;
    }

    Feats forward(Binder<T>& bind, Value<T> x, bool training) const {
        Value<T> y = stem_pool(bind, x, training);
        Feats f;
        f.s1 = y = run_stage(bind, y, 0, training);
        f.s2 = y = run_stage(bind, y, 1, training);
        f.s3 = y = run_stage(bind, y, 2, training);
        f.s4 = y = run_stage(bind, y, 3, training);
        return f;
    }
};

} // namespace p2c
