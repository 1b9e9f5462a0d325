#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "resseg/data.hpp"
#include "resseg/layers.hpp"
#include "resseg/params.hpp"
#include "resseg/tensor.hpp"

namespace resseg {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NetworkConfig {
    int levels = 5;
    int base_channels = 32;
    int input_channels = 3;
    int conv_kernel = 3;
    int input_size = 640;

    int channels(int level) const { return base_channels << level; }
    int size_at(int level) const { return input_size >> level; }
    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// Levels 4, base 8, input 64.
inline NetworkConfig desk_profile() { return NetworkConfig{4, 8, 3, 3, 64}; }

inline void validate(const NetworkConfig& cfg) {
    if (cfg.levels < 2) throw ConfigError("levels must be >= 2");
    if (cfg.base_channels < 1) throw ConfigError("base_channels must be >= 1");
    if (cfg.input_channels < 1) throw ConfigError("input_channels must be >= 1");
    if (cfg.conv_kernel < 1 || cfg.conv_kernel % 2 == 0) throw ConfigError("conv_kernel must be odd");
    const int div = 1 << (cfg.levels - 1);
    if (cfg.input_size < div || cfg.input_size % div != 0) {
        throw ConfigError("input_size " + std::to_string(cfg.input_size) + " is not divisible by " + std::to_string(div));
    }
}

// Spatial sizes that pass through the network are multiples of 2^(levels-1).
inline void validate_input(const NetworkConfig& cfg, const Shape& s) {
    const int div = 1 << (cfg.levels - 1);
    if (s.c != cfg.input_channels) {
        throw ConfigError("input has " + std::to_string(s.c) + " channels, network expects " +
                          std::to_string(cfg.input_channels));
    }
    if (s.h < div || s.w < div || s.h % div != 0 || s.w % div != 0) {
        throw ConfigError("input size " + std::to_string(s.h) + "x" + std::to_string(s.w) + " is not divisible by " +
                          std::to_string(div));
    }
}

struct ConvRef {
    std::size_t weight = 0;
    std::size_t bias = 0;
    int cin = 0;
    int cout = 0;
    int kernel = 0;
};

template <typename T>
ConvRef add_conv(ParamStore<T>& ps, const std::string& prefix, int cin, int cout, int k) {
    ConvRef r;
    r.weight = ps.add(prefix + ".weight", {cout, cin, k, k});
    r.bias = ps.add(prefix + ".bias", {cout});
    r.cin = cin;
    r.cout = cout;
    r.kernel = k;
    return r;
}

template <typename T>
ConvRef add_up_conv(ParamStore<T>& ps, const std::string& prefix, int cin, int cout) {
    ConvRef r;
    r.weight = ps.add(prefix + ".weight", {cin, cout, 2, 2});
    r.bias = ps.add(prefix + ".bias", {cout});
    r.cin = cin;
    r.cout = cout;
    r.kernel = 2;
    return r;
}

template <typename T>
Tensor<T> apply_conv(const ParamStore<T>& ps, const ConvRef& c, const Tensor<T>& in) {
    return conv2d<T>(in, ps[c.weight].value, ps[c.bias].value, c.cout, c.kernel);
}

template <typename T>
void apply_conv_backward(const ParamStore<T>& ps, const ConvRef& c, const Tensor<T>& in, const Tensor<T>& grad_out,
                         Gradients<T>& grads, Tensor<T>* grad_in) {
    conv2d_backward<T>(in, ps[c.weight].value, c.cout, c.kernel, grad_out, grads[c.weight], grads[c.bias], grad_in);
}

// He-normal weights (std = sqrt(2 / fan_in)), zero biases.
template <typename T>
void he_init(ParamStore<T>& ps, const ConvRef& c, Rng& rng) {
    // A 2×2 stride-2 transposed conv feeds each output from cin inputs.
    const double fan_in = c.kernel == 2 ? static_cast<double>(c.cin) : static_cast<double>(c.cin) * c.kernel * c.kernel;
    const double std = std::sqrt(2.0 / fan_in);
    for (auto& v : ps[c.weight].value) v = static_cast<T>(std * standard_normal(rng));
    for (auto& v : ps[c.bias].value) v = T(0);
}

// Modified U-Net: same-padded conv→ReLU pairs per level, 2×2 max pooling
// down, 2×2 transposed convolution up, skip concatenation without cropping.
template <typename T>
class Backbone {
public:
    struct EncoderTrace {
        Tensor<T> input;
        Tensor<T> conv0;  // post-ReLU
        Tensor<T> conv1;  // post-ReLU; the skip / bottleneck output
        std::vector<std::uint8_t> pool_argmax;
    };
    struct DecoderTrace {
        Tensor<T> coarse;
        Tensor<T> cat;  // [upsampled ‖ skip]
        Tensor<T> conv0;
        Tensor<T> conv1;
    };
    struct Trace {
        std::vector<EncoderTrace> enc;  // index = level, 0 finest
        std::vector<DecoderTrace> dec;  // index = level 0..levels-2
    };

    Backbone() = default;
    Backbone(const NetworkConfig& cfg, ParamStore<T>& ps) : cfg_(cfg) {
        validate(cfg);
        const int k = cfg.conv_kernel;
        for (int i = 0; i < cfg.levels; ++i) {
            const int cin = i == 0 ? cfg.input_channels : cfg.channels(i - 1);
            const std::string p = "enc" + std::to_string(i);
            enc_.push_back({add_conv(ps, p + ".conv0", cin, cfg.channels(i), k),
                            add_conv(ps, p + ".conv1", cfg.channels(i), cfg.channels(i), k)});
        }
        for (int i = 0; i < cfg.levels - 1; ++i) {
            const std::string p = "dec" + std::to_string(i);
            DecoderRefs d;
            d.up = add_up_conv(ps, p + ".up", cfg.channels(i + 1), cfg.channels(i));
            d.conv0 = add_conv(ps, p + ".conv0", 2 * cfg.channels(i), cfg.channels(i), k);
            d.conv1 = add_conv(ps, p + ".conv1", cfg.channels(i), cfg.channels(i), k);
            dec_.push_back(d);
        }
    }

    const NetworkConfig& config() const { return cfg_; }

    void init(ParamStore<T>& ps, Rng& rng) const {
        for (const auto& e : enc_) {
            he_init(ps, e.conv0, rng);
            he_init(ps, e.conv1, rng);
        }
        for (const auto& d : dec_) {
            he_init(ps, d.up, rng);
            he_init(ps, d.conv0, rng);
            he_init(ps, d.conv1, rng);
        }
    }

    // Contraction path. Returns per-level outputs, finest first.
    std::vector<Tensor<T>> encode(const ParamStore<T>& ps, const Tensor<T>& image, Trace& tr) const {
        validate_input(cfg_, image.shape());
        tr.enc.assign(static_cast<std::size_t>(cfg_.levels), {});
        std::vector<Tensor<T>> outs;
        Tensor<T> x = image;
        for (int i = 0; i < cfg_.levels; ++i) {
            auto& e = tr.enc[static_cast<std::size_t>(i)];
            e.input = std::move(x);
            e.conv0 = apply_conv(ps, enc_[static_cast<std::size_t>(i)].conv0, e.input);
            relu_inplace(e.conv0);
            e.conv1 = apply_conv(ps, enc_[static_cast<std::size_t>(i)].conv1, e.conv0);
            relu_inplace(e.conv1);
            outs.push_back(e.conv1);
            if (i + 1 < cfg_.levels) x = max_pool2x2(e.conv1, e.pool_argmax);
        }
        return outs;
    }

    // One expansion step producing decoder level `level` from the next-coarser map.
    Tensor<T> decode_step(const ParamStore<T>& ps, int level, const Tensor<T>& coarse, const Tensor<T>& skip,
                          DecoderTrace& d) const {
        if (skip.h() != 2 * coarse.h() || skip.w() != 2 * coarse.w()) {
            throw ShapeError("decode_step: skip " + to_string(skip.shape()) + " is not twice coarse " +
                             to_string(coarse.shape()));
        }
        const auto& refs = dec_.at(static_cast<std::size_t>(level));
        if (coarse.c() != refs.up.cin || skip.c() != refs.up.cout) {
            throw ShapeError("decode_step: channel counts do not follow the ladder at level " + std::to_string(level));
        }
        d.coarse = coarse;
        Tensor<T> up = up_conv2x2<T>(coarse, ps[refs.up.weight].value, ps[refs.up.bias].value, refs.up.cout);
        d.cat = concat_channels(up, skip);
        d.conv0 = apply_conv(ps, refs.conv0, d.cat);
        relu_inplace(d.conv0);
        d.conv1 = apply_conv(ps, refs.conv1, d.conv0);
        relu_inplace(d.conv1);
        return d.conv1;
    }

    // Full pass. Returns feature maps coarsest first: the bottleneck, then
    // each decoder output up to the finest level.
    std::vector<Tensor<T>> forward(const ParamStore<T>& ps, const Tensor<T>& image, Trace& tr) const {
        auto enc_out = encode(ps, image, tr);
        tr.dec.assign(dec_.size(), {});
        std::vector<Tensor<T>> feats;
        feats.push_back(enc_out.back());
        for (int i = cfg_.levels - 2; i >= 0; --i) {
            feats.push_back(decode_step(ps, i, feats.back(), enc_out[static_cast<std::size_t>(i)],
                                        tr.dec[static_cast<std::size_t>(i)]));
        }
        return feats;
    }

    // grad_feats is indexed like forward()'s output (coarsest first); empty
    // tensors mean no gradient from that level.
    void backward(const ParamStore<T>& ps, const Trace& tr, std::vector<Tensor<T>> grad_feats, Gradients<T>& grads) const {
        const int L = cfg_.levels;
        // Gradient into encoder level outputs (skips), indexed by level.
        std::vector<Tensor<T>> g_enc(static_cast<std::size_t>(L));
        auto accumulate = [](Tensor<T>& dst, const Tensor<T>& src) {
            if (src.empty()) return;
            if (dst.empty()) {
                dst = src;
            } else {
                dst += src;
            }
        };
        // Walk the decoder finest → coarsest. grad_feats[L-1-i] is decoder level i.
        Tensor<T> g_coarse;
        for (int i = 0; i <= L - 2; ++i) {
            Tensor<T> g = std::move(grad_feats[static_cast<std::size_t>(L - 1 - i)]);
            accumulate(g, g_coarse);
            g_coarse = Tensor<T>();
            if (g.empty()) continue;
            const auto& refs = dec_[static_cast<std::size_t>(i)];
            const auto& d = tr.dec[static_cast<std::size_t>(i)];
            relu_backward_inplace(d.conv1, g);
            Tensor<T> g0;
            apply_conv_backward(ps, refs.conv1, d.conv0, g, grads, &g0);
            relu_backward_inplace(d.conv0, g0);
            Tensor<T> gcat;
            apply_conv_backward(ps, refs.conv0, d.cat, g0, grads, &gcat);
            Tensor<T> gup, gskip;
            split_channels(gcat, refs.up.cout, gup, gskip);
            accumulate(g_enc[static_cast<std::size_t>(i)], gskip);
            up_conv2x2_backward<T>(d.coarse, ps[refs.up.weight].value, refs.up.cout, gup, grads[refs.up.weight],
                                   grads[refs.up.bias], &g_coarse);
        }
        // g_coarse now holds the gradient into the bottleneck from the decoder.
        accumulate(g_enc[static_cast<std::size_t>(L - 1)], grad_feats[0]);
        accumulate(g_enc[static_cast<std::size_t>(L - 1)], g_coarse);

        Tensor<T> g_down;  // gradient arriving from the next-coarser level through pooling
        for (int i = L - 1; i >= 0; --i) {
            const auto& e = tr.enc[static_cast<std::size_t>(i)];
            Tensor<T> g = std::move(g_enc[static_cast<std::size_t>(i)]);
            if (!g_down.empty()) {
                accumulate(g, max_pool2x2_backward(e.conv1.shape(), e.pool_argmax, g_down));
                g_down = Tensor<T>();
            }
            if (g.empty()) continue;
            const auto& refs = enc_[static_cast<std::size_t>(i)];
            relu_backward_inplace(e.conv1, g);
            Tensor<T> g0;
            apply_conv_backward(ps, refs.conv1, e.conv0, g, grads, &g0);
            relu_backward_inplace(e.conv0, g0);
            Tensor<T>* need_input = i > 0 ? &g_down : nullptr;
            apply_conv_backward(ps, refs.conv0, e.input, g0, grads, need_input);
        }
    }

private:
    struct EncoderRefs {
        ConvRef conv0;
        ConvRef conv1;
    };
    struct DecoderRefs {
        ConvRef up;
        ConvRef conv0;
        ConvRef conv1;
    };

    NetworkConfig cfg_{};
    std::vector<EncoderRefs> enc_;
    std::vector<DecoderRefs> dec_;
};

}  // namespace resseg
