#pragma once

// Residual prob-map refinement heads and the four network assemblies built
// on the shared backbone.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "resseg/backbone.hpp"
#include "resseg/layers.hpp"
#include "resseg/maps.hpp"
#include "resseg/params.hpp"

namespace resseg {

enum class UpdateScheme { Fixed, NonFixed };

enum class ModelKind { ResSegFixed, ResSegNonFixed, ResSegHorz, UNetBaseline };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::ResSegFixed: return "ResSegFixed";
        case ModelKind::ResSegNonFixed: return "ResSegNonFixed";
        case ModelKind::ResSegHorz: return "ResSegHorz";
        case ModelKind::UNetBaseline: return "UNetBaseline";
    }
    return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
    for (auto k : {ModelKind::ResSegFixed, ModelKind::ResSegNonFixed, ModelKind::ResSegHorz, ModelKind::UNetBaseline}) {
        if (to_string(k) == s) return k;
    }
    throw ConfigError("unknown model '" + s + "' (expected ResSegFixed, ResSegNonFixed, ResSegHorz or UNetBaseline)");
}

inline UpdateScheme scheme_of(ModelKind k) {
    return k == ModelKind::ResSegNonFixed ? UpdateScheme::NonFixed : UpdateScheme::Fixed;
}

// 1×1 convolution to one channel followed by the logistic sigmoid.
template <typename T>
struct SigmoidHead {
    ConvRef conv;

    struct Trace {
        Tensor<T> features;
        Tensor<T> out;
    };

    Tensor<T> forward(const ParamStore<T>& ps, const Tensor<T>& features, Trace& tr) const {
        tr.features = features;
        tr.out = apply_conv(ps, conv, features);
        for (auto& v : tr.out.values()) v = sigmoid(v);
        return tr.out;
    }

    // Returns the gradient into the features.
    Tensor<T> backward(const ParamStore<T>& ps, const Trace& tr, Tensor<T> grad, Gradients<T>& grads) const {
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= tr.out[i] * (T(1) - tr.out[i]);
        Tensor<T> gf;
        apply_conv_backward(ps, conv, tr.features, grad, grads, &gf);
        return gf;
    }
};

// P↑ = bilinear 2× (or identity) of the coarse map; R = tanh(conv3×3([F ‖ P↑]));
// out = truncated_relu(P↑ + R). Under Fixed, P↑ carries no gradient back to
// the coarse map from either use.
template <typename T>
struct RefineUnit {
    ConvRef conv;

    struct Trace {
        Shape coarse_shape;
        Tensor<T> cat;       // [features ‖ P↑]
        Tensor<T> residual;  // tanh output
        Tensor<T> sum;       // P↑ + R, before truncation
        Tensor<T> out;
    };

    Tensor<T> forward(const ParamStore<T>& ps, const Tensor<T>& prob_coarse, const Tensor<T>& features,
                      Trace& tr) const {
        const bool same = prob_coarse.h() == features.h() && prob_coarse.w() == features.w();
        const bool twice = features.h() == 2 * prob_coarse.h() && features.w() == 2 * prob_coarse.w();
        if (!same && !twice) {
            throw ShapeError("refine: features " + to_string(features.shape()) + " are neither 1x nor 2x prob-map " +
                             to_string(prob_coarse.shape()));
        }
        tr.coarse_shape = prob_coarse.shape();
        Tensor<T> up = bilinear_resize(prob_coarse, features.h(), features.w());
        tr.cat = concat_channels(features, up);
        tr.residual = apply_conv(ps, conv, tr.cat);
        for (auto& v : tr.residual.values()) v = std::tanh(v);
        tr.sum = up;
        tr.sum += tr.residual;
        tr.out = Tensor<T>(tr.sum.shape());
        for (std::size_t i = 0; i < tr.sum.size(); ++i) tr.out[i] = truncated_relu(tr.sum[i]);
        return tr.out;
    }

    struct Grads {
        Tensor<T> features;
        Tensor<T> prob_coarse;  // empty under Fixed
    };

    Grads backward(const ParamStore<T>& ps, const Trace& tr, const Tensor<T>& grad, UpdateScheme scheme,
                   Gradients<T>& grads) const {
        Tensor<T> gsum(grad.shape());
        for (std::size_t i = 0; i < grad.size(); ++i) gsum[i] = grad[i] * truncated_relu_grad(tr.sum[i]);
        Tensor<T> gz(gsum.shape());
        for (std::size_t i = 0; i < gsum.size(); ++i) gz[i] = gsum[i] * (T(1) - tr.residual[i] * tr.residual[i]);
        Tensor<T> gcat;
        apply_conv_backward(ps, conv, tr.cat, gz, grads, &gcat);
        Grads out;
        Tensor<T> gup;
        split_channels(gcat, tr.cat.c() - 1, out.features, gup);
        if (scheme == UpdateScheme::NonFixed) {
            gup += gsum;
            out.prob_coarse = bilinear_resize_backward(tr.coarse_shape, gup);
        }
        return out;
    }
};

// Supervised prob-maps, coarsest first; the last entry is the final map.
template <typename T>
struct PyramidOutput {
    std::vector<Tensor<T>> levels;

    const Tensor<T>& final_map() const { return levels.back(); }
    std::size_t size() const { return levels.size(); }
};

template <typename T>
class SegmentationNet {
public:
    struct Trace {
        typename Backbone<T>::Trace backbone;
        std::vector<Tensor<T>> features;
        typename SigmoidHead<T>::Trace head;
        std::vector<typename RefineUnit<T>::Trace> refine;
    };

    SegmentationNet(ModelKind kind, const NetworkConfig& cfg, int horz_stages = 5)
        : kind_(kind), cfg_(cfg), backbone_(cfg, params_) {
        const int L = cfg.levels;
        switch (kind) {
            case ModelKind::ResSegFixed:
            case ModelKind::ResSegNonFixed:
                head_.conv = add_conv(params_, "head.bottom", cfg.channels(L - 1), 1, 1);
                for (int k = 1; k < L; ++k) {
                    refine_.push_back({add_conv(params_, "head.refine" + std::to_string(k), cfg.channels(L - 1 - k) + 1,
                                                1, 3)});
                }
                break;
            case ModelKind::ResSegHorz:
                if (horz_stages < 1) throw ConfigError("horizontal variant needs at least one refine stage");
                head_.conv = add_conv(params_, "head.seed", cfg.channels(0), 1, 1);
                for (int k = 1; k <= horz_stages; ++k) {
                    refine_.push_back({add_conv(params_, "head.refine" + std::to_string(k), cfg.channels(0) + 1, 1, 3)});
                }
                break;
            case ModelKind::UNetBaseline:
                head_.conv = add_conv(params_, "head.out", cfg.channels(0), 1, 1);
                break;
        }
    }

    ModelKind kind() const { return kind_; }
    UpdateScheme scheme() const { return scheme_of(kind_); }
    const NetworkConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const Backbone<T>& backbone() const { return backbone_; }

    // Number of supervised prob-maps.
    std::size_t output_count() const { return 1 + refine_.size(); }

    void init(std::uint64_t seed) {
        Rng rng(seed);
        backbone_.init(params_, rng);
        he_init(params_, head_.conv, rng);
        for (const auto& r : refine_) he_init(params_, r.conv, rng);
    }

    // Parameter ids of the head producing output `level` (coarsest = 0).
    std::vector<std::size_t> head_params(std::size_t level) const {
        const ConvRef& c = level == 0 ? head_.conv : refine_.at(level - 1).conv;
        return {c.weight, c.bias};
    }

    void zero_heads() {
        for (std::size_t k = 0; k < output_count(); ++k) {
            for (auto id : head_params(k)) std::fill(params_[id].value.begin(), params_[id].value.end(), T(0));
        }
    }

    // With `pinned`, refine stage k reads pinned[k] as its coarse map instead
    // of the previous output. Holding those at their current values gives the
    // function whose gradient the Fixed scheme follows.
    PyramidOutput<T> forward(const Tensor<T>& image, Trace& tr, const std::vector<Tensor<T>>* pinned = nullptr) const {
        if (pinned && pinned->size() != refine_.size()) throw ShapeError("forward: one pinned map per refine stage");
        tr.features = backbone_.forward(params_, image, tr.backbone);
        tr.refine.assign(refine_.size(), {});
        const bool pyramid = kind_ == ModelKind::ResSegFixed || kind_ == ModelKind::ResSegNonFixed;
        PyramidOutput<T> out;
        out.levels.push_back(head_.forward(params_, pyramid ? tr.features.front() : tr.features.back(), tr.head));
        for (std::size_t k = 0; k < refine_.size(); ++k) {
            const Tensor<T>& coarse = pinned ? (*pinned)[k] : out.levels.back();
            const Tensor<T>& feats = pyramid ? tr.features[k + 1] : tr.features.back();
            out.levels.push_back(refine_[k].forward(params_, coarse, feats, tr.refine[k]));
        }
        return out;
    }

    PyramidOutput<T> forward(const Tensor<T>& image) const {
        Trace tr;
        return forward(image, tr);
    }

    // grad_levels[k] is ∂loss/∂(output k); empty tensors contribute nothing.
    void backward(const Trace& tr, const std::vector<Tensor<T>>& grad_levels, Gradients<T>& grads) const {
        if (grad_levels.size() != output_count()) throw ShapeError("backward: one gradient per output is required");
        const bool pyramid = kind_ == ModelKind::ResSegFixed || kind_ == ModelKind::ResSegNonFixed;
        std::vector<Tensor<T>> g_feats(tr.features.size());
        auto add_to = [](Tensor<T>& dst, const Tensor<T>& src) {
            if (src.empty()) return;
            if (dst.empty()) {
                dst = src;
            } else {
                dst += src;
            }
        };
        Tensor<T> carried;
        for (std::size_t k = refine_.size(); k >= 1; --k) {
            Tensor<T> g = grad_levels[k];
            add_to(g, carried);
            carried = Tensor<T>();
            if (g.empty()) continue;
            auto r = refine_[k - 1].backward(params_, tr.refine[k - 1], g, scheme(), grads);
            add_to(g_feats[pyramid ? k : g_feats.size() - 1], r.features);
            carried = std::move(r.prob_coarse);
        }
        Tensor<T> g = grad_levels[0];
        add_to(g, carried);
        if (!g.empty()) {
            add_to(g_feats[pyramid ? 0 : g_feats.size() - 1], head_.backward(params_, tr.head, g, grads));
        }
        backbone_.backward(params_, tr.backbone, std::move(g_feats), grads);
    }

private:
    ModelKind kind_;
    NetworkConfig cfg_;
    ParamStore<T> params_;
    Backbone<T> backbone_;
    SigmoidHead<T> head_;
    std::vector<RefineUnit<T>> refine_;
};

template <typename T>
PyramidOutput<T> forward_ressegnet(const SegmentationNet<T>& net, const Tensor<T>& image) {
    if (net.kind() != ModelKind::ResSegFixed && net.kind() != ModelKind::ResSegNonFixed) {
        throw ConfigError("forward_ressegnet needs a ResSegFixed or ResSegNonFixed network");
    }
    return net.forward(image);
}

template <typename T>
PyramidOutput<T> forward_horz(const SegmentationNet<T>& net, const Tensor<T>& image) {
    if (net.kind() != ModelKind::ResSegHorz) throw ConfigError("forward_horz needs a ResSegHorz network");
    return net.forward(image);
}

template <typename T>
Tensor<T> forward_unet_baseline(const SegmentationNet<T>& net, const Tensor<T>& image) {
    if (net.kind() != ModelKind::UNetBaseline) throw ConfigError("forward_unet_baseline needs a UNetBaseline network");
    return net.forward(image).final_map();
}

}  // namespace resseg
