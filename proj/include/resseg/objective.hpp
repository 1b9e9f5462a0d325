#pragma once

// Multi-resolution Dice objective over a minibatch: every supervised map is
// bilinearly upsampled to ground-truth resolution, scored with the Dice loss,
// and the levels are combined with their weights. The batch value is the mean
// over samples.

#include <vector>

#include "resseg/data.hpp"
#include "resseg/loss.hpp"
#include "resseg/resseg.hpp"

namespace resseg {

template <typename T>
struct Batch {
    Tensor<T> images;                // N×C×H×W
    std::vector<BinaryMask> masks;  // N masks of H×W
};

template <typename T>
Batch<T> make_batch(const std::vector<Patch>& patches, std::size_t begin, std::size_t end) {
    Batch<T> b;
    const Shape s = patches.at(begin).image.shape();
    b.images = Tensor<T>(static_cast<int>(end - begin), s.c, s.h, s.w);
    const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
    for (std::size_t i = begin; i < end; ++i) {
        const auto& src = patches[i].image;
        T* dst = b.images.sample(static_cast<int>(i - begin));
        for (std::size_t k = 0; k < per; ++k) dst[k] = static_cast<T>(src[k]);
        b.masks.push_back(patches[i].mask);
    }
    return b;
}

struct ObjectiveValue {
    double total = 0.0;
    std::vector<double> level_dice;  // batch mean per level, coarsest first
};

// Scores an already computed pyramid against the batch masks. When
// `grad_levels` is given, fills ∂objective/∂(each output map) for the levels
// selected by `level_mask` (all when null); the returned value covers all.
template <typename T>
ObjectiveValue score_pyramid(const PyramidOutput<T>& out, const Batch<T>& batch, const LossWeights& weights,
                             std::vector<Tensor<T>>* grad_levels = nullptr,
                             const std::vector<bool>* level_mask = nullptr) {
    if (weights.per_level.size() != out.size()) {
        throw LossError("objective: " + std::to_string(weights.per_level.size()) + " weights for " +
                        std::to_string(out.size()) + " outputs");
    }
    const int n = batch.images.n();
    const int gh = batch.images.h(), gw = batch.images.w();
    const std::size_t plane = static_cast<std::size_t>(gh) * gw;

    ObjectiveValue val;
    if (grad_levels) grad_levels->assign(out.size(), Tensor<T>());
    for (std::size_t l = 0; l < out.size(); ++l) {
        const Tensor<T>& level = out.levels[l];
        if (power_of_two_scale(level.h(), gh) == 0 || power_of_two_scale(level.w(), gw) == 0) {
            throw LossError("objective: level " + std::to_string(l) + " cannot be upsampled to ground truth");
        }
        const Tensor<T> up = bilinear_resize(level, gh, gw);
        const bool want_grad = grad_levels && (!level_mask || (*level_mask)[l]);
        Tensor<T> g_up = want_grad ? Tensor<T>(up.shape()) : Tensor<T>();
        const double w = weights.per_level[l];
        double dice_sum = 0.0;
        for (int s = 0; s < n; ++s) {
            const auto& m = batch.masks[static_cast<std::size_t>(s)];
            require_same_size(m.width, m.height, gw, gh, "objective mask");
            if (want_grad) {
                dice_sum += dice_loss_grad(up.channel(s, 0), m.pixels.data(), plane, static_cast<T>(w / n),
                                           g_up.channel(s, 0));
            } else {
                dice_sum += dice_loss(up.channel(s, 0), m.pixels.data(), plane);
            }
        }
        val.level_dice.push_back(dice_sum / n);
        val.total += w * dice_sum / n;
        if (want_grad) (*grad_levels)[l] = bilinear_resize_backward(level.shape(), g_up);
    }
    return val;
}

// Forward, score and (when `grads` is given) accumulate the parameter gradient.
template <typename T>
ObjectiveValue objective(const SegmentationNet<T>& net, const Batch<T>& batch, const LossWeights& weights,
                         Gradients<T>* grads = nullptr, const std::vector<bool>* level_mask = nullptr) {
    typename SegmentationNet<T>::Trace tr;
    const PyramidOutput<T> out = net.forward(batch.images, tr);
    if (!grads) return score_pyramid(out, batch, weights);
    std::vector<Tensor<T>> grad_levels;
    const ObjectiveValue val = score_pyramid(out, batch, weights, &grad_levels, level_mask);
    net.backward(tr, grad_levels, *grads);
    return val;
}

}  // namespace resseg
