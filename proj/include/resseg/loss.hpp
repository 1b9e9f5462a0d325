#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "resseg/layers.hpp"
#include "resseg/maps.hpp"

namespace resseg {

inline constexpr double kDiceSmoothing = 1e-6;

class LossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One weight per supervised prob-map, finest last.
struct LossWeights {
    std::vector<double> per_level;

    // 1/4 for every intermediate level, 1 for the final level.
    static LossWeights standard(std::size_t levels) {
        LossWeights w;
        w.per_level.assign(levels, 0.25);
        if (levels > 0) w.per_level.back() = 1.0;
        return w;
    }

    double sum() const { return std::accumulate(per_level.begin(), per_level.end(), 0.0); }
};

inline void validate(const LossWeights& w) {
    if (w.per_level.empty()) throw LossError("loss weights are empty");
    for (double v : w.per_level) {
        if (!(v > 0.0)) throw LossError("loss weights must be positive");
    }
}

struct LevelLoss {
    int level = 0;
    double dice = 0.0;
};

// Scale factor from `from` to `to` if it is a power of two (including 1), else 0.
inline int power_of_two_scale(int from, int to) {
    if (from <= 0 || to < from || to % from != 0) return 0;
    const int s = to / from;
    return (s & (s - 1)) == 0 ? s : 0;
}

// Single bilinear pass straight to the ground-truth size.
template <typename T>
ProbMap<T> upsample_to_gt(const ProbMap<T>& prob, int gt_width, int gt_height) {
    const int sx = power_of_two_scale(prob.width, gt_width);
    const int sy = power_of_two_scale(prob.height, gt_height);
    if (sx == 0 || sy == 0 || sx != sy) {
        throw LossError("upsample_to_gt: " + std::to_string(prob.width) + "x" + std::to_string(prob.height) + " -> " +
                        std::to_string(gt_width) + "x" + std::to_string(gt_height) +
                        " is not a power-of-two integral scale");
    }
    if (sx == 1) return prob;
    Tensor<T> in(1, 1, prob.height, prob.width);
    std::copy(prob.values.begin(), prob.values.end(), in.data());
    const Tensor<T> out = bilinear_resize(in, gt_height, gt_width);
    ProbMap<T> r(gt_width, gt_height);
    std::copy(out.data(), out.data() + out.size(), r.values.begin());
    return r;
}

// −(2·Σ sᵢrᵢ + ε) / (Σ sᵢ + Σ rᵢ + ε), over raw spans.
template <typename T>
T dice_loss(const T* pred, const std::uint8_t* target, std::size_t n, double eps = kDiceSmoothing) {
    double inter = 0.0, ssum = 0.0, rsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = static_cast<double>(pred[i]);
        const double r = target[i];
        inter += s * r;
        ssum += s;
        rsum += r;
    }
    return static_cast<T>(-(2.0 * inter + eps) / (ssum + rsum + eps));
}

template <typename T>
T dice_loss(const ProbMap<T>& pred, const BinaryMask& target) {
    require_same_size(pred.width, pred.height, target.width, target.height, "dice_loss");
    return dice_loss(pred.values.data(), target.pixels.data(), pred.values.size());
}

// Writes scale · ∂(dice_loss)/∂pred into grad and returns the loss.
template <typename T>
T dice_loss_grad(const T* pred, const std::uint8_t* target, std::size_t n, T scale, T* grad,
                 double eps = kDiceSmoothing) {
    double inter = 0.0, ssum = 0.0, rsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = static_cast<double>(pred[i]);
        inter += s * target[i];
        ssum += s;
        rsum += target[i];
    }
    const double num = 2.0 * inter + eps;
    const double den = ssum + rsum + eps;
    // d/ds_i [−num/den] = −(2 r_i · den − num) / den²
    const double a = -2.0 / den;
    const double b = num / (den * den);
    for (std::size_t i = 0; i < n; ++i) grad[i] = static_cast<T>(static_cast<double>(scale) * (a * target[i] + b));
    return static_cast<T>(-num / den);
}

// Σ wᵢ·Dᵢ with Dᵢ the (non-positive) per-level Dice loss.
inline double total_loss(const std::vector<LevelLoss>& levels, const LossWeights& weights) {
    if (levels.size() != weights.per_level.size()) {
        throw LossError("total_loss: " + std::to_string(levels.size()) + " level losses but " +
                        std::to_string(weights.per_level.size()) + " weights");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < levels.size(); ++i) total += weights.per_level[i] * levels[i].dice;
    return total;
}

// Foreground iff prob ≥ threshold.
template <typename T>
BinaryMask binarize(const ProbMap<T>& prob, double threshold = 0.5) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw LossError("binarize: threshold must lie in (0,1)");
    BinaryMask m(prob.width, prob.height);
    for (std::size_t i = 0; i < prob.values.size(); ++i) {
        m.pixels[i] = static_cast<double>(prob.values[i]) >= threshold ? 1 : 0;
    }
    return m;
}

// 2|P∩T| / (|P|+|T|); both empty counts as a perfect match.
inline double dsc(const BinaryMask& pred, const BinaryMask& target) {
    require_same_size(pred.width, pred.height, target.width, target.height, "dsc");
    std::size_t inter = 0, p = 0, t = 0;
    for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
        inter += static_cast<std::size_t>(pred.pixels[i] & target.pixels[i]);
        p += pred.pixels[i];
        t += target.pixels[i];
    }
    if (p + t == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p + t);
}

}  // namespace resseg
