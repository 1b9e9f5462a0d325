#pragma once

// Stateless forward/backward kernels. Backward functions accumulate into
// parameter gradients and overwrite input gradients.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "resseg/tensor.hpp"

namespace resseg {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

// Unfolds one C×H×W sample into a (C·k·k)×(H·W) matrix with zero "same" padding.
template <typename T>
void im2col(const T* src, int channels, int h, int w, int k, T* col) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < channels; ++c) {
        const T* plane = src + c * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * hw;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    T* dst = row + static_cast<std::size_t>(y) * w;
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h || x0 >= x1) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    std::fill(dst, dst + x0, T(0));
                    std::copy(plane + static_cast<std::size_t>(sy) * w + x0 + dx,
                              plane + static_cast<std::size_t>(sy) * w + x1 + dx, dst + x0);
                    std::fill(dst + x1, dst + w, T(0));
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int channels, int h, int w, int k, T* dst) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < channels; ++c) {
        T* plane = dst + c * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * hw;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    const T* s = row + static_cast<std::size_t>(y) * w;
                    T* d = plane + static_cast<std::size_t>(sy) * w + dx;
                    for (int x = x0; x < x1; ++x) d[x] += s[x];
                }
            }
        }
    }
}

}  // namespace detail

// Same-padded k×k convolution, stride 1. weight is [Cout, Cin, k, k].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias, int cout, int k) {
    const int cin = in.c(), h = in.h(), w = in.w();
    const int rows = cin * k * k;
    const std::size_t hw = in.shape().plane();
    if (weight.size() != static_cast<std::size_t>(cout) * rows) {
        throw ShapeError("conv2d: weight size does not match " + to_string(in.shape()));
    }
    Tensor<T> out(in.n(), cout, h, w);
    std::vector<T> col(k == 1 ? 0 : static_cast<std::size_t>(rows) * hw);
    ConstMatrixMap<T> W(weight.data(), cout, rows);
    for (int n = 0; n < in.n(); ++n) {
        const T* cols = in.sample(n);
        if (k != 1) {
            detail::im2col(in.sample(n), cin, h, w, k, col.data());
            cols = col.data();
        }
        MatrixMap<T> O(out.sample(n), cout, static_cast<Eigen::Index>(hw));
        O.noalias() = W * ConstMatrixMap<T>(cols, rows, static_cast<Eigen::Index>(hw));
        for (int c = 0; c < cout; ++c) O.row(c).array() += bias[static_cast<std::size_t>(c)];
    }
    return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, int cout, int k, const Tensor<T>& grad_out,
                     std::span<T> grad_weight, std::span<T> grad_bias, Tensor<T>* grad_in) {
    const int cin = in.c(), h = in.h(), w = in.w();
    const int rows = cin * k * k;
    const auto hw = static_cast<Eigen::Index>(in.shape().plane());
    std::vector<T> col(k == 1 ? 0 : static_cast<std::size_t>(rows) * hw);
    std::vector<T> gcol(grad_in && k != 1 ? static_cast<std::size_t>(rows) * hw : 0);
    ConstMatrixMap<T> W(weight.data(), cout, rows);
    MatrixMap<T> GW(grad_weight.data(), cout, rows);
    if (grad_in) *grad_in = Tensor<T>(in.shape());
    for (int n = 0; n < in.n(); ++n) {
        const T* cols = in.sample(n);
        if (k != 1) {
            detail::im2col(in.sample(n), cin, h, w, k, col.data());
            cols = col.data();
        }
        ConstMatrixMap<T> G(grad_out.sample(n), cout, hw);
        GW.noalias() += G * ConstMatrixMap<T>(cols, rows, hw).transpose();
        // Plain loop: Eigen's vectorized sum depends on buffer alignment, which
        // would make repeated runs differ in the last bits.
        for (int c = 0; c < cout; ++c) {
            const T* g = grad_out.channel(n, c);
            T s = T(0);
            for (Eigen::Index i = 0; i < hw; ++i) s += g[i];
            grad_bias[static_cast<std::size_t>(c)] += s;
        }
        if (grad_in) {
            if (k == 1) {
                MatrixMap<T>(grad_in->sample(n), rows, hw).noalias() = W.transpose() * G;
            } else {
                MatrixMap<T>(gcol.data(), rows, hw).noalias() = W.transpose() * G;
                detail::col2im_add(gcol.data(), cin, h, w, k, grad_in->sample(n));
            }
        }
    }
}

// 2×2 stride-2 transposed convolution. weight is [Cin, Cout, 2, 2].
template <typename T>
Tensor<T> up_conv2x2(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias, int cout) {
    const int cin = in.c(), h = in.h(), w = in.w();
    const auto hw = static_cast<Eigen::Index>(in.shape().plane());
    if (weight.size() != static_cast<std::size_t>(cin) * cout * 4) throw ShapeError("up_conv2x2: weight size");
    Tensor<T> out(in.n(), cout, 2 * h, 2 * w);
    ConstMatrixMap<T> W(weight.data(), cin, cout * 4);
    RowMatrix<T> tmp(cout * 4, hw);
    for (int n = 0; n < in.n(); ++n) {
        tmp.noalias() = W.transpose() * ConstMatrixMap<T>(in.sample(n), cin, hw);
        for (int c = 0; c < cout; ++c) {
            T* plane = out.channel(n, c);
            const T b = bias[static_cast<std::size_t>(c)];
            for (int a = 0; a < 2; ++a) {
                for (int bx = 0; bx < 2; ++bx) {
                    const T* src = tmp.data() + (static_cast<std::size_t>(c) * 4 + a * 2 + bx) * hw;
                    for (int y = 0; y < h; ++y) {
                        T* dst = plane + static_cast<std::size_t>(2 * y + a) * (2 * w) + bx;
                        const T* s = src + static_cast<std::size_t>(y) * w;
                        for (int x = 0; x < w; ++x) dst[2 * x] = s[x] + b;
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
void up_conv2x2_backward(const Tensor<T>& in, std::span<const T> weight, int cout, const Tensor<T>& grad_out,
                         std::span<T> grad_weight, std::span<T> grad_bias, Tensor<T>* grad_in) {
    const int cin = in.c(), h = in.h(), w = in.w();
    const auto hw = static_cast<Eigen::Index>(in.shape().plane());
    ConstMatrixMap<T> W(weight.data(), cin, cout * 4);
    MatrixMap<T> GW(grad_weight.data(), cin, cout * 4);
    RowMatrix<T> g(cout * 4, hw);
    if (grad_in) *grad_in = Tensor<T>(in.shape());
    for (int n = 0; n < in.n(); ++n) {
        for (int c = 0; c < cout; ++c) {
            const T* plane = grad_out.channel(n, c);
            T bsum = T(0);
            for (int a = 0; a < 2; ++a) {
                for (int bx = 0; bx < 2; ++bx) {
                    T* dst = g.data() + (static_cast<std::size_t>(c) * 4 + a * 2 + bx) * hw;
                    for (int y = 0; y < h; ++y) {
                        const T* s = plane + static_cast<std::size_t>(2 * y + a) * (2 * w) + bx;
                        T* d = dst + static_cast<std::size_t>(y) * w;
                        for (int x = 0; x < w; ++x) {
                            d[x] = s[2 * x];
                            bsum += s[2 * x];
                        }
                    }
                }
            }
            grad_bias[static_cast<std::size_t>(c)] += bsum;
        }
        ConstMatrixMap<T> X(in.sample(n), cin, hw);
        GW.noalias() += X * g.transpose();
        if (grad_in) MatrixMap<T>(grad_in->sample(n), cin, hw).noalias() = W * g;
    }
}

// 2×2 max pooling, stride 2. `argmax` records the winning offset per output.
template <typename T>
Tensor<T> max_pool2x2(const Tensor<T>& in, std::vector<std::uint8_t>& argmax) {
    if (in.h() % 2 != 0 || in.w() % 2 != 0) throw ShapeError("max_pool2x2: odd spatial size " + to_string(in.shape()));
    const int ho = in.h() / 2, wo = in.w() / 2;
    Tensor<T> out(in.n(), in.c(), ho, wo);
    argmax.assign(out.size(), 0);
    std::size_t o = 0;
    for (int n = 0; n < in.n(); ++n) {
        for (int c = 0; c < in.c(); ++c) {
            const T* p = in.channel(n, c);
            for (int y = 0; y < ho; ++y) {
                for (int x = 0; x < wo; ++x, ++o) {
                    const T* r0 = p + static_cast<std::size_t>(2 * y) * in.w() + 2 * x;
                    const T* r1 = r0 + in.w();
                    const T v[4] = {r0[0], r0[1], r1[0], r1[1]};
                    std::uint8_t best = 0;
                    for (std::uint8_t k = 1; k < 4; ++k) {
                        if (v[k] > v[best]) best = k;
                    }
                    argmax[o] = best;
                    out[o] = v[best];
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> max_pool2x2_backward(const Shape& in_shape, const std::vector<std::uint8_t>& argmax, const Tensor<T>& grad_out) {
    Tensor<T> g(in_shape);
    const int ho = grad_out.h(), wo = grad_out.w();
    std::size_t o = 0;
    for (int n = 0; n < grad_out.n(); ++n) {
        for (int c = 0; c < grad_out.c(); ++c) {
            T* p = g.channel(n, c);
            for (int y = 0; y < ho; ++y) {
                for (int x = 0; x < wo; ++x, ++o) {
                    const int a = argmax[o];
                    p[static_cast<std::size_t>(2 * y + a / 2) * in_shape.w + 2 * x + a % 2] += grad_out[o];
                }
            }
        }
    }
    return g;
}

template <typename T>
void relu_inplace(Tensor<T>& t) {
    for (auto& v : t.values()) v = v > T(0) ? v : T(0);
}

// Gradient through ReLU given its output.
template <typename T>
void relu_backward_inplace(const Tensor<T>& out, Tensor<T>& grad) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(out[i] > T(0))) grad[i] = T(0);
    }
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// max(min(x, 1), 0).
template <typename T>
T truncated_relu(T x) {
    return std::max(std::min(x, T(1)), T(0));
}

// Derivative 1 on the open interval (0,1); 0 elsewhere, including both kinks.
template <typename T>
T truncated_relu_grad(T x) {
    return (x > T(0) && x < T(1)) ? T(1) : T(0);
}

namespace detail {

struct BilinearTap {
    int i0 = 0;
    int i1 = 0;
    double frac = 0.0;
};

// align_corners = false: output centre o maps to source (o + 0.5)/scale − 0.5,
// clamped at the borders.
inline std::vector<BilinearTap> bilinear_taps(int in_size, int out_size) {
    std::vector<BilinearTap> taps(static_cast<std::size_t>(out_size));
    const double scale = static_cast<double>(in_size) / out_size;
    for (int o = 0; o < out_size; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in_size - 1) i0 = in_size - 1;
        const int i1 = std::min(i0 + 1, in_size - 1);
        taps[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
    }
    return taps;
}

}  // namespace detail

// Single-pass bilinear resize of every channel to out_h × out_w.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& in, int out_h, int out_w) {
    if (out_h == in.h() && out_w == in.w()) return in;
    const auto ty = detail::bilinear_taps(in.h(), out_h);
    const auto tx = detail::bilinear_taps(in.w(), out_w);
    Tensor<T> out(in.n(), in.c(), out_h, out_w);
    for (int n = 0; n < in.n(); ++n) {
        for (int c = 0; c < in.c(); ++c) {
            const T* p = in.channel(n, c);
            T* q = out.channel(n, c);
            for (int y = 0; y < out_h; ++y) {
                const auto& a = ty[static_cast<std::size_t>(y)];
                const T fy = static_cast<T>(a.frac);
                const T* r0 = p + static_cast<std::size_t>(a.i0) * in.w();
                const T* r1 = p + static_cast<std::size_t>(a.i1) * in.w();
                for (int x = 0; x < out_w; ++x) {
                    const auto& b = tx[static_cast<std::size_t>(x)];
                    const T fx = static_cast<T>(b.frac);
                    const T top = r0[b.i0] + fx * (r0[b.i1] - r0[b.i0]);
                    const T bot = r1[b.i0] + fx * (r1[b.i1] - r1[b.i0]);
                    q[static_cast<std::size_t>(y) * out_w + x] = top + fy * (bot - top);
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Shape& in_shape, const Tensor<T>& grad_out) {
    if (grad_out.h() == in_shape.h && grad_out.w() == in_shape.w) return grad_out;
    const auto ty = detail::bilinear_taps(in_shape.h, grad_out.h());
    const auto tx = detail::bilinear_taps(in_shape.w, grad_out.w());
    Tensor<T> g(in_shape);
    for (int n = 0; n < grad_out.n(); ++n) {
        for (int c = 0; c < grad_out.c(); ++c) {
            const T* q = grad_out.channel(n, c);
            T* p = g.channel(n, c);
            for (int y = 0; y < grad_out.h(); ++y) {
                const auto& a = ty[static_cast<std::size_t>(y)];
                const T fy = static_cast<T>(a.frac);
                T* r0 = p + static_cast<std::size_t>(a.i0) * in_shape.w;
                T* r1 = p + static_cast<std::size_t>(a.i1) * in_shape.w;
                for (int x = 0; x < grad_out.w(); ++x) {
                    const auto& b = tx[static_cast<std::size_t>(x)];
                    const T fx = static_cast<T>(b.frac);
                    const T v = q[static_cast<std::size_t>(y) * grad_out.w() + x];
                    const T top = v * (T(1) - fy);
                    const T bot = v * fy;
                    r0[b.i0] += top * (T(1) - fx);
                    r0[b.i1] += top * fx;
                    r1[b.i0] += bot * (T(1) - fx);
                    r1[b.i1] += bot * fx;
                }
            }
        }
    }
    return g;
}

}  // namespace resseg
