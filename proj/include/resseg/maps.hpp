#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "resseg/tensor.hpp"

namespace resseg {

// Hard {0,1} ground-truth or predicted mask, row-major.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    BinaryMask() = default;
    BinaryMask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
        if (w < 1 || h < 1) throw std::invalid_argument("BinaryMask: dimensions must be >= 1");
    }

    std::uint8_t& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
    std::uint8_t at(int row, int col) const {
        return pixels[static_cast<std::size_t>(row) * width + col];
    }
    std::size_t count() const {
        std::size_t k = 0;
        for (auto p : pixels) k += p;
        return k;
    }
    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// Single-channel probability field with values in [0,1].
template <typename T>
struct ProbMap {
    int width = 0;
    int height = 0;
    std::vector<T> values;

    ProbMap() = default;
    ProbMap(int w, int h, T fill = T(0))
        : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

    T& at(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
    T at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }

    template <typename U>
    ProbMap<U> cast_to() const {
        ProbMap<U> m(width, height);
        for (std::size_t i = 0; i < values.size(); ++i) m.values[i] = static_cast<U>(values[i]);
        return m;
    }

    // Extracts channel 0 of sample `n` from an N×1×H×W tensor.
    static ProbMap from_tensor(const Tensor<T>& t, int n) {
        ProbMap m(t.w(), t.h());
        const T* src = t.channel(n, 0);
        m.values.assign(src, src + t.shape().plane());
        return m;
    }
};

inline void require_same_size(int w0, int h0, int w1, int h1, const char* what) {
    if (w0 != w1 || h0 != h1) {
        throw ShapeError(std::string(what) + ": dimension mismatch " + std::to_string(w0) + "x" +
                         std::to_string(h0) + " vs " + std::to_string(w1) + "x" + std::to_string(h1));
    }
}

}  // namespace resseg
