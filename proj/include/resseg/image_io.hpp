#pragma once

// 8-bit PNG reading and writing on top of libpng's simplified API.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "resseg/maps.hpp"
#include "resseg/tensor.hpp"

namespace resseg {

class ImageIOError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Failure to produce an output file, as opposed to a bad input.
class ImageWriteError : public ImageIOError {
public:
    using ImageIOError::ImageIOError;
};

struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 (gray) or 3 (RGB)
    std::vector<std::uint8_t> pixels;
};

inline Image8 read_png(const std::string& path, int channels) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw ImageIOError("cannot read PNG " + path + ": " + img.message);
    }
    img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    Image8 out;
    out.width = static_cast<int>(img.width);
    out.height = static_cast<int>(img.height);
    out.channels = channels;
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        throw ImageIOError("cannot decode PNG " + path + ": " + img.message);
    }
    return out;
}

inline void write_png(const std::string& path, const Image8& image) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
        throw ImageWriteError("cannot write PNG " + path + ": " + img.message);
    }
}

inline std::uint8_t to_byte(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

// RGB PNG → 1×3×H×W tensor with values mapped linearly to [0,1].
inline Tensor<float> load_rgb(const std::string& path) {
    const Image8 img = read_png(path, 3);
    Tensor<float> t(1, 3, img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                t(0, c, y, x) = img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] / 255.0f;
            }
        }
    }
    return t;
}

inline void save_rgb(const std::string& path, const Tensor<float>& t) {
    Image8 img{t.w(), t.h(), 3, {}};
    img.pixels.resize(static_cast<std::size_t>(t.w()) * t.h() * 3);
    for (int y = 0; y < t.h(); ++y) {
        for (int x = 0; x < t.w(); ++x) {
            for (int c = 0; c < 3; ++c) {
                img.pixels[(static_cast<std::size_t>(y) * t.w() + x) * 3 + c] = to_byte(t(0, c, y, x));
            }
        }
    }
    write_png(path, img);
}

// Any nonzero gray value loads as foreground.
inline BinaryMask load_mask(const std::string& path) {
    const Image8 img = read_png(path, 1);
    BinaryMask m(img.width, img.height);
    for (std::size_t i = 0; i < m.pixels.size(); ++i) m.pixels[i] = img.pixels[i] != 0 ? 1 : 0;
    return m;
}

inline void save_mask(const std::string& path, const BinaryMask& m) {
    Image8 img{m.width, m.height, 1, {}};
    img.pixels.resize(m.pixels.size());
    for (std::size_t i = 0; i < m.pixels.size(); ++i) img.pixels[i] = m.pixels[i] ? 255 : 0;
    write_png(path, img);
}

// Probability ×255, rounded.
template <typename T>
Image8 prob_to_gray(const ProbMap<T>& p) {
    Image8 img{p.width, p.height, 1, {}};
    img.pixels.resize(p.values.size());
    for (std::size_t i = 0; i < p.values.size(); ++i) img.pixels[i] = to_byte(static_cast<double>(p.values[i]));
    return img;
}

}  // namespace resseg
