#pragma once

#include <algorithm>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace resseg {

struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << "[" << s.n << "," << s.c << "," << s.h << "," << s.w << "]";
    return os.str();
}

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense NCHW tensor. Value semantics; storage is contiguous row-major.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
    Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

    const Shape& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
    const T& operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T* sample(int n) { return data_.data() + static_cast<std::size_t>(n) * shape_.c * shape_.plane(); }
    const T* sample(int n) const {
        return data_.data() + static_cast<std::size_t>(n) * shape_.c * shape_.plane();
    }
    T* channel(int n, int c) { return sample(n) + static_cast<std::size_t>(c) * shape_.plane(); }
    const T* channel(int n, int c) const {
        return sample(n) + static_cast<std::size_t>(c) * shape_.plane();
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void reshape_like(const Shape& s) {
        shape_ = s;
        data_.assign(s.size(), T(0));
    }

    // Adds `other` elementwise; shapes must match.
    Tensor& operator+=(const Tensor& other) {
        require_same_shape(*this, other, "tensor +=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

    static void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
        if (!(a.shape_ == b.shape_)) {
            throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape_) + " vs " +
                             to_string(b.shape_));
        }
    }

private:
    std::size_t index(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    Shape shape_{};
    std::vector<T> data_;
};

// Concatenates along the channel axis: output channels are [a ‖ b].
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
        throw ShapeError("concat_channels: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
    const std::size_t pa = static_cast<std::size_t>(a.c()) * a.shape().plane();
    const std::size_t pb = static_cast<std::size_t>(b.c()) * b.shape().plane();
    for (int n = 0; n < a.n(); ++n) {
        std::copy_n(a.sample(n), pa, out.sample(n));
        std::copy_n(b.sample(n), pb, out.sample(n) + pa);
    }
    return out;
}

// Inverse of concat_channels for gradients: splits off the first `ca` channels.
template <typename T>
void split_channels(const Tensor<T>& g, int ca, Tensor<T>& ga, Tensor<T>& gb) {
    const int cb = g.c() - ca;
    ga = Tensor<T>(g.n(), ca, g.h(), g.w());
    gb = Tensor<T>(g.n(), cb, g.h(), g.w());
    const std::size_t pa = static_cast<std::size_t>(ca) * g.shape().plane();
    const std::size_t pb = static_cast<std::size_t>(cb) * g.shape().plane();
    for (int n = 0; n < g.n(); ++n) {
        std::copy_n(g.sample(n), pa, ga.sample(n));
        std::copy_n(g.sample(n) + pa, pb, gb.sample(n));
    }
}

}  // namespace resseg
