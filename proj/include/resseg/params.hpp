#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace resseg {

template <typename T>
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;

    std::size_t size() const { return value.size(); }
};

inline std::size_t shape_size(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

// Ordered, named parameter collection. Registration order is the
// serialization order.
template <typename T>
class ParamStore {
public:
    std::size_t add(std::string name, std::vector<int> shape) {
        if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
        const std::size_t id = params_.size();
        index_.emplace(name, id);
        Param<T> p{std::move(name), std::move(shape), {}};
        p.value.assign(shape_size(p.shape), T(0));
        params_.push_back(std::move(p));
        return id;
    }

    std::size_t id(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Param<T>& operator[](std::size_t i) { return params_[i]; }
    const Param<T>& operator[](std::size_t i) const { return params_[i]; }
    Param<T>& at(const std::string& name) { return params_[id(name)]; }
    const Param<T>& at(const std::string& name) const { return params_[id(name)]; }

    std::size_t count() const { return params_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& p : params_) {
            const std::size_t i = out.add(p.name, p.shape);
            for (std::size_t k = 0; k < p.size(); ++k) out[i].value[k] = static_cast<U>(p.value[k]);
        }
        return out;
    }

private:
    std::vector<Param<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Gradient buffers parallel to a ParamStore.
template <typename T>
class Gradients {
public:
    Gradients() = default;
    explicit Gradients(const ParamStore<T>& params) {
        grads_.reserve(params.count());
        for (const auto& p : params) grads_.emplace_back(p.size(), T(0));
    }

    std::span<T> operator[](std::size_t i) { return grads_[i]; }
    std::span<const T> operator[](std::size_t i) const { return grads_[i]; }
    std::size_t count() const { return grads_.size(); }

    void zero() {
        for (auto& g : grads_) std::fill(g.begin(), g.end(), T(0));
    }

private:
    std::vector<std::vector<T>> grads_;
};

}  // namespace resseg
