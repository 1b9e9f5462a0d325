#pragma once

#include <cmath>
#include <vector>

#include "resseg/params.hpp"

namespace resseg {

struct AdamOptions {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with bias-corrected moment estimates.
template <typename T>
class Adam {
public:
    Adam(const ParamStore<T>& params, AdamOptions opts) : opts_(opts) {
        for (const auto& p : params) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    void step(ParamStore<T>& params, const Gradients<T>& grads) {
        ++t_;
        const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.count(); ++i) {
            auto& value = params[i].value;
            const auto g = grads[i];
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < value.size(); ++k) {
                const double gk = static_cast<double>(g[k]);
                m[k] = opts_.beta1 * m[k] + (1.0 - opts_.beta1) * gk;
                v[k] = opts_.beta2 * v[k] + (1.0 - opts_.beta2) * gk * gk;
                const double update = opts_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + opts_.epsilon);
                value[k] = static_cast<T>(static_cast<double>(value[k]) - update);
            }
        }
    }

    long steps() const { return t_; }

private:
    AdamOptions opts_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    long t_ = 0;
};

// Plain gradient descent, used for single-step descent checks.
template <typename T>
void sgd_step(ParamStore<T>& params, const Gradients<T>& grads, double lr) {
    for (std::size_t i = 0; i < params.count(); ++i) {
        auto& value = params[i].value;
        const auto g = grads[i];
        for (std::size_t k = 0; k < value.size(); ++k) value[k] = static_cast<T>(value[k] - lr * g[k]);
    }
}

}  // namespace resseg
