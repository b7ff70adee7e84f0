#pragma once

// Adam with bias correction, plus global-norm gradient clipping.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "lsfidm/autograd.hpp"
#include "lsfidm/rng.hpp"

namespace lsfidm::numerics {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
class Adam {
public:
    Adam(std::vector<Param<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (Param<T>* p : params_) {
            m_.emplace_back(p->value.rows(), p->value.cols());
            v_.emplace_back(p->value.rows(), p->value.cols());
        }
    }

    std::size_t step_count() const { return step_; }

    void zero_grad() {
        for (Param<T>* p : params_) p->zero_grad();
    }

    void step() {
        ++step_;
        const T lr = static_cast<T>(cfg_.learning_rate);
        const T b1 = static_cast<T>(cfg_.beta1);
        const T b2 = static_cast<T>(cfg_.beta2);
        const T eps = static_cast<T>(cfg_.epsilon);
        const T bc1 = T(1) - std::pow(b1, static_cast<T>(step_));
        const T bc2 = T(1) - std::pow(b2, static_cast<T>(step_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Param<T>& p = *params_[k];
            if (p.grad.size() != p.value.size())
                throw std::invalid_argument("adam: gradient shape mismatch for " + p.name);
            Tensor<T>& m = m_[k];
            Tensor<T>& v = v_[k];
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const T g = p.grad[i];
                m[i] = b1 * m[i] + (T(1) - b1) * g;
                v[i] = b2 * v[i] + (T(1) - b2) * g * g;
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

private:
    std::vector<Param<T>*> params_;
    std::vector<Tensor<T>> m_, v_;
    AdamConfig cfg_;
    std::size_t step_ = 0;
};

// Scale all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <typename T>
double clip_global_norm(const std::vector<Param<T>*>& params, double max_norm) {
    double sq = 0.0;
    for (const Param<T>* p : params)
        for (std::size_t i = 0; i < p->grad.size(); ++i)
            sq += static_cast<double>(p->grad[i]) * static_cast<double>(p->grad[i]);
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const T s = static_cast<T>(max_norm / norm);
        for (Param<T>* p : params)
            for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= s;
    }
    return norm;
}

// Uniform Glorot initialization.
template <typename T>
Tensor<T> xavier_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in,
                         std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<T> t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

}  // namespace lsfidm::numerics
