#pragma once

#include <cmath>
#include <vector>

#include "dasunet/layers.hpp"

namespace dasunet::optim {

/// Adam with bias correction. Moments are kept in parameter order.
template <class T>
class Adam {
public:
    Adam(nn::ParamStore<T>& store, double beta1, double beta2, double eps = 1e-8)
        : store_(store), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : store.params()) {
            m_.emplace_back(p.var.shape());
            v_.emplace_back(p.var.shape());
        }
    }

    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        auto& params = store_.params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& var = params[i].var;
            if (!var.node()->has_grad()) continue;
            const Tensor<T>& g = var.grad();
            Tensor<T>& w = var.mutable_value();
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double gk = g[k];
                const double mk = beta1_ * m[k] + (1.0 - beta1_) * gk;
                const double vk = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
                m[k] = static_cast<T>(mk);
                v[k] = static_cast<T>(vk);
                w[k] -= static_cast<T>(lr * (mk / c1) / (std::sqrt(vk / c2) + eps_));
            }
        }
    }

    [[nodiscard]] long long steps() const { return t_; }
    void set_steps(long long t) { t_ = t; }
    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    const std::vector<Tensor<T>>& first_moments() const { return m_; }
    const std::vector<Tensor<T>>& second_moments() const { return v_; }

private:
    nn::ParamStore<T>& store_;
    double beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

} // namespace dasunet::optim
