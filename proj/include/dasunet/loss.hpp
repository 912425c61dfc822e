#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "dasunet/ops.hpp"

namespace dasunet {

inline constexpr double default_charbonnier_eps = 1e-3;

/// Per-stage supervision weights; the final stage dominates.
struct LossWeights {
    std::vector<double> w;

    static LossWeights defaults(int stages) {
        LossWeights lw;
        lw.w.assign(static_cast<std::size_t>(stages), 0.1);
        if (stages > 0) lw.w.back() = 1.0;
        return lw;
    }
    [[nodiscard]] double sum() const { return std::accumulate(w.begin(), w.end(), 0.0); }
};

/// mean(sqrt((a - b)^2 + eps^2))
template <class T>
double charbonnier(const Tensor<T>& a, const Tensor<T>& b, double eps = default_charbonnier_eps) {
    a.require_same(b, "charbonnier");
    if (!(eps > 0.0)) throw ParameterError("charbonnier eps must be positive");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += std::sqrt(d * d + eps * eps);
    }
    return acc / static_cast<double>(a.size());
}

/// sum_j w_j * charbonnier(outputs_j, target). With a batch the per-stage mean
/// runs over every element, which equals averaging the per-sample losses.
template <class T>
ag::Var<T> multistage_loss(const std::vector<ag::Var<T>>& outputs, const ag::Var<T>& target, const LossWeights& weights,
                           double eps = default_charbonnier_eps) {
    if (outputs.size() != weights.w.size()) {
        throw ConfigError("multistage_loss: " + std::to_string(outputs.size()) + " outputs but " +
                          std::to_string(weights.w.size()) + " weights");
    }
    if (outputs.empty()) throw ConfigError("multistage_loss: no stage outputs");
    ag::Var<T> total;
    for (std::size_t j = 0; j < outputs.size(); ++j) {
        const ag::Var<T> term = ag::mul_const(ag::charbonnier(outputs[j], target, static_cast<T>(eps)), static_cast<T>(weights.w[j]));
        total = total.defined() ? ag::add(total, term) : term;
    }
    return total;
}

template <class T>
double multistage_loss(const std::vector<Tensor<T>>& outputs, const Tensor<T>& target, const LossWeights& weights,
                       double eps = default_charbonnier_eps) {
    if (outputs.size() != weights.w.size()) throw ConfigError("multistage_loss: output/weight count mismatch");
    double total = 0.0;
    for (std::size_t j = 0; j < outputs.size(); ++j) total += weights.w[j] * charbonnier(outputs[j], target, eps);
    return total;
}

} // namespace dasunet
