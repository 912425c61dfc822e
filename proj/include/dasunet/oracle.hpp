#pragma once

// Classical proximal-gradient solver for the two-stream degradation energy
//
//   E(x) = 1/2 |y_lum - D_lum x_lum|^2 + l1 J(x_lum) + 1/2 |y_chrom - D_chrom x_chrom|^2 + l2 J(x_chrom)
//
// with analytic operators and the l1 soft threshold as proximal map. Each
// stream iterates
//   u = x - step * D^T (D x - y)
//   x = soft_threshold(u, step * lambda)
// which is monotone in E whenever step <= 1 / |D^T D|.

#include <cmath>
#include <future>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dasunet/colorspace.hpp"
#include "dasunet/tensor.hpp"

namespace dasunet::oracle {

enum class OperatorKind { diagonal, convolutional };
enum class Prior { soft_threshold, none };

/// Linear degradation D with an exact adjoint.
///
/// A diagonal operator multiplies every channel by a per-pixel gain map (or a
/// scalar gain when no map is given). A convolutional operator correlates each
/// channel with a small odd-sized kernel using zero padding ("same" output).
class DegradationOperator {
public:
    static DegradationOperator identity() { return diagonal(1.0); }

    static DegradationOperator diagonal(double gain) {
        if (!(gain > 0.0) || !std::isfinite(gain)) {
            throw ParameterError("diagonal gain must be strictly positive, got " + std::to_string(gain));
        }
        DegradationOperator op;
        op.kind_ = OperatorKind::diagonal;
        op.scalar_gain_ = gain;
        return op;
    }

    /// Per-pixel gains, shape (1,1,h,w); applied identically to every channel.
    static DegradationOperator diagonal(Tensor<double> gain_map) {
        if (gain_map.n() != 1 || gain_map.c() != 1) {
            throw ShapeError("gain map must be (1,1,h,w), got " + gain_map.shape().str());
        }
        for (double g : gain_map.vec()) {
            if (!(g > 0.0) || !std::isfinite(g)) throw ParameterError("diagonal gains must be strictly positive");
        }
        DegradationOperator op;
        op.kind_ = OperatorKind::diagonal;
        op.gain_map_ = std::move(gain_map);
        return op;
    }

    /// Kernel given as (1,1,kh,kw) with odd kh, kw.
    static DegradationOperator convolution(Tensor<double> kernel) {
        if (kernel.n() != 1 || kernel.c() != 1 || kernel.h() % 2 == 0 || kernel.w() % 2 == 0) {
            throw ShapeError("convolution kernel must be (1,1,odd,odd), got " + kernel.shape().str());
        }
        if (!all_finite(kernel)) throw ParameterError("convolution kernel must be finite");
        DegradationOperator op;
        op.kind_ = OperatorKind::convolutional;
        op.kernel_ = std::move(kernel);
        return op;
    }

    [[nodiscard]] OperatorKind kind() const { return kind_; }
    [[nodiscard]] const std::optional<Tensor<double>>& gain_map() const { return gain_map_; }
    [[nodiscard]] double scalar_gain() const { return scalar_gain_; }
    [[nodiscard]] const Tensor<double>& kernel() const { return kernel_; }

    [[nodiscard]] Tensor<double> apply(const Tensor<double>& a) const { return run(a, false); }
    [[nodiscard]] Tensor<double> apply_transpose(const Tensor<double>& b) const { return run(b, true); }

    /// Largest eigenvalue of D^T D for signals of the given shape.
    [[nodiscard]] double lipschitz(const Shape& shape) const {
        if (kind_ == OperatorKind::diagonal) {
            if (!gain_map_) return scalar_gain_ * scalar_gain_;
            double m = 0.0;
            for (double g : gain_map_->vec()) m = std::max(m, g * g);
            return m;
        }
        // power iteration on D^T D
        std::mt19937_64 rng(0x5eed);
        Tensor<double> v = uniform_tensor<double>(shape, rng, -1.0, 1.0);
        double lambda = 0.0;
        for (int it = 0; it < 200; ++it) {
            const double nv = std::sqrt(squared_norm(v));
            if (nv == 0.0) return 0.0;
            v *= 1.0 / nv;
            Tensor<double> w = apply_transpose(apply(v));
            const double next = dot(v, w);
            v = std::move(w);
            if (std::abs(next - lambda) <= 1e-12 * std::max(1.0, next)) {
                lambda = next;
                break;
            }
            lambda = next;
        }
        return lambda;
    }

private:
    DegradationOperator() = default;

    Tensor<double> run(const Tensor<double>& a, bool transpose) const {
        if (kind_ == OperatorKind::diagonal) {
            Tensor<double> out = a;
            if (!gain_map_) {
                out *= scalar_gain_;
                return out;
            }
            if (gain_map_->h() != a.h() || gain_map_->w() != a.w()) {
                throw ShapeError("gain map " + gain_map_->shape().str() + " does not match signal " + a.shape().str());
            }
            const std::size_t p = a.shape().plane();
            for (int b = 0; b < a.n(); ++b)
                for (int ch = 0; ch < a.c(); ++ch) {
                    double* dst = out.plane(b, ch);
                    for (std::size_t i = 0; i < p; ++i) dst[i] *= gain_map_->data()[i];
                }
            return out;
        }
        const int kh = kernel_.h();
        const int kw = kernel_.w();
        const int ry = kh / 2;
        const int rx = kw / 2;
        Tensor<double> out(a.shape());
        for (int b = 0; b < a.n(); ++b) {
            for (int ch = 0; ch < a.c(); ++ch) {
                for (int y = 0; y < a.h(); ++y) {
                    for (int x = 0; x < a.w(); ++x) {
                        double acc = 0.0;
                        for (int u = 0; u < kh; ++u) {
                            for (int v = 0; v < kw; ++v) {
                                // forward: out[y,x] = sum k[u,v] a[y+u-r, x+v-r]
                                // adjoint: out[y,x] = sum k[u,v] a[y-u+r, x-v+r]
                                const int sy = transpose ? y - u + ry : y + u - ry;
                                const int sx = transpose ? x - v + rx : x + v - rx;
                                if (sy < 0 || sy >= a.h() || sx < 0 || sx >= a.w()) continue;
                                acc += kernel_(0, 0, u, v) * a(b, ch, sy, sx);
                            }
                        }
                        out(b, ch, y, x) = acc;
                    }
                }
            }
        }
        return out;
    }

    OperatorKind kind_ = OperatorKind::diagonal;
    double scalar_gain_ = 1.0;
    std::optional<Tensor<double>> gain_map_;
    Tensor<double> kernel_;
};

struct OperatorPair {
    DegradationOperator lum = DegradationOperator::identity();
    DegradationOperator chrom = DegradationOperator::identity();
};

struct SolverConfig {
    double rho = 0.5;     ///< luminance step size
    double eta = 0.5;     ///< chrominance step size
    double lambda1 = 0.0; ///< luminance prior weight
    double lambda2 = 0.0; ///< chrominance prior weight
    int max_iters = 500;
    double tol = 1e-8; ///< stop once max |x_k - x_{k-1}| < tol
    Prior prior = Prior::soft_threshold;

    void validate() const {
        if (!(rho > 0.0) || !(eta > 0.0)) throw ParameterError("step sizes rho and eta must be positive");
        if (lambda1 < 0.0 || lambda2 < 0.0) throw ParameterError("prior weights must be non-negative");
        if (max_iters <= 0) throw ParameterError("max_iters must be positive");
        if (!(tol >= 0.0)) throw ParameterError("tol must be non-negative");
    }
};

inline double l1_norm(const Tensor<double>& x) {
    double s = 0.0;
    for (double v : x.vec()) s += std::abs(v);
    return s;
}

/// 1/2 |y - D x|^2 + lambda J(x) for one stream.
inline double stream_energy(const Tensor<double>& y, const Tensor<double>& x, const DegradationOperator& op,
                            double lambda, Prior prior) {
    y.require_same(x, "energy");
    const Tensor<double> r = y - op.apply(x);
    double e = 0.5 * squared_norm(r);
    if (prior == Prior::soft_threshold) e += lambda * l1_norm(x);
    return e;
}

inline double energy(const SpaceDecomposition<double>& dec_y, const SpaceDecomposition<double>& dec_x,
                     const OperatorPair& ops, const SolverConfig& cfg) {
    dec_y.validate();
    dec_x.validate();
    return stream_energy(dec_y.lum, dec_x.lum, ops.lum, cfg.lambda1, cfg.prior) +
           stream_energy(dec_y.chrom, dec_x.chrom, ops.chrom, cfg.lambda2, cfg.prior);
}

/// x_prev - step * D^T (D x_prev - y)
inline Tensor<double> gradient_step(const Tensor<double>& x_prev, const Tensor<double>& y,
                                    const DegradationOperator& op, double step) {
    x_prev.require_same(y, "gradient_step");
    if (!(step > 0.0)) throw ParameterError("gradient step must be positive");
    Tensor<double> g = op.apply_transpose(op.apply(x_prev) - y);
    return x_prev - g * step;
}

/// sign(v) * max(|v| - threshold, 0), elementwise.
template <class T>
Tensor<T> prox_soft_threshold(Tensor<T> v, T threshold) {
    if (threshold < T(0)) throw ParameterError("soft threshold must be non-negative");
    for (auto& e : v.vec()) {
        const T mag = std::abs(e) - threshold;
        e = mag > T(0) ? std::copysign(mag, e) : T(0);
    }
    return v;
}

struct StreamResult {
    Tensor<double> x;
    std::vector<double> trace; ///< energy after each executed iteration
    bool converged = false;
};

/// Proximal-gradient iterations on one stream, starting from x = y.
inline StreamResult solve_stream(const Tensor<double>& y, const DegradationOperator& op, double step,
                                 double lambda, const SolverConfig& cfg) {
    StreamResult res;
    res.x = y;
    const double threshold = cfg.prior == Prior::soft_threshold ? step * lambda : 0.0;
    int rising = 0;
    double prev_energy = stream_energy(y, res.x, op, lambda, cfg.prior);
    for (int it = 0; it < cfg.max_iters; ++it) {
        Tensor<double> next = prox_soft_threshold(gradient_step(res.x, y, op, step), threshold);
        const double change = max_abs_diff(next, res.x);
        res.x = std::move(next);
        const double e = stream_energy(y, res.x, op, lambda, cfg.prior);
        res.trace.push_back(e);
        // rounding noise near the optimum is not an increase
        rising = e > prev_energy + 1e-12 * std::max(1.0, std::abs(prev_energy)) ? rising + 1 : 0;
        prev_energy = e;
        if (rising >= 3 || !std::isfinite(e)) {
            const std::size_t n = res.trace.size();
            std::string last;
            for (std::size_t i = n >= 3 ? n - 3 : 0; i < n; ++i) last += " " + std::to_string(res.trace[i]);
            throw SolverError("energy increased for 3 consecutive iterations (last:" + last +
                              "); check the adjoint or the step size");
        }
        if (change < cfg.tol) {
            res.converged = true;
            break;
        }
    }
    return res;
}

struct SolveResult {
    SpaceDecomposition<double> x;
    std::vector<double> trace; ///< total energy per iteration
    int iterations = 0;
    bool converged = false;
};

/// Runs both streams concurrently; they share no variables, so each stream's
/// result is identical to solving it alone. A stream that stops early keeps
/// contributing its final energy to the total trace.
inline SolveResult solve_ddm(const SpaceDecomposition<double>& dec_y, const OperatorPair& ops,
                             const SolverConfig& cfg) {
    dec_y.validate();
    cfg.validate();
    auto chrom_future = std::async(std::launch::async, [&] {
        return solve_stream(dec_y.chrom, ops.chrom, cfg.eta, cfg.lambda2, cfg);
    });
    StreamResult lum = solve_stream(dec_y.lum, ops.lum, cfg.rho, cfg.lambda1, cfg);
    StreamResult chrom = chrom_future.get();

    SolveResult out;
    const std::size_t n = std::max(lum.trace.size(), chrom.trace.size());
    out.trace.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.trace.push_back(lum.trace[std::min(i, lum.trace.size() - 1)] +
                            chrom.trace[std::min(i, chrom.trace.size() - 1)]);
    }
    out.iterations = static_cast<int>(n);
    out.converged = lum.converged && chrom.converged;
    out.x = {std::move(lum.x), std::move(chrom.x)};
    return out;
}

} // namespace dasunet::oracle
