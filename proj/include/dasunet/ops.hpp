#pragma once

// Differentiable tensor operations used by the network.

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <vector>

#include "dasunet/autograd.hpp"
#include "dasunet/wavelet.hpp"

namespace dasunet::ag {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

/// Unfolds one sample (c,h,w) into (c*k*k, h*w) with zero padding k/2.
template <class T>
void im2col(const T* src, int c, int h, int w, int k, T* col) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ch = 0; ch < c; ++ch) {
        const T* plane = src + ch * hw;
        for (int u = 0; u < k; ++u) {
            for (int v = 0; v < k; ++v) {
                T* row = col + ((static_cast<std::size_t>(ch) * k + u) * k + v) * hw;
                const int dx = v - pad;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    T* dst = row + static_cast<std::size_t>(y) * w;
                    const int sy = y + u - pad;
                    if (sy < 0 || sy >= h || x0 >= x1) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    const T* s = plane + static_cast<std::size_t>(sy) * w;
                    std::fill(dst, dst + x0, T(0));
                    std::copy(s + x0 + dx, s + x1 + dx, dst + x0);
                    std::fill(dst + x1, dst + w, T(0));
                }
            }
        }
    }
}

/// Adjoint of im2col: accumulates columns back into the (c,h,w) sample.
template <class T>
void col2im_add(const T* col, int c, int h, int w, int k, T* dst) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ch = 0; ch < c; ++ch) {
        T* plane = dst + ch * hw;
        for (int u = 0; u < k; ++u) {
            for (int v = 0; v < k; ++v) {
                const T* row = col + ((static_cast<std::size_t>(ch) * k + u) * k + v) * hw;
                const int dx = v - pad;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + u - pad;
                    if (sy < 0 || sy >= h) continue;
                    const T* s = row + static_cast<std::size_t>(y) * w;
                    T* d = plane + static_cast<std::size_t>(sy) * w;
                    for (int x = x0; x < x1; ++x) d[x + dx] += s[x];
                }
            }
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    a.value().require_same(b.value(), "add");
    return make_result<T>(a.value() + b.value(), {a, b}, [](Node<T>& self) {
        for (std::size_t i = 0; i < 2; ++i)
            if (auto* g = parent_grad(self, i)) *g += self.grad;
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    a.value().require_same(b.value(), "sub");
    return make_result<T>(a.value() - b.value(), {a, b}, [](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) *g += self.grad;
        if (auto* g = parent_grad(self, 1)) *g -= self.grad;
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    a.value().require_same(b.value(), "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (auto* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
        if (auto* g = parent_grad(self, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    });
}

template <class T>
Var<T> mul_const(const Var<T>& a, T s) {
    return make_result<T>(a.value() * s, {a}, [s](Node<T>& self) {
        if (auto* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
    });
}

/// a * s where s is a learnable scalar of shape (1,1,1,1).
template <class T>
Var<T> scale(const Var<T>& a, const Var<T>& s) {
    detail::require(s.value().size() == 1, "scale: factor must be a scalar");
    const T sv = s.value()[0];
    return make_result<T>(a.value() * sv, {a, s}, [](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const T sv = self.parents[1]->value[0];
        if (auto* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += sv * self.grad[i];
        if (auto* g = parent_grad(self, 1)) (*g)[0] += dot(self.grad, av);
    });
}

/// Parametric ReLU with a single learnable slope.
template <class T>
Var<T> prelu(const Var<T>& x, const Var<T>& slope) {
    detail::require(slope.value().size() == 1, "prelu: slope must be a scalar");
    const T a = slope.value()[0];
    Tensor<T> out = x.value();
    for (auto& v : out.vec()) v = v > T(0) ? v : a * v;
    return make_result<T>(std::move(out), {x, slope}, [](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const T a = self.parents[1]->value[0];
        if (auto* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += xv[i] > T(0) ? self.grad[i] : a * self.grad[i];
        if (auto* g = parent_grad(self, 1)) {
            T acc = 0;
            for (std::size_t i = 0; i < xv.size(); ++i)
                if (!(xv[i] > T(0))) acc += self.grad[i] * xv[i];
            (*g)[0] += acc;
        }
    });
}

template <class T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.vec()) v = std::max(v, T(0));
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        if (auto* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                if (xv[i] > T(0)) (*g)[i] += self.grad[i];
    });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.vec()) v = T(1) / (T(1) + std::exp(-v));
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        if (auto* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) {
                const T s = self.value[i];
                (*g)[i] += self.grad[i] * s * (T(1) - s);
            }
    });
}

/// Exact (erf) GELU.
template <class T>
Var<T> gelu(const Var<T>& x) {
    const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    Tensor<T> out = x.value();
    for (auto& v : out.vec()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
    return make_result<T>(std::move(out), {x}, [inv_sqrt2](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
        if (auto* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) {
                const T v = xv[i];
                const T d = T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-T(0.5) * v * v);
                (*g)[i] += self.grad[i] * d;
            }
    });
}

// ------------------------------------------------------------------ channels

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts) {
    std::vector<const Tensor<T>*> values;
    std::vector<int> widths;
    for (const auto& p : parts) {
        values.push_back(&p.value());
        widths.push_back(p.value().c());
    }
    return make_result<T>(concat_channels(values), parts, [widths](Node<T>& self) {
        int off = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            if (auto* g = parent_grad(self, i)) *g += slice_channels(self.grad, off, widths[i]);
            off += widths[i];
        }
    });
}

template <class T>
Var<T> slice(const Var<T>& x, int start, int count) {
    return make_result<T>(slice_channels(x.value(), start, count), {x}, [start, count](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            const std::size_t p = g->shape().plane();
            for (int b = 0; b < g->n(); ++b)
                for (int ch = 0; ch < count; ++ch) {
                    T* dst = g->plane(b, start + ch);
                    const T* src = self.grad.plane(b, ch);
                    for (std::size_t i = 0; i < p; ++i) dst[i] += src[i];
                }
        }
    });
}

/// x (n,c,h,w) scaled per channel by g (n,c,1,1).
template <class T>
Var<T> channel_mul(const Var<T>& x, const Var<T>& gate) {
    const auto& xv = x.value();
    const auto& gv = gate.value();
    detail::require(gv.n() == xv.n() && gv.c() == xv.c() && gv.h() == 1 && gv.w() == 1,
                    "channel_mul: gate " + gv.shape().str() + " vs " + xv.shape().str());
    Tensor<T> out = xv;
    const std::size_t p = xv.shape().plane();
    for (int b = 0; b < xv.n(); ++b)
        for (int ch = 0; ch < xv.c(); ++ch) {
            T* d = out.plane(b, ch);
            const T s = gv(b, ch, 0, 0);
            for (std::size_t i = 0; i < p; ++i) d[i] *= s;
        }
    return make_result<T>(std::move(out), {x, gate}, [p](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& gv = self.parents[1]->value;
        auto* gx = parent_grad(self, 0);
        auto* gg = parent_grad(self, 1);
        for (int b = 0; b < xv.n(); ++b)
            for (int ch = 0; ch < xv.c(); ++ch) {
                const T* go = self.grad.plane(b, ch);
                if (gx) {
                    T* d = gx->plane(b, ch);
                    const T s = gv(b, ch, 0, 0);
                    for (std::size_t i = 0; i < p; ++i) d[i] += s * go[i];
                }
                if (gg) {
                    const T* xs = xv.plane(b, ch);
                    T acc = 0;
                    for (std::size_t i = 0; i < p; ++i) acc += go[i] * xs[i];
                    (*gg)(b, ch, 0, 0) += acc;
                }
            }
    });
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
    const auto& xv = x.value();
    Tensor<T> out(xv.n(), xv.c(), 1, 1);
    const std::size_t p = xv.shape().plane();
    for (int b = 0; b < xv.n(); ++b)
        for (int ch = 0; ch < xv.c(); ++ch) {
            const T* s = xv.plane(b, ch);
            T acc = 0;
            for (std::size_t i = 0; i < p; ++i) acc += s[i];
            out(b, ch, 0, 0) = acc / static_cast<T>(p);
        }
    return make_result<T>(std::move(out), {x}, [p](Node<T>& self) {
        if (auto* g = parent_grad(self, 0))
            for (int b = 0; b < g->n(); ++b)
                for (int ch = 0; ch < g->c(); ++ch) {
                    const T v = self.grad(b, ch, 0, 0) / static_cast<T>(p);
                    T* d = g->plane(b, ch);
                    for (std::size_t i = 0; i < p; ++i) d[i] += v;
                }
    });
}

/// Stride-1 average over a window x window neighbourhood; border windows
/// average only the pixels inside the image, so constants stay constant.
template <class T>
Var<T> avg_pool_same(const Var<T>& x, int window) {
    detail::require(window >= 1 && window % 2 == 1, "avg_pool_same: window must be odd and positive");
    const auto& xv = x.value();
    const int h = xv.h();
    const int w = xv.w();
    const int r = window / 2;
    // separable: rows then columns, with per-pixel counts
    auto pool = [h, w, r](const T* src, T* dst, bool adjoint) {
        std::vector<T> tmp(static_cast<std::size_t>(h) * w, T(0));
        auto count = [r](int i, int n) { return std::min(n - 1, i + r) - std::max(0, i - r) + 1; };
        if (!adjoint) {
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    T acc = 0;
                    for (int k = std::max(0, xx - r); k <= std::min(w - 1, xx + r); ++k) acc += src[y * w + k];
                    tmp[y * w + xx] = acc / static_cast<T>(count(xx, w));
                }
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    T acc = 0;
                    for (int k = std::max(0, y - r); k <= std::min(h - 1, y + r); ++k) acc += tmp[k * w + xx];
                    dst[y * w + xx] += acc / static_cast<T>(count(y, h));
                }
        } else {
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const T v = src[y * w + xx] / static_cast<T>(count(y, h));
                    for (int k = std::max(0, y - r); k <= std::min(h - 1, y + r); ++k) tmp[k * w + xx] += v;
                }
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const T v = tmp[y * w + xx] / static_cast<T>(count(xx, w));
                    for (int k = std::max(0, xx - r); k <= std::min(w - 1, xx + r); ++k) dst[y * w + k] += v;
                }
        }
    };
    Tensor<T> out(xv.shape());
    for (int b = 0; b < xv.n(); ++b)
        for (int ch = 0; ch < xv.c(); ++ch) pool(xv.plane(b, ch), out.plane(b, ch), false);
    return make_result<T>(std::move(out), {x}, [pool](Node<T>& self) {
        if (auto* g = parent_grad(self, 0))
            for (int b = 0; b < g->n(); ++b)
                for (int ch = 0; ch < g->c(); ++ch) pool(self.grad.plane(b, ch), g->plane(b, ch), true);
    });
}

/// Per-pixel normalisation across channels with learnable (1,c,1,1) gain and shift.
template <class T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const auto& xv = x.value();
    const int c = xv.c();
    detail::require(gamma.value().c() == c && beta.value().c() == c, "layer_norm: parameter width mismatch");
    const std::size_t p = xv.shape().plane();
    Tensor<T> out(xv.shape());
    Tensor<T> xhat(xv.shape());
    Tensor<T> inv_std(xv.n(), 1, xv.h(), xv.w());
    std::vector<T> mean(p), var(p);
    for (int b = 0; b < xv.n(); ++b) {
        std::fill(mean.begin(), mean.end(), T(0));
        std::fill(var.begin(), var.end(), T(0));
        for (int ch = 0; ch < c; ++ch) {
            const T* s = xv.plane(b, ch);
            for (std::size_t i = 0; i < p; ++i) mean[i] += s[i];
        }
        for (auto& m : mean) m /= static_cast<T>(c);
        for (int ch = 0; ch < c; ++ch) {
            const T* s = xv.plane(b, ch);
            for (std::size_t i = 0; i < p; ++i) {
                const T d = s[i] - mean[i];
                var[i] += d * d;
            }
        }
        T* is = inv_std.plane(b, 0);
        for (std::size_t i = 0; i < p; ++i) is[i] = T(1) / std::sqrt(var[i] / static_cast<T>(c) + eps);
        for (int ch = 0; ch < c; ++ch) {
            const T* s = xv.plane(b, ch);
            T* xh = xhat.plane(b, ch);
            T* o = out.plane(b, ch);
            const T g = gamma.value()[ch];
            const T bt = beta.value()[ch];
            for (std::size_t i = 0; i < p; ++i) {
                xh[i] = (s[i] - mean[i]) * is[i];
                o[i] = xh[i] * g + bt;
            }
        }
    }
    return make_result<T>(std::move(out), {x, gamma, beta},
                          [xhat = std::move(xhat), inv_std = std::move(inv_std), c, p](Node<T>& self) {
        const auto& gv = self.parents[1]->value;
        auto* gx = parent_grad(self, 0);
        auto* gg = parent_grad(self, 1);
        auto* gb = parent_grad(self, 2);
        std::vector<T> sum_dxh(p), sum_dxh_xh(p);
        for (int b = 0; b < self.grad.n(); ++b) {
            std::fill(sum_dxh.begin(), sum_dxh.end(), T(0));
            std::fill(sum_dxh_xh.begin(), sum_dxh_xh.end(), T(0));
            for (int ch = 0; ch < c; ++ch) {
                const T* go = self.grad.plane(b, ch);
                const T* xh = xhat.plane(b, ch);
                const T g = gv[ch];
                T acc_g = 0;
                T acc_b = 0;
                for (std::size_t i = 0; i < p; ++i) {
                    acc_g += go[i] * xh[i];
                    acc_b += go[i];
                    const T dxh = go[i] * g;
                    sum_dxh[i] += dxh;
                    sum_dxh_xh[i] += dxh * xh[i];
                }
                if (gg) (*gg)[ch] += acc_g;
                if (gb) (*gb)[ch] += acc_b;
            }
            if (!gx) continue;
            const T* is = inv_std.plane(b, 0);
            const T inv_c = T(1) / static_cast<T>(c);
            for (int ch = 0; ch < c; ++ch) {
                const T* go = self.grad.plane(b, ch);
                const T* xh = xhat.plane(b, ch);
                T* d = gx->plane(b, ch);
                const T g = gv[ch];
                for (std::size_t i = 0; i < p; ++i) {
                    d[i] += is[i] * (go[i] * g - (sum_dxh[i] + xh[i] * sum_dxh_xh[i]) * inv_c);
                }
            }
        }
    });
}

// -------------------------------------------------------------- convolution

/// Stride-1 "same" convolution. weight (cout,cin,k,k) with odd k, optional bias (1,cout,1,1).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    const int cin = xv.c();
    const int cout = wv.n();
    const int k = wv.h();
    detail::require(wv.c() == cin && wv.w() == k && k % 2 == 1,
                    "conv2d: weight " + wv.shape().str() + " incompatible with input " + xv.shape().str());
    const bool has_bias = bias.defined();
    if (has_bias) detail::require(bias.value().size() == static_cast<std::size_t>(cout), "conv2d: bias width");
    const int h = xv.h();
    const int w = xv.w();
    const int hw = h * w;
    const int kk = cin * k * k;

    Tensor<T> out(xv.n(), cout, h, w);
    std::vector<T> col(k == 1 ? 0 : static_cast<std::size_t>(kk) * hw);
    detail::CMapMat<T> W(wv.data(), cout, kk);
    for (int b = 0; b < xv.n(); ++b) {
        const T* src = xv.plane(b, 0);
        if (k != 1) {
            detail::im2col(src, cin, h, w, k, col.data());
            src = col.data();
        }
        detail::MapMat<T> O(out.plane(b, 0), cout, hw);
        O.noalias() = W * detail::CMapMat<T>(src, kk, hw);
        if (has_bias)
            for (int o = 0; o < cout; ++o) O.row(o).array() += bias.value()[o];
    }
    std::vector<Var<T>> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return make_result<T>(std::move(out), std::move(parents), [=](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        auto* gx = parent_grad(self, 0);
        auto* gw = parent_grad(self, 1);
        auto* gb = has_bias ? parent_grad(self, 2) : nullptr;
        std::vector<T> col(k == 1 ? 0 : static_cast<std::size_t>(kk) * hw);
        std::vector<T> dcol(gx && k != 1 ? static_cast<std::size_t>(kk) * hw : 0);
        detail::CMapMat<T> W(wv.data(), cout, kk);
        for (int b = 0; b < xv.n(); ++b) {
            detail::CMapMat<T> G(self.grad.plane(b, 0), cout, hw);
            if (gw) {
                const T* src = xv.plane(b, 0);
                if (k != 1) {
                    detail::im2col(src, cin, h, w, k, col.data());
                    src = col.data();
                }
                detail::MapMat<T>(gw->data(), cout, kk).noalias() += G * detail::CMapMat<T>(src, kk, hw).transpose();
            }
            // plain loop: Eigen's vectorised sum peels by address, which breaks run-to-run reproducibility
            if (gb)
                for (int o = 0; o < cout; ++o) {
                    const T* row = G.data() + static_cast<std::ptrdiff_t>(o) * hw;
                    T acc = 0;
                    for (int i = 0; i < hw; ++i) acc += row[i];
                    (*gb)[o] += acc;
                }
            if (gx) {
                if (k == 1) {
                    detail::MapMat<T>(gx->plane(b, 0), cin, hw).noalias() += W.transpose() * G;
                } else {
                    detail::MapMat<T>(dcol.data(), kk, hw).noalias() = W.transpose() * G;
                    detail::col2im_add(dcol.data(), cin, h, w, k, gx->plane(b, 0));
                }
            }
        }
    });
}

/// Depthwise "same" convolution: weight (c,1,k,k), optional bias (1,c,1,1).
template <class T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    const int c = xv.c();
    const int k = wv.h();
    detail::require(wv.n() == c && wv.c() == 1 && wv.w() == k && k % 2 == 1,
                    "depthwise_conv2d: weight " + wv.shape().str() + " vs input " + xv.shape().str());
    const bool has_bias = bias.defined();
    const int h = xv.h();
    const int w = xv.w();
    const int r = k / 2;
    Tensor<T> out(xv.shape());
    for (int b = 0; b < xv.n(); ++b)
        for (int ch = 0; ch < c; ++ch) {
            const T* s = xv.plane(b, ch);
            T* d = out.plane(b, ch);
            const T bv = has_bias ? bias.value()[ch] : T(0);
            for (int i = 0; i < h * w; ++i) d[i] = bv;
            for (int u = 0; u < k; ++u)
                for (int v = 0; v < k; ++v) {
                    const T wt = wv(ch, 0, u, v);
                    const int dy = u - r;
                    const int dx = v - r;
                    for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
                        const T* srow = s + (y + dy) * w + dx;
                        T* drow = d + y * w;
                        for (int xx = std::max(0, -dx); xx < std::min(w, w - dx); ++xx) drow[xx] += wt * srow[xx];
                    }
                }
        }
    std::vector<Var<T>> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return make_result<T>(std::move(out), std::move(parents), [=](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        auto* gx = parent_grad(self, 0);
        auto* gw = parent_grad(self, 1);
        auto* gb = has_bias ? parent_grad(self, 2) : nullptr;
        for (int b = 0; b < xv.n(); ++b)
            for (int ch = 0; ch < c; ++ch) {
                const T* s = xv.plane(b, ch);
                const T* go = self.grad.plane(b, ch);
                if (gb) {
                    T acc = 0;
                    for (int i = 0; i < h * w; ++i) acc += go[i];
                    (*gb)[ch] += acc;
                }
                for (int u = 0; u < k; ++u)
                    for (int v = 0; v < k; ++v) {
                        const int dy = u - r;
                        const int dx = v - r;
                        const int y0 = std::max(0, -dy);
                        const int y1 = std::min(h, h - dy);
                        const int x0 = std::max(0, -dx);
                        const int x1 = std::min(w, w - dx);
                        if (gw) {
                            T acc = 0;
                            for (int y = y0; y < y1; ++y) {
                                const T* srow = s + (y + dy) * w + dx;
                                const T* grow = go + y * w;
                                for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * srow[xx];
                            }
                            (*gw)(ch, 0, u, v) += acc;
                        }
                        if (gx) {
                            const T wt = wv(ch, 0, u, v);
                            T* gplane = gx->plane(b, ch);
                            for (int y = y0; y < y1; ++y) {
                                const T* grow = go + y * w;
                                T* gxrow = gplane + (y + dy) * w + dx;
                                for (int xx = x0; xx < x1; ++xx) gxrow[xx] += wt * grow[xx];
                            }
                        }
                    }
            }
    });
}

// ------------------------------------------------------------------ wavelet

/// Haar analysis producing (n, 4c, ceil(h/2), ceil(w/2)) stacked as [ll|lh|hl|hh].
template <class T>
Var<T> haar_dwt(const Var<T>& x) {
    const int h = x.value().h();
    const int w = x.value().w();
    detail::require(h >= 2 && w >= 2, "haar_dwt: input smaller than 2x2");
    return make_result<T>(dasunet::detail::haar_analysis_stacked(dasunet::detail::pad_even(x.value())), {x},
                          [h, w](Node<T>& self) {
        if (auto* g = parent_grad(self, 0))
            *g += dasunet::detail::pad_even_adjoint(dasunet::detail::haar_synthesis_stacked(self.grad), h, w);
    });
}

/// Haar synthesis of stacked bands, cropped to (h, w).
template <class T>
Var<T> haar_idwt(const Var<T>& bands, int h, int w) {
    return make_result<T>(dasunet::detail::crop(dasunet::detail::haar_synthesis_stacked(bands.value()), h, w),
                          {bands}, [](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            const int ph = 2 * g->h();
            const int pw = 2 * g->w();
            Tensor<T> padded(self.grad.n(), self.grad.c(), ph, pw);
            for (int b = 0; b < padded.n(); ++b)
                for (int ch = 0; ch < padded.c(); ++ch)
                    for (int y = 0; y < self.grad.h(); ++y)
                        for (int xx = 0; xx < self.grad.w(); ++xx) padded(b, ch, y, xx) = self.grad(b, ch, y, xx);
            *g += dasunet::detail::haar_analysis_stacked(padded);
        }
    });
}

// ---------------------------------------------------------------- attention

/// Multi-head self-attention inside non-overlapping windows.
///
/// qkv is (n, 3c, h, w) holding queries, keys and values. Windows are
/// min(window, h) x min(window, w); windows on the bottom/right border are
/// truncated to the image instead of padded, which equals padding with masked
/// keys. Returns (n, c, h, w).
template <class T>
Var<T> window_attention(const Var<T>& qkv, int heads, int window) {
    const auto& v = qkv.value();
    detail::require(v.c() % 3 == 0, "window_attention: channel count must be 3c");
    const int c = v.c() / 3;
    detail::require(heads >= 1 && c % heads == 0, "window_attention: channels not divisible by heads");
    const int d = c / heads;
    const int h = v.h();
    const int w = v.w();
    const int wh = std::min(window, h);
    const int ww = std::min(window, w);
    const T scale = T(1) / std::sqrt(static_cast<T>(d));

    struct Win {
        int y0, x0, hh, ww;
    };
    std::vector<Win> wins;
    for (int y0 = 0; y0 < h; y0 += wh)
        for (int x0 = 0; x0 < w; x0 += ww) wins.push_back({y0, x0, std::min(wh, h - y0), std::min(ww, w - x0)});

    using Mat = detail::RowMat<T>;
    auto gather = [=](const Tensor<T>& src, int b, const Win& win, int ch0, Mat& m) {
        const int t = win.hh * win.ww;
        m.resize(t, d);
        for (int j = 0; j < d; ++j) {
            const T* pl = src.plane(b, ch0 + j);
            int idx = 0;
            for (int y = win.y0; y < win.y0 + win.hh; ++y)
                for (int x = win.x0; x < win.x0 + win.ww; ++x) m(idx++, j) = pl[y * w + x];
        }
    };
    auto scatter_add = [=](Tensor<T>& dst, int b, const Win& win, int ch0, const Mat& m) {
        for (int j = 0; j < d; ++j) {
            T* pl = dst.plane(b, ch0 + j);
            int idx = 0;
            for (int y = win.y0; y < win.y0 + win.hh; ++y)
                for (int x = win.x0; x < win.x0 + win.ww; ++x) pl[y * w + x] += m(idx++, j);
        }
    };

    Tensor<T> out(v.n(), c, h, w);
    auto probs = std::make_shared<std::vector<Mat>>();
    probs->reserve(static_cast<std::size_t>(v.n()) * wins.size() * heads);
    Mat q, kmat, val;
    for (int b = 0; b < v.n(); ++b)
        for (const auto& win : wins)
            for (int hd = 0; hd < heads; ++hd) {
                gather(v, b, win, hd * d, q);
                gather(v, b, win, c + hd * d, kmat);
                gather(v, b, win, 2 * c + hd * d, val);
                Mat s = (q * kmat.transpose()) * scale;
                for (int r = 0; r < s.rows(); ++r) {
                    const T m = s.row(r).maxCoeff();
                    s.row(r) = (s.row(r).array() - m).exp();
                    s.row(r) /= s.row(r).sum();
                }
                scatter_add(out, b, win, hd * d, Mat(s * val));
                probs->push_back(std::move(s));
            }

    return make_result<T>(std::move(out), {qkv}, [=](Node<T>& self) {
        auto* g = parent_grad(self, 0);
        if (!g) return;
        const auto& v = self.parents[0]->value;
        Mat q, kmat, val, go;
        std::size_t pi = 0;
        for (int b = 0; b < v.n(); ++b)
            for (const auto& win : wins)
                for (int hd = 0; hd < heads; ++hd) {
                    const Mat& p = (*probs)[pi++];
                    gather(v, b, win, hd * d, q);
                    gather(v, b, win, c + hd * d, kmat);
                    gather(v, b, win, 2 * c + hd * d, val);
                    gather(self.grad, b, win, hd * d, go);
                    const Mat dv = p.transpose() * go;
                    const Mat dp = go * val.transpose();
                    Mat ds = p.cwiseProduct(dp);
                    for (int r = 0; r < ds.rows(); ++r) ds.row(r) -= p.row(r) * ds.row(r).sum();
                    scatter_add(*g, b, win, hd * d, Mat((ds * kmat) * scale));
                    scatter_add(*g, b, win, c + hd * d, Mat((ds.transpose() * q) * scale));
                    scatter_add(*g, b, win, 2 * c + hd * d, dv);
                }
    });
}

// --------------------------------------------------------------------- loss

/// mean(sqrt((a - b)^2 + eps^2)) as a (1,1,1,1) scalar.
template <class T>
Var<T> charbonnier(const Var<T>& a, const Var<T>& b, T eps) {
    a.value().require_same(b.value(), "charbonnier");
    if (!(eps > T(0))) throw ParameterError("charbonnier eps must be positive");
    const auto& av = a.value();
    const auto& bv = b.value();
    T acc = 0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const T d = av[i] - bv[i];
        acc += std::sqrt(d * d + eps * eps);
    }
    const T count = static_cast<T>(av.size());
    return make_result<T>(Tensor<T>(1, 1, 1, 1, acc / count), {a, b}, [eps, count](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        const T go = self.grad[0] / count;
        auto* ga = parent_grad(self, 0);
        auto* gb = parent_grad(self, 1);
        for (std::size_t i = 0; i < av.size(); ++i) {
            const T d = av[i] - bv[i];
            const T gi = go * d / std::sqrt(d * d + eps * eps);
            if (ga) (*ga)[i] += gi;
            if (gb) (*gb)[i] -= gi;
        }
    });
}

} // namespace dasunet::ag
