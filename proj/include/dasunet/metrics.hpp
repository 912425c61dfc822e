#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "dasunet/colorspace.hpp"

namespace dasunet::metrics {

/// 10 log10(1 / MSE) over every channel; identical inputs give +infinity.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    a.require_same(b, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        se += d * d;
    }
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(static_cast<double>(a.size()) / se);
}

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(size));
    const double c = (size - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        g[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
        sum += g[i];
    }
    for (auto& v : g) v /= sum;
    return g;
}

/// Separable Gaussian filtering, keeping only positions where the window fits.
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int vh = h - k + 1;
    const int vw = w - k + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * vw);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < vw; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += g[i] * img[y * w + x + i];
            rows[y * vw + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(vh) * vw);
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < vw; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += g[i] * rows[(y + i) * vw + x];
            out[y * vw + x] = acc;
        }
    return out;
}

} // namespace detail

/// Single-scale SSIM on BT.601 luma (3-channel inputs) with a Gaussian window,
/// averaged over every window position fully inside the image and over the batch.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& opt = {}) {
    a.require_same(b, "ssim");
    if (a.c() != 1 && a.c() != 3) throw ShapeError("ssim expects 1 or 3 channels, got " + a.shape().str());
    if (a.h() < opt.window || a.w() < opt.window) {
        throw ShapeError("ssim: image " + a.shape().str() + " smaller than the " + std::to_string(opt.window) +
                         "x" + std::to_string(opt.window) + " window");
    }
    const Tensor<T> la = luma(a);
    const Tensor<T> lb = luma(b);
    const int h = a.h();
    const int w = a.w();
    const auto g = detail::gaussian_kernel(opt.window, opt.sigma);
    const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
    const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);
    const std::size_t p = static_cast<std::size_t>(h) * w;

    double total = 0.0;
    for (int s = 0; s < a.n(); ++s) {
        std::vector<double> x(p), y(p), xx(p), yy(p), xy(p);
        for (std::size_t i = 0; i < p; ++i) {
            x[i] = la.plane(s, 0)[i];
            y[i] = lb.plane(s, 0)[i];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = detail::filter_valid(x, h, w, g);
        const auto my = detail::filter_valid(y, h, w, g);
        const auto sxx = detail::filter_valid(xx, h, w, g);
        const auto syy = detail::filter_valid(yy, h, w, g);
        const auto sxy = detail::filter_valid(xy, h, w, g);
        double acc = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cov = sxy[i] - mx[i] * my[i];
            const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
            const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
            acc += num / den;
        }
        total += acc / static_cast<double>(mx.size());
    }
    return total / a.n();
}

struct MetricReport {
    std::vector<double> psnr;
    std::vector<double> ssim;

    void add(double p, double s) {
        psnr.push_back(p);
        ssim.push_back(s);
    }
    /// Mean PSNR; infinite when every pair was identical.
    [[nodiscard]] double mean_psnr() const { return mean(psnr); }
    [[nodiscard]] double mean_ssim() const { return mean(ssim); }

private:
    static double mean(const std::vector<double>& v) {
        if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    }
};

} // namespace dasunet::metrics
