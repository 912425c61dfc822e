#pragma once

// Single-level orthonormal 2-D Haar transform. For a 2x2 block [[a, b], [c, d]]:
//   ll = (a + b + c + d) / 2     lh = (a - b + c - d) / 2
//   hl = (a + b - c - d) / 2     hh = (a - b - c + d) / 2
// Odd sizes are padded by replicating the last row/column before analysis and
// cropped after synthesis.

#include "dasunet/tensor.hpp"

namespace dasunet {

template <class T>
struct WaveletBands {
    Tensor<T> ll, lh, hl, hh;
    int height = 0; ///< spatial size before padding
    int width = 0;

    [[nodiscard]] bool padded() const { return height != 2 * ll.h() || width != 2 * ll.w(); }
};

namespace detail {

/// Replicate the last row/column so that both sizes become even.
template <class T>
Tensor<T> pad_even(const Tensor<T>& x) {
    const int ph = x.h() + (x.h() & 1);
    const int pw = x.w() + (x.w() & 1);
    if (ph == x.h() && pw == x.w()) return x;
    Tensor<T> out(x.n(), x.c(), ph, pw);
    for (int b = 0; b < x.n(); ++b)
        for (int ch = 0; ch < x.c(); ++ch)
            for (int y = 0; y < ph; ++y)
                for (int xx = 0; xx < pw; ++xx)
                    out(b, ch, y, xx) = x(b, ch, std::min(y, x.h() - 1), std::min(xx, x.w() - 1));
    return out;
}

/// Adjoint of pad_even: padded entries fold back onto the replicated edge.
template <class T>
Tensor<T> pad_even_adjoint(const Tensor<T>& g, int h, int w) {
    if (g.h() == h && g.w() == w) return g;
    Tensor<T> out(g.n(), g.c(), h, w);
    for (int b = 0; b < g.n(); ++b)
        for (int ch = 0; ch < g.c(); ++ch)
            for (int y = 0; y < g.h(); ++y)
                for (int xx = 0; xx < g.w(); ++xx)
                    out(b, ch, std::min(y, h - 1), std::min(xx, w - 1)) += g(b, ch, y, xx);
    return out;
}

template <class T>
Tensor<T> crop(const Tensor<T>& x, int h, int w) {
    if (x.h() == h && x.w() == w) return x;
    Tensor<T> out(x.n(), x.c(), h, w);
    for (int b = 0; b < x.n(); ++b)
        for (int ch = 0; ch < x.c(); ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) out(b, ch, y, xx) = x(b, ch, y, xx);
    return out;
}

/// Analysis of an even-sized tensor into (n, 4c, h/2, w/2) stacked as [ll | lh | hl | hh].
template <class T>
Tensor<T> haar_analysis_stacked(const Tensor<T>& x) {
    const int c = x.c();
    const int h2 = x.h() / 2;
    const int w2 = x.w() / 2;
    Tensor<T> out(x.n(), 4 * c, h2, w2);
    const T half = T(0.5);
    for (int b = 0; b < x.n(); ++b) {
        for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < h2; ++y) {
                for (int xx = 0; xx < w2; ++xx) {
                    const T a = x(b, ch, 2 * y, 2 * xx);
                    const T bb = x(b, ch, 2 * y, 2 * xx + 1);
                    const T cc = x(b, ch, 2 * y + 1, 2 * xx);
                    const T d = x(b, ch, 2 * y + 1, 2 * xx + 1);
                    out(b, ch, y, xx) = half * (a + bb + cc + d);
                    out(b, c + ch, y, xx) = half * (a - bb + cc - d);
                    out(b, 2 * c + ch, y, xx) = half * (a + bb - cc - d);
                    out(b, 3 * c + ch, y, xx) = half * (a - bb - cc + d);
                }
            }
        }
    }
    return out;
}

/// Inverse (and adjoint) of haar_analysis_stacked.
template <class T>
Tensor<T> haar_synthesis_stacked(const Tensor<T>& bands) {
    if (bands.c() % 4 != 0) throw ShapeError("haar synthesis expects 4c channels, got " + bands.shape().str());
    const int c = bands.c() / 4;
    Tensor<T> out(bands.n(), c, 2 * bands.h(), 2 * bands.w());
    const T half = T(0.5);
    for (int b = 0; b < bands.n(); ++b) {
        for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < bands.h(); ++y) {
                for (int xx = 0; xx < bands.w(); ++xx) {
                    const T ll = bands(b, ch, y, xx);
                    const T lh = bands(b, c + ch, y, xx);
                    const T hl = bands(b, 2 * c + ch, y, xx);
                    const T hh = bands(b, 3 * c + ch, y, xx);
                    out(b, ch, 2 * y, 2 * xx) = half * (ll + lh + hl + hh);
                    out(b, ch, 2 * y, 2 * xx + 1) = half * (ll - lh + hl - hh);
                    out(b, ch, 2 * y + 1, 2 * xx) = half * (ll + lh - hl - hh);
                    out(b, ch, 2 * y + 1, 2 * xx + 1) = half * (ll - lh - hl + hh);
                }
            }
        }
    }
    return out;
}

} // namespace detail

template <class T>
WaveletBands<T> dwt2(const Tensor<T>& features) {
    if (features.h() < 2 || features.w() < 2) {
        throw ShapeError("dwt2 needs at least 2x2 spatial size, got " + features.shape().str());
    }
    const Tensor<T> stacked = detail::haar_analysis_stacked(detail::pad_even(features));
    const int c = features.c();
    return {slice_channels(stacked, 0, c), slice_channels(stacked, c, c), slice_channels(stacked, 2 * c, c),
            slice_channels(stacked, 3 * c, c), features.h(), features.w()};
}

template <class T>
Tensor<T> idwt2(const WaveletBands<T>& bands) {
    const Shape s = bands.ll.shape();
    for (const auto* b : {&bands.lh, &bands.hl, &bands.hh}) {
        if (!(b->shape() == s)) throw ShapeError("idwt2: band shape " + b->shape().str() + " vs " + s.str());
    }
    const int h = bands.height > 0 ? bands.height : 2 * s.h;
    const int w = bands.width > 0 ? bands.width : 2 * s.w;
    if (h > 2 * s.h || w > 2 * s.w || h < 2 * s.h - 1 || w < 2 * s.w - 1) {
        throw ShapeError("idwt2: recorded size inconsistent with band size");
    }
    const Tensor<T> stacked = concat_channels<T>({&bands.ll, &bands.lh, &bands.hl, &bands.hh});
    return detail::crop(detail::haar_synthesis_stacked(stacked), h, w);
}

} // namespace dasunet
