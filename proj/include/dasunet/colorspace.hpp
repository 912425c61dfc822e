#pragma once

// Full-range BT.601 (JPEG) luminance/chrominance transform. Chroma is stored
// with a +0.5 offset so that neutral grey sits at 0.5, inside the image range.

#include <algorithm>

#include "dasunet/tensor.hpp"

namespace dasunet {

namespace bt601 {
inline constexpr double kr = 0.299;
inline constexpr double kb = 0.114;
inline constexpr double kg = 1.0 - kr - kb;
inline constexpr double cb_scale = 2.0 * (1.0 - kb); // 1.772
inline constexpr double cr_scale = 2.0 * (1.0 - kr); // 1.402
inline constexpr double chroma_offset = 0.5;
} // namespace bt601

/// Luminance (n,1,h,w) and offset chrominance (n,2,h,w) of the same image.
template <class T>
struct SpaceDecomposition {
    Tensor<T> lum;
    Tensor<T> chrom;

    void validate() const {
        if (lum.c() != 1 || chrom.c() != 2) {
            throw ShapeError("SpaceDecomposition expects 1 luminance and 2 chrominance channels, got " +
                             lum.shape().str() + " and " + chrom.shape().str());
        }
        if (lum.n() != chrom.n() || lum.h() != chrom.h() || lum.w() != chrom.w()) {
            throw ShapeError("SpaceDecomposition: luminance " + lum.shape().str() +
                             " and chrominance " + chrom.shape().str() + " disagree spatially");
        }
    }
};

/// Y and (Cb, Cr) pixel values; written so that grey maps to exactly (v, 0.5, 0.5).
template <class T>
inline void rgb_to_ycbcr_pixel(T r, T g, T b, T& y, T& cb, T& cr) {
    using namespace bt601;
    y = g + T(kr) * (r - g) + T(kb) * (b - g);
    cb = T(chroma_offset) + (b - y) / T(cb_scale);
    cr = T(chroma_offset) + (r - y) / T(cr_scale);
}

template <class T>
inline void ycbcr_to_rgb_pixel(T y, T cb, T cr, T& r, T& g, T& b) {
    using namespace bt601;
    b = y + T(cb_scale) * (cb - T(chroma_offset));
    r = y + T(cr_scale) * (cr - T(chroma_offset));
    g = (y - T(kr) * r - T(kb) * b) / T(kg);
}

/// Stacked (Y, Cb, Cr) tensor of an RGB tensor, no clamping.
template <class T>
Tensor<T> rgb_to_ycbcr_stacked(const Tensor<T>& rgb) {
    if (rgb.c() != 3) throw ShapeError("rgb_to_ycbcr expects 3 channels, got " + rgb.shape().str());
    Tensor<T> out(rgb.shape());
    const std::size_t p = rgb.shape().plane();
    for (int s = 0; s < rgb.n(); ++s) {
        const T* r = rgb.plane(s, 0);
        const T* g = rgb.plane(s, 1);
        const T* b = rgb.plane(s, 2);
        T* y = out.plane(s, 0);
        T* cb = out.plane(s, 1);
        T* cr = out.plane(s, 2);
        for (std::size_t i = 0; i < p; ++i) rgb_to_ycbcr_pixel(r[i], g[i], b[i], y[i], cb[i], cr[i]);
    }
    return out;
}

/// Inverse of rgb_to_ycbcr_stacked, no clamping.
template <class T>
Tensor<T> ycbcr_stacked_to_rgb(const Tensor<T>& ycc) {
    if (ycc.c() != 3) throw ShapeError("ycbcr_to_rgb expects 3 channels, got " + ycc.shape().str());
    Tensor<T> out(ycc.shape());
    const std::size_t p = ycc.shape().plane();
    for (int s = 0; s < ycc.n(); ++s) {
        const T* y = ycc.plane(s, 0);
        const T* cb = ycc.plane(s, 1);
        const T* cr = ycc.plane(s, 2);
        T* r = out.plane(s, 0);
        T* g = out.plane(s, 1);
        T* b = out.plane(s, 2);
        for (std::size_t i = 0; i < p; ++i) ycbcr_to_rgb_pixel(y[i], cb[i], cr[i], r[i], g[i], b[i]);
    }
    return out;
}

template <class T>
SpaceDecomposition<T> rgb_to_ycbcr(const Tensor<T>& rgb) {
    Tensor<T> ycc = rgb_to_ycbcr_stacked(rgb);
    return {slice_channels(ycc, 0, 1), slice_channels(ycc, 1, 2)};
}

/// Space merge: inverse transform of both components, unclamped.
template <class T>
Tensor<T> merge_unclamped(const SpaceDecomposition<T>& dec) {
    dec.validate();
    return ycbcr_stacked_to_rgb(concat_channels<T>({&dec.lum, &dec.chrom}));
}

/// Space merge followed by the final clamp to [0,1].
template <class T>
Tensor<T> ycbcr_to_rgb(const SpaceDecomposition<T>& dec) {
    return clamp01(merge_unclamped(dec));
}

/// BT.601 luma of an (n,3,h,w) tensor; single-channel input is returned unchanged.
template <class T>
Tensor<T> luma(const Tensor<T>& img) {
    if (img.c() == 1) return img;
    return rgb_to_ycbcr(img).lum;
}

} // namespace dasunet
