#include <gtest/gtest.h>

#include "dasunet/wavelet.hpp"
#include "support.hpp"

using namespace dasunet;
using testing_support::random_image;

namespace {

double band_energy(const WaveletBands<double>& b) {
    return squared_norm(b.ll) + squared_norm(b.lh) + squared_norm(b.hl) + squared_norm(b.hh);
}

} // namespace

TEST(Wavelet, ConstantBlock) {
    const double c = 0.37;
    const auto b = dwt2(Tensor<double>(1, 1, 2, 2, c));
    EXPECT_DOUBLE_EQ(b.ll[0], 2 * c);
    EXPECT_EQ(b.lh[0], 0.0);
    EXPECT_EQ(b.hl[0], 0.0);
    EXPECT_EQ(b.hh[0], 0.0);
}

TEST(Wavelet, SingleBlockAverages) {
    Tensor<double> x(1, 1, 2, 2);
    x.vec() = {0.1, 0.4, 0.2, 0.9};
    const auto b = dwt2(x);
    EXPECT_DOUBLE_EQ(b.ll[0], (0.1 + 0.4 + 0.2 + 0.9) / 2);
    EXPECT_DOUBLE_EQ(b.lh[0], (0.1 - 0.4 + 0.2 - 0.9) / 2);
    EXPECT_DOUBLE_EQ(b.hl[0], (0.1 + 0.4 - 0.2 - 0.9) / 2);
    EXPECT_DOUBLE_EQ(b.hh[0], (0.1 - 0.4 - 0.2 + 0.9) / 2);
}

TEST(Wavelet, ParsevalOnRandom8x8) {
    const auto x = random_image(1, 3, 8, 8, 5, -1, 1);
    const double e = squared_norm(x);
    EXPECT_NEAR(band_energy(dwt2(x)), e, 1e-10 * e);
}

TEST(Wavelet, InverseOfConstantBands) {
    WaveletBands<double> b{Tensor<double>(1, 2, 3, 3, 1.2), Tensor<double>(1, 2, 3, 3), Tensor<double>(1, 2, 3, 3),
                           Tensor<double>(1, 2, 3, 3), 6, 6};
    const auto x = idwt2(b);
    ASSERT_EQ(x.shape(), (Shape{1, 2, 6, 6}));
    for (double v : x.vec()) EXPECT_DOUBLE_EQ(v, 0.6);
}

TEST(Wavelet, ZeroBandsGiveZero) {
    WaveletBands<double> b{Tensor<double>(1, 1, 4, 4), Tensor<double>(1, 1, 4, 4), Tensor<double>(1, 1, 4, 4),
                           Tensor<double>(1, 1, 4, 4), 8, 8};
    const auto x = idwt2(b);
    for (double v : x.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Wavelet, PerfectReconstructionAndParseval) {
    for (int i = 0; i < 100; ++i) {
        const int h = 2 * (1 + i % 7);
        const int w = 2 * (1 + (i * 3) % 5);
        const auto x = random_image(1 + i % 2, 1 + i % 4, h, w, 1000 + i, -2, 2);
        const auto b = dwt2(x);
        EXPECT_LE(max_abs_diff(idwt2(b), x), 1e-6);
        const double e = squared_norm(x);
        EXPECT_NEAR(band_energy(b), e, 1e-10 * e);
    }
}

TEST(Wavelet, OddSizesPadAndCrop) {
    for (auto [h, w] : {std::pair{3, 3}, {5, 8}, {8, 7}, {9, 11}}) {
        const auto x = random_image(1, 2, h, w, h * 100 + w);
        const auto b = dwt2(x);
        EXPECT_EQ(b.ll.h(), (h + 1) / 2);
        EXPECT_EQ(b.ll.w(), (w + 1) / 2);
        EXPECT_EQ(b.height, h);
        EXPECT_EQ(b.width, w);
        EXPECT_EQ(b.padded(), h % 2 == 1 || w % 2 == 1);
        EXPECT_LE(max_abs_diff(idwt2(b), x), 1e-12);
    }
}

TEST(Wavelet, SinglePrecisionReconstruction) {
    const auto x = random_image<float>(1, 4, 16, 16, 77);
    EXPECT_LE(max_abs_diff(idwt2(dwt2(x)), x), 1e-4f);
}

TEST(Wavelet, Linear) {
    const auto x = random_image(1, 2, 6, 10, 1, -1, 1);
    const auto y = random_image(1, 2, 6, 10, 2, -1, 1);
    const double a = 0.7, c = -1.3;
    const auto lhs = dwt2(x * a + y * c);
    const auto bx = dwt2(x);
    const auto by = dwt2(y);
    EXPECT_LE(max_abs_diff(lhs.ll, bx.ll * a + by.ll * c), 1e-14);
    EXPECT_LE(max_abs_diff(lhs.lh, bx.lh * a + by.lh * c), 1e-14);
    EXPECT_LE(max_abs_diff(lhs.hl, bx.hl * a + by.hl * c), 1e-14);
    EXPECT_LE(max_abs_diff(lhs.hh, bx.hh * a + by.hh * c), 1e-14);
}

TEST(Wavelet, TooSmallIsShapeError) {
    EXPECT_THROW(dwt2(Tensor<double>(1, 1, 1, 4)), ShapeError);
    EXPECT_THROW(dwt2(Tensor<double>(1, 1, 4, 1)), ShapeError);
}

TEST(Wavelet, BandMismatchIsShapeError) {
    WaveletBands<double> b{Tensor<double>(1, 1, 4, 4), Tensor<double>(1, 1, 4, 3), Tensor<double>(1, 1, 4, 4),
                           Tensor<double>(1, 1, 4, 4), 8, 8};
    EXPECT_THROW(idwt2(b), ShapeError);
    b.lh = Tensor<double>(1, 1, 4, 4);
    b.height = 5;
    EXPECT_THROW(idwt2(b), ShapeError);
}
