#pragma once

// Synthetic paired low/normal-light images for smoke tests and overfit runs.

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>

#include "dasunet/image_io.hpp"

namespace dasunet::data {

struct ToyOptions {
    int count = 8;
    int size = 64;
    double gain = 0.3;  ///< low = gain * normal^gamma
    double gamma = 1.3;
    std::uint64_t seed = 0;
};

/// Smooth colored waves plus a few flat rectangles, in [0.05, 0.95].
inline Tensor<double> toy_normal_image(int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor<double> img(1, 3, size, size);
    for (int c = 0; c < 3; ++c) {
        const double fx = 1.0 + 3.0 * u(rng);
        const double fy = 1.0 + 3.0 * u(rng);
        const double phase = 2.0 * std::numbers::pi * u(rng);
        const double base = 0.3 + 0.4 * u(rng);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double t = 2.0 * std::numbers::pi * (fx * x + fy * y) / size + phase;
                img(0, c, y, x) = base + 0.25 * std::sin(t);
            }
    }
    for (int r = 0; r < 3; ++r) {
        const int y0 = static_cast<int>(u(rng) * size * 0.7);
        const int x0 = static_cast<int>(u(rng) * size * 0.7);
        const int len = size / 8 + static_cast<int>(u(rng) * size / 4);
        const double col[3] = {u(rng), u(rng), u(rng)};
        for (int c = 0; c < 3; ++c)
            for (int y = y0; y < std::min(size, y0 + len); ++y)
                for (int x = x0; x < std::min(size, x0 + len); ++x) img(0, c, y, x) = col[c];
    }
    for (auto& v : img.vec()) v = std::clamp(v, 0.05, 0.95);
    return img;
}

inline Tensor<double> darken(const Tensor<double>& normal, double gain, double gamma) {
    Tensor<double> low = normal;
    for (auto& v : low.vec()) v = gain * std::pow(v, gamma);
    return low;
}

/// Writes `<root>/low/toyNN.png` and `<root>/normal/toyNN.png`.
inline void write_toy_dataset(const std::filesystem::path& root, const ToyOptions& opt = {}) {
    if (opt.count <= 0 || opt.size < 2) throw ConfigError("toy dataset needs count > 0 and size >= 2");
    std::filesystem::create_directories(root / "low");
    std::filesystem::create_directories(root / "normal");
    std::mt19937_64 rng(opt.seed);
    for (int i = 0; i < opt.count; ++i) {
        const Tensor<double> normal = toy_normal_image(opt.size, rng);
        char name[32];
        std::snprintf(name, sizeof(name), "toy%02d.png", i);
        io::write_png(root / "normal" / name, normal);
        io::write_png(root / "low" / name, darken(normal, opt.gain, opt.gamma));
    }
}

} // namespace dasunet::data
