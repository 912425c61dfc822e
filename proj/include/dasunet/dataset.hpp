#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dasunet/image_io.hpp"

namespace dasunet::data {

namespace fs = std::filesystem;

/// Horizontal/vertical flips followed by a counter-clockwise rotation of quarter_turns * 90 degrees.
struct Augmentation {
    bool hflip = false;
    bool vflip = false;
    int quarter_turns = 0;
};

template <class T>
Tensor<T> apply_augmentation(const Tensor<T>& img, const Augmentation& aug) {
    const int h = img.h();
    const int w = img.w();
    const bool swap = aug.quarter_turns % 2 == 1;
    Tensor<T> out(img.n(), img.c(), swap ? w : h, swap ? h : w);
    for (int b = 0; b < img.n(); ++b)
        for (int c = 0; c < img.c(); ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    int sy = aug.vflip ? h - 1 - y : y;
                    int sx = aug.hflip ? w - 1 - x : x;
                    int ty = y;
                    int tx = x;
                    switch (aug.quarter_turns % 4) {
                    case 1: ty = w - 1 - x; tx = y; break;
                    case 2: ty = h - 1 - y; tx = w - 1 - x; break;
                    case 3: ty = x; tx = h - 1 - y; break;
                    default: break;
                    }
                    out(b, c, ty, tx) = img(b, c, sy, sx);
                }
    return out;
}

/// Reflect-pads (without repeating the edge) up to at least min_h x min_w.
template <class T>
Tensor<T> pad_reflect_to(const Tensor<T>& img, int min_h, int min_w) {
    const int h = std::max(img.h(), min_h);
    const int w = std::max(img.w(), min_w);
    if (h == img.h() && w == img.w()) return img;
    auto reflect = [](int i, int n) {
        if (n == 1) return 0;
        const int period = 2 * (n - 1);
        i %= period;
        return i < n ? i : period - i;
    };
    Tensor<T> out(img.n(), img.c(), h, w);
    for (int b = 0; b < img.n(); ++b)
        for (int c = 0; c < img.c(); ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out(b, c, y, x) = img(b, c, reflect(y, img.h()), reflect(x, img.w()));
    return out;
}

template <class T>
Tensor<T> crop_window(const Tensor<T>& img, int y0, int x0, int h, int w) {
    Tensor<T> out(img.n(), img.c(), h, w);
    for (int b = 0; b < img.n(); ++b)
        for (int c = 0; c < img.c(); ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out(b, c, y, x) = img(b, c, y0 + y, x0 + x);
    return out;
}

template <class T>
struct Pair {
    Tensor<T> low;
    Tensor<T> normal;
    std::string name;
};

/// `<root>/low/*` and `<root>/normal/*` paired by file stem.
class PairedDataset {
public:
    explicit PairedDataset(fs::path root) : root_(std::move(root)) {
        const fs::path low = root_ / "low";
        const fs::path normal = root_ / "normal";
        if (!fs::is_directory(root_)) throw DatasetError("dataset root does not exist: " + root_.string());
        if (!fs::is_directory(low)) throw DatasetError("missing directory " + low.string());
        if (!fs::is_directory(normal)) throw DatasetError("missing directory " + normal.string());
        const auto lows = list(low);
        const auto normals = list(normal);
        for (const auto& [stem, path] : lows) {
            auto it = normals.find(stem);
            if (it == normals.end()) throw DatasetError("unpaired file " + path.string() + " (no match in normal/)");
            entries_.push_back({stem, path, it->second});
        }
        for (const auto& [stem, path] : normals) {
            if (!lows.count(stem)) throw DatasetError("unpaired file " + path.string() + " (no match in low/)");
        }
        if (entries_.empty()) throw DatasetError("dataset " + root_.string() + " holds no image pairs");
        cache_.resize(entries_.size());
    }

    [[nodiscard]] std::size_t size() const { return entries_.size(); }
    [[nodiscard]] const fs::path& root() const { return root_; }
    [[nodiscard]] const std::string& name(std::size_t i) const { return entries_.at(i).stem; }

    /// Full-resolution pair, decoded once and cached.
    template <class T>
    Pair<T> full(std::size_t index) {
        const auto& raw = decoded(index);
        return {raw.first.template cast<T>(), raw.second.template cast<T>(), entries_[index].stem};
    }

    /// Random crop (crop <= 0 keeps the full image) plus optional flips and
    /// rotation, drawn from `rng` and applied identically to both images.
    template <class T, class Rng>
    Pair<T> load_pair(std::size_t index, int crop, bool augment, Rng& rng) {
        if (index >= entries_.size()) throw DatasetError("pair index " + std::to_string(index) + " out of range");
        const auto& raw = decoded(index);
        Tensor<double> low = raw.first;
        Tensor<double> normal = raw.second;
        if (crop > 0) {
            low = pad_reflect_to(low, crop, crop);
            normal = pad_reflect_to(normal, crop, crop);
            std::uniform_int_distribution<int> oy(0, low.h() - crop);
            std::uniform_int_distribution<int> ox(0, low.w() - crop);
            const int y0 = oy(rng);
            const int x0 = ox(rng);
            low = crop_window(low, y0, x0, crop, crop);
            normal = crop_window(normal, y0, x0, crop, crop);
        }
        if (augment) {
            std::uniform_int_distribution<int> coin(0, 1);
            std::uniform_int_distribution<int> turns(0, 3);
            Augmentation aug;
            aug.hflip = coin(rng) == 1;
            aug.vflip = coin(rng) == 1;
            aug.quarter_turns = turns(rng);
            low = apply_augmentation(low, aug);
            normal = apply_augmentation(normal, aug);
        }
        return {low.template cast<T>(), normal.template cast<T>(), entries_[index].stem};
    }

private:
    struct Entry {
        std::string stem;
        fs::path low;
        fs::path normal;
    };

    static std::map<std::string, fs::path> list(const fs::path& dir) {
        std::map<std::string, fs::path> out;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (!e.is_regular_file() || !io::is_image_file(e.path())) continue;
            const std::string stem = e.path().stem().string();
            if (out.count(stem)) throw DatasetError("duplicate image stem " + e.path().string());
            out[stem] = e.path();
        }
        return out;
    }

    const std::pair<Tensor<double>, Tensor<double>>& decoded(std::size_t index) {
        auto& slot = cache_.at(index);
        if (!slot) {
            const Entry& e = entries_[index];
            Tensor<double> low, normal;
            try {
                low = io::read_image(e.low);
            } catch (const Error& err) {
                throw DatasetError(std::string("undecodable file ") + e.low.string() + ": " + err.what());
            }
            try {
                normal = io::read_image(e.normal);
            } catch (const Error& err) {
                throw DatasetError(std::string("undecodable file ") + e.normal.string() + ": " + err.what());
            }
            if (!(low.shape() == normal.shape())) {
                throw DatasetError("pair " + e.stem + " has mismatched sizes " + low.shape().str() + " vs " +
                                   normal.shape().str());
            }
            slot.emplace(std::move(low), std::move(normal));
        }
        return *slot;
    }

    fs::path root_;
    std::vector<Entry> entries_;
    std::vector<std::optional<std::pair<Tensor<double>, Tensor<double>>>> cache_;
};

} // namespace dasunet::data
