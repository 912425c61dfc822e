#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dasunet/errors.hpp"

namespace dasunet {

/// Batch, channel, height, width.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    [[nodiscard]] std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;

    [[nodiscard]] std::string str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }
};

/// Dense NCHW array. An image is a tensor with n == 1.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {
        if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
            throw ShapeError("negative tensor dimension " + shape.str());
        }
    }
    Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] int n() const { return shape_.n; }
    [[nodiscard]] int c() const { return shape_.c; }
    [[nodiscard]] int h() const { return shape_.h; }
    [[nodiscard]] int w() const { return shape_.w; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    [[nodiscard]] std::size_t index(int b, int ch, int y, int x) const {
        return ((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) * shape_.w + x;
    }
    T& operator()(int b, int ch, int y, int x) { return data_[index(b, ch, y, x)]; }
    const T& operator()(int b, int ch, int y, int x) const { return data_[index(b, ch, y, x)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Pointer to the start of one (sample, channel) plane.
    T* plane(int b, int ch) { return data_.data() + index(b, ch, 0, 0); }
    const T* plane(int b, int ch) const { return data_.data() + index(b, ch, 0, 0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <class U>
    [[nodiscard]] Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.vec().begin(),
                       [](T v) { return static_cast<U>(v); });
        return out;
    }

    Tensor& operator+=(const Tensor& o) {
        require_same(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        require_same(o, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }
    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(Tensor a, T s) { return a *= s; }
    friend Tensor operator*(T s, Tensor a) { return a *= s; }

    void require_same(const Tensor& o, const char* what) const {
        if (!(shape_ == o.shape_)) {
            throw ShapeError(std::string(what) + ": shape mismatch " + shape_.str() + " vs " +
                             o.shape_.str());
        }
    }

private:
    Shape shape_{};
    std::vector<T> data_;
};

template <class T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
    a.require_same(b, "dot");
    return std::inner_product(a.vec().begin(), a.vec().end(), b.vec().begin(), T(0));
}

template <class T>
T squared_norm(const Tensor<T>& a) {
    return dot(a, a);
}

template <class T>
T max_abs(const Tensor<T>& a) {
    T m = 0;
    for (T v : a.vec()) m = std::max(m, std::abs(v));
    return m;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    a.require_same(b, "max_abs_diff");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <class T>
bool all_finite(const Tensor<T>& a) {
    return std::all_of(a.vec().begin(), a.vec().end(), [](T v) { return std::isfinite(v); });
}

template <class T>
Tensor<T> clamp01(Tensor<T> a) {
    for (auto& v : a.vec()) v = std::clamp(v, T(0), T(1));
    return a;
}

template <class T, class Rng>
Tensor<T> uniform_tensor(Shape s, Rng& rng, T lo = T(0), T hi = T(1)) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(s);
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
    return t;
}

/// Copy `count` channels starting at `start`.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& a, int start, int count) {
    if (start < 0 || count < 0 || start + count > a.c()) {
        throw ShapeError("slice_channels out of range");
    }
    Tensor<T> out(a.n(), count, a.h(), a.w());
    const std::size_t p = a.shape().plane();
    for (int b = 0; b < a.n(); ++b) {
        for (int ch = 0; ch < count; ++ch) {
            std::copy_n(a.plane(b, start + ch), p, out.plane(b, ch));
        }
    }
    return out;
}

template <class T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels of nothing");
    const Shape s0 = parts.front()->shape();
    int total = 0;
    for (const auto* p : parts) {
        if (p->n() != s0.n || p->h() != s0.h || p->w() != s0.w) {
            throw ShapeError("concat_channels: " + p->shape().str() + " vs " + s0.str());
        }
        total += p->c();
    }
    Tensor<T> out(s0.n, total, s0.h, s0.w);
    const std::size_t pl = s0.plane();
    for (int b = 0; b < s0.n; ++b) {
        int off = 0;
        for (const auto* p : parts) {
            for (int ch = 0; ch < p->c(); ++ch) std::copy_n(p->plane(b, ch), pl, out.plane(b, off + ch));
            off += p->c();
        }
    }
    return out;
}

/// Stack single-sample tensors along the batch axis.
template <class T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
    if (items.empty()) throw ShapeError("stack_batch of nothing");
    const Shape s = items.front().shape();
    Tensor<T> out(static_cast<int>(items.size()) * s.n, s.c, s.h, s.w);
    std::size_t off = 0;
    for (const auto& it : items) {
        if (!(Shape{s.n, s.c, s.h, s.w} == it.shape())) throw ShapeError("stack_batch: ragged shapes");
        std::copy(it.vec().begin(), it.vec().end(), out.data() + off);
        off += it.size();
    }
    return out;
}

template <class T>
Tensor<T> sample(const Tensor<T>& a, int b) {
    Tensor<T> out(1, a.c(), a.h(), a.w());
    const std::size_t len = static_cast<std::size_t>(a.c()) * a.shape().plane();
    std::copy_n(a.data() + b * len, len, out.data());
    return out;
}

} // namespace dasunet
