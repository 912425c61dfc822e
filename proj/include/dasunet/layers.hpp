#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dasunet/ops.hpp"

namespace dasunet::nn {

using ag::Var;

template <class T>
struct NamedParam {
    std::string name;
    Var<T> var;
};

/// Owns every learnable tensor of a model under a hierarchical name.
template <class T>
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

    Var<T> add(const std::string& name, Tensor<T> init) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
        Var<T> v(std::move(init), true);
        index_[name] = params_.size();
        params_.push_back({name, v});
        return v;
    }

    /// U(-bound, bound) initialisation drawn in double so float and double
    /// models built from the same seed hold the same weights up to rounding.
    Var<T> add_uniform(const std::string& name, Shape shape, double bound) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor<T> t(shape);
        for (auto& v : t.vec()) v = static_cast<T>(dist(rng_));
        return add(name, std::move(t));
    }

    [[nodiscard]] const std::vector<NamedParam<T>>& params() const { return params_; }
    std::vector<NamedParam<T>>& params() { return params_; }

    [[nodiscard]] const Var<T>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second].var;
    }
    Var<T>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second].var;
    }

    [[nodiscard]] std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.var.value().size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

private:
    std::mt19937_64 rng_;
    std::vector<NamedParam<T>> params_;
    std::map<std::string, std::size_t> index_;
};

/// Stride-1 "same" convolution with bias.
template <class T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParamStore<T>& store, const std::string& name, int cin, int cout, int kernel) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(cin * kernel * kernel));
        weight_ = store.add_uniform(name + ".weight", {cout, cin, kernel, kernel}, bound);
        bias_ = store.add_uniform(name + ".bias", {1, cout, 1, 1}, bound);
    }
    Var<T> operator()(const Var<T>& x) const { return ag::conv2d(x, weight_, bias_); }
    Var<T>& weight() { return weight_; }
    Var<T>& bias() { return bias_; }

private:
    Var<T> weight_, bias_;
};

template <class T>
class DepthwiseConv2d {
public:
    DepthwiseConv2d() = default;
    DepthwiseConv2d(ParamStore<T>& store, const std::string& name, int channels, int kernel) {
        const double bound = 1.0 / static_cast<double>(kernel);
        weight_ = store.add_uniform(name + ".weight", {channels, 1, kernel, kernel}, bound);
        bias_ = store.add_uniform(name + ".bias", {1, channels, 1, 1}, bound);
    }
    Var<T> operator()(const Var<T>& x) const { return ag::depthwise_conv2d(x, weight_, bias_); }

private:
    Var<T> weight_, bias_;
};

template <class T>
class PReLU {
public:
    PReLU() = default;
    PReLU(ParamStore<T>& store, const std::string& name) {
        slope_ = store.add(name + ".slope", Tensor<T>(1, 1, 1, 1, T(0.25)));
    }
    Var<T> operator()(const Var<T>& x) const { return ag::prelu(x, slope_); }
    Var<T>& slope() { return slope_; }

private:
    Var<T> slope_;
};

/// Normalises across channels at every pixel.
template <class T>
class LayerNorm2d {
public:
    LayerNorm2d() = default;
    LayerNorm2d(ParamStore<T>& store, const std::string& name, int channels) {
        gamma_ = store.add(name + ".gamma", Tensor<T>(1, channels, 1, 1, T(1)));
        beta_ = store.add(name + ".beta", Tensor<T>(1, channels, 1, 1, T(0)));
    }
    Var<T> operator()(const Var<T>& x) const { return ag::layer_norm_channels(x, gamma_, beta_); }

private:
    Var<T> gamma_, beta_;
};

/// Squeeze-and-excitation channel attention with a residual connection:
///   out = x + x * sigmoid(W2 relu(W1 avgpool(x)))
/// so saturated gates (all 1) give out = 2x and closed gates give out = x.
template <class T>
class ChannelAttention {
public:
    static constexpr int reduction = 8;

    ChannelAttention() = default;
    ChannelAttention(ParamStore<T>& store, const std::string& name, int channels) {
        const int hidden = std::max(1, channels / reduction);
        squeeze_ = Conv2d<T>(store, name + ".squeeze", channels, hidden, 1);
        excite_ = Conv2d<T>(store, name + ".excite", hidden, channels, 1);
    }
    [[nodiscard]] Var<T> gates(const Var<T>& x) const {
        return ag::sigmoid(excite_(ag::relu(squeeze_(ag::global_avg_pool(x)))));
    }
    Var<T> operator()(const Var<T>& x) const { return ag::add(x, ag::channel_mul(x, gates(x))); }
    Conv2d<T>& excite() { return excite_; }

private:
    Conv2d<T> squeeze_, excite_;
};

/// Gated feed-forward layer with residual:
///   x + P_out( gelu(a) * b ),  [a | b] = DW3x3( P_in( LN(x) ) )
template <class T>
class FeedForward {
public:
    static constexpr int expansion = 2;

    FeedForward() = default;
    FeedForward(ParamStore<T>& store, const std::string& name, int channels) : hidden_(expansion * channels) {
        norm_ = LayerNorm2d<T>(store, name + ".norm", channels);
        project_in_ = Conv2d<T>(store, name + ".project_in", channels, 2 * hidden_, 1);
        dwconv_ = DepthwiseConv2d<T>(store, name + ".dwconv", 2 * hidden_, 3);
        project_out_ = Conv2d<T>(store, name + ".project_out", hidden_, channels, 1);
    }
    Var<T> operator()(const Var<T>& x) const {
        const Var<T> z = dwconv_(project_in_(norm_(x)));
        const Var<T> gated = ag::mul(ag::gelu(ag::slice(z, 0, hidden_)), ag::slice(z, hidden_, hidden_));
        return ag::add(x, project_out_(gated));
    }
    Conv2d<T>& project_out() { return project_out_; }

private:
    int hidden_ = 0;
    LayerNorm2d<T> norm_;
    Conv2d<T> project_in_;
    DepthwiseConv2d<T> dwconv_;
    Conv2d<T> project_out_;
};

/// Pre-norm windowed multi-head self-attention with residual.
template <class T>
class WindowSelfAttention {
public:
    WindowSelfAttention() = default;
    WindowSelfAttention(ParamStore<T>& store, const std::string& name, int channels, int heads, int window)
        : heads_(heads), window_(window) {
        if (channels % heads != 0) {
            throw ConfigError("channels (" + std::to_string(channels) + ") must be divisible by attention heads (" +
                              std::to_string(heads) + ")");
        }
        norm_ = LayerNorm2d<T>(store, name + ".norm", channels);
        qkv_ = Conv2d<T>(store, name + ".qkv", channels, 3 * channels, 1);
        proj_ = Conv2d<T>(store, name + ".proj", channels, channels, 1);
    }
    Var<T> operator()(const Var<T>& x) const {
        return ag::add(x, proj_(ag::window_attention(qkv_(norm_(x)), heads_, window_)));
    }
    Conv2d<T>& proj() { return proj_; }

private:
    int heads_ = 1;
    int window_ = 8;
    LayerNorm2d<T> norm_;
    Conv2d<T> qkv_, proj_;
};

} // namespace dasunet::nn
