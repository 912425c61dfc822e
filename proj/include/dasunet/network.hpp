#pragma once

// Unfolded two-stream enhancement network.
//
// Every stage runs, per stream s (luminance "los", chrominance "cos"):
//   u_s        = x_s - step_s * Dt_s( D_s(x_s) - y_s )      gradient-descent module
//   x_s, F_s   = PMM_s(u_s, F_s)                            prior-modelling module
// and fuses the streams into an RGB estimate with the space-aggregation module.
// F_s travels to the next stage unchanged (no convolution on that path).

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dasunet/colorspace.hpp"
#include "dasunet/layers.hpp"

namespace dasunet::nn {

enum class Variant { dual_ycbcr, single_rgb, single_ycbcr, triple_rgb, triple_ycbcr };
enum class PriorKind { luminance, chrominance };

inline std::string to_string(Variant v) {
    switch (v) {
    case Variant::dual_ycbcr: return "dual_ycbcr";
    case Variant::single_rgb: return "single_rgb";
    case Variant::single_ycbcr: return "single_ycbcr";
    case Variant::triple_rgb: return "triple_rgb";
    case Variant::triple_ycbcr: return "triple_ycbcr";
    }
    return "?";
}

inline Variant variant_from_string(const std::string& s) {
    for (Variant v : {Variant::dual_ycbcr, Variant::single_rgb, Variant::single_ycbcr, Variant::triple_rgb,
                      Variant::triple_ycbcr}) {
        if (to_string(v) == s) return v;
    }
    throw ConfigError("unknown variant '" + s + "'");
}

struct StreamSpec {
    std::string name;
    int first_channel = 0; ///< offset into the (transformed) 3-channel input
    int channels = 1;
    PriorKind prior = PriorKind::luminance;
};

/// How a variant splits the input. Single-channel luminance-like streams (Y, R,
/// G, B) use the luminance prior; chroma and multi-channel streams the wavelet one.
struct VariantSpec {
    bool ycbcr = true;
    std::vector<StreamSpec> streams;
};

inline VariantSpec variant_spec(Variant v) {
    switch (v) {
    case Variant::dual_ycbcr:
        return {true, {{"los", 0, 1, PriorKind::luminance}, {"cos", 1, 2, PriorKind::chrominance}}};
    case Variant::single_rgb: return {false, {{"s0", 0, 3, PriorKind::chrominance}}};
    case Variant::single_ycbcr: return {true, {{"s0", 0, 3, PriorKind::chrominance}}};
    case Variant::triple_rgb:
        return {false,
                {{"s0", 0, 1, PriorKind::luminance}, {"s1", 1, 1, PriorKind::luminance}, {"s2", 2, 1, PriorKind::luminance}}};
    case Variant::triple_ycbcr:
        return {true,
                {{"s0", 0, 1, PriorKind::luminance},
                 {"s1", 1, 1, PriorKind::chrominance},
                 {"s2", 2, 1, PriorKind::chrominance}}};
    }
    throw ConfigError("unknown variant");
}

struct NetworkConfig {
    int stages = 4;
    int channels = 64;
    int transformer_blocks_per_pmm = 2;
    int attention_heads = 4;
    int window_size = 8;
    int lat_pool = 7;
    Variant variant = Variant::dual_ycbcr;

    void validate() const {
        if (stages < 1) throw ConfigError("stages must be >= 1");
        if (channels < 8) throw ConfigError("channels must be >= 8");
        if (transformer_blocks_per_pmm < 1) throw ConfigError("transformer_blocks_per_pmm must be >= 1");
        if (attention_heads < 1 || channels % attention_heads != 0) {
            throw ConfigError("attention_heads must be positive and divide channels");
        }
        if (window_size < 1) throw ConfigError("window_size must be positive");
        if (lat_pool < 1 || lat_pool % 2 == 0) throw ConfigError("lat_pool must be odd and positive");
    }
};

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
    j = {{"stages", c.stages},
         {"channels", c.channels},
         {"transformer_blocks_per_pmm", c.transformer_blocks_per_pmm},
         {"attention_heads", c.attention_heads},
         {"window_size", c.window_size},
         {"lat_pool", c.lat_pool},
         {"variant", to_string(c.variant)}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
    static const std::vector<std::string> known{"stages", "channels", "transformer_blocks_per_pmm", "attention_heads",
                                                "window_size", "lat_pool", "variant"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("network." + key + ": unknown field");
    }
    auto get_int = [&](const char* key, int& dst) {
        if (!j.contains(key)) return;
        if (!j.at(key).is_number_integer()) throw ConfigError(std::string("network.") + key + ": expected an integer");
        dst = j.at(key).get<int>();
    };
    get_int("stages", c.stages);
    get_int("channels", c.channels);
    get_int("transformer_blocks_per_pmm", c.transformer_blocks_per_pmm);
    get_int("attention_heads", c.attention_heads);
    get_int("window_size", c.window_size);
    get_int("lat_pool", c.lat_pool);
    if (j.contains("variant")) {
        if (!j.at("variant").is_string()) throw ConfigError("network.variant: expected a string");
        try {
            c.variant = variant_from_string(j.at("variant").get<std::string>());
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("network.variant: ") + e.what());
        }
    }
}

/// Learned degradation operator: x + Conv(n->c) PReLU Conv(c->n) x.
template <class T>
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(ParamStore<T>& store, const std::string& name, int channels, int width) {
        conv_in_ = Conv2d<T>(store, name + ".conv_in", channels, width, 3);
        act_ = PReLU<T>(store, name + ".act");
        conv_out_ = Conv2d<T>(store, name + ".conv_out", width, channels, 3);
    }
    Var<T> operator()(const Var<T>& x) const { return ag::add(x, conv_out_(act_(conv_in_(x)))); }
    Conv2d<T>& conv_in() { return conv_in_; }
    Conv2d<T>& conv_out() { return conv_out_; }
    PReLU<T>& act() { return act_; }

private:
    Conv2d<T> conv_in_;
    PReLU<T> act_;
    Conv2d<T> conv_out_;
};

/// Unrolled gradient step: u = x - step * Dt(D(x) - y).
template <class T>
class GradientDescentModule {
public:
    static constexpr double initial_step = 0.5;

    GradientDescentModule() = default;
    GradientDescentModule(ParamStore<T>& store, const std::string& name, int channels, int width)
        : channels_(channels) {
        degrade_ = ResidualBlock<T>(store, name + ".degrade", channels, width);
        adjoint_ = ResidualBlock<T>(store, name + ".adjoint", channels, width);
        step_ = store.add(name + ".step", Tensor<T>(1, 1, 1, 1, T(initial_step)));
    }

    Var<T> operator()(const Var<T>& y, const Var<T>& x_prev) const {
        if (!(y.shape() == x_prev.shape()) || y.shape().c != channels_) {
            throw ShapeError("GDM: observation " + y.shape().str() + " and estimate " + x_prev.shape().str() +
                             " must both have " + std::to_string(channels_) + " channels");
        }
        const Var<T> residual = ag::sub(degrade_(x_prev), y);
        return ag::sub(x_prev, ag::scale(adjoint_(residual), step_));
    }

    ResidualBlock<T>& degrade() { return degrade_; }
    ResidualBlock<T>& adjoint() { return adjoint_; }
    Var<T>& step() { return step_; }

private:
    int channels_ = 1;
    ResidualBlock<T> degrade_, adjoint_;
    Var<T> step_;
};

/// Luminance adjustment: local brightness difference against a pooled mean,
/// rescaled by a learned factor alpha:  Conv1x1( m + alpha(d) * d ),  d = x - m.
template <class T>
class LuminanceAdjustment {
public:
    LuminanceAdjustment() = default;
    LuminanceAdjustment(ParamStore<T>& store, const std::string& name, int channels, int pool) : pool_(pool) {
        alpha_ = Conv2d<T>(store, name + ".alpha", channels, channels, 3);
        out_ = Conv2d<T>(store, name + ".out", channels, channels, 1);
    }
    Var<T> operator()(const Var<T>& x) const {
        const Var<T> mean = ag::avg_pool_same(x, pool_);
        const Var<T> diff = ag::sub(x, mean);
        return out_(ag::add(mean, ag::mul(alpha_(diff), diff)));
    }
    Conv2d<T>& alpha() { return alpha_; }
    Conv2d<T>& out() { return out_; }

private:
    int pool_ = 7;
    Conv2d<T> alpha_, out_;
};

/// Wavelet split: the ll band goes through attention + feed-forward, the three
/// detail bands through a residual Conv-PReLU-Conv, then everything is merged
/// by the inverse transform.
template <class T>
class WaveletTransformer {
public:
    WaveletTransformer() = default;
    WaveletTransformer(ParamStore<T>& store, const std::string& name, const NetworkConfig& cfg) : channels_(cfg.channels) {
        const int n = cfg.channels;
        attention_ = WindowSelfAttention<T>(store, name + ".low.attn", n, cfg.attention_heads, cfg.window_size);
        low_ffn_ = FeedForward<T>(store, name + ".low.ffn", n);
        high_in_ = Conv2d<T>(store, name + ".high.conv_in", 3 * n, n, 3);
        high_act_ = PReLU<T>(store, name + ".high.act");
        high_out_ = Conv2d<T>(store, name + ".high.conv_out", n, 3 * n, 3);
    }
    Var<T> operator()(const Var<T>& x) const {
        const int n = channels_;
        const Var<T> bands = ag::haar_dwt(x);
        const Var<T> low = low_ffn_(attention_(ag::slice(bands, 0, n)));
        const Var<T> high = ag::slice(bands, n, 3 * n);
        const Var<T> high_out = ag::add(high, high_out_(high_act_(high_in_(high))));
        return ag::haar_idwt(ag::concat<T>({low, high_out}), x.shape().h, x.shape().w);
    }
    WindowSelfAttention<T>& attention() { return attention_; }
    FeedForward<T>& low_ffn() { return low_ffn_; }
    Conv2d<T>& high_out() { return high_out_; }

private:
    int channels_ = 0;
    WindowSelfAttention<T> attention_;
    FeedForward<T> low_ffn_;
    Conv2d<T> high_in_;
    PReLU<T> high_act_;
    Conv2d<T> high_out_;
};

/// One prior block: token mixer (luminance adjustment or wavelet transformer)
/// followed by the feed-forward layer.
template <class T>
class PriorBlock {
public:
    PriorBlock() = default;
    PriorBlock(ParamStore<T>& store, const std::string& name, PriorKind kind, const NetworkConfig& cfg) : kind_(kind) {
        if (kind == PriorKind::luminance) {
            norm_ = LayerNorm2d<T>(store, name + ".lat.norm", cfg.channels);
            lat_ = LuminanceAdjustment<T>(store, name + ".lat", cfg.channels, cfg.lat_pool);
        } else {
            wdt_ = WaveletTransformer<T>(store, name + ".wdt", cfg);
        }
        ffn_ = FeedForward<T>(store, name + ".ffn", cfg.channels);
    }
    Var<T> operator()(const Var<T>& x) const {
        const Var<T> mixed = kind_ == PriorKind::luminance ? ag::add(x, lat_(norm_(x))) : wdt_(x);
        return ffn_(mixed);
    }
    [[nodiscard]] PriorKind kind() const { return kind_; }
    LuminanceAdjustment<T>& lat() { return lat_; }
    WaveletTransformer<T>& wdt() { return wdt_; }
    FeedForward<T>& ffn() { return ffn_; }

private:
    PriorKind kind_ = PriorKind::luminance;
    LayerNorm2d<T> norm_;
    LuminanceAdjustment<T> lat_;
    WaveletTransformer<T> wdt_;
    FeedForward<T> ffn_;
};

template <class T>
struct PriorOutput {
    Var<T> x;        ///< refined component estimate
    Var<T> features; ///< forwarded on the high-way path
};

/// Learned proximal step.
template <class T>
class PriorModule {
public:
    PriorModule() = default;
    PriorModule(ParamStore<T>& store, const std::string& name, int channels, PriorKind kind, const NetworkConfig& cfg)
        : channels_(channels), width_(cfg.channels) {
        const int n = cfg.channels;
        conv_in_ = Conv2d<T>(store, name + ".conv_in", channels, n, 3);
        cab_ = ChannelAttention<T>(store, name + ".cab", n);
        fuse1_ = Conv2d<T>(store, name + ".fuse1", 2 * n, n, 3);
        fuse2_ = Conv2d<T>(store, name + ".fuse2", n, n, 3);
        for (int i = 0; i < cfg.transformer_blocks_per_pmm; ++i) {
            blocks_.emplace_back(store, name + ".block" + std::to_string(i), kind, cfg);
        }
        conv_out_ = Conv2d<T>(store, name + ".conv_out", n, channels, 3);
    }

    PriorOutput<T> operator()(const Var<T>& u, const Var<T>& features_prev) const {
        if (u.shape().c != channels_) {
            throw ShapeError("PMM expects " + std::to_string(channels_) + " channels, got " + u.shape().str());
        }
        const Shape& f = features_prev.shape();
        if (f.c != width_ || f.n != u.shape().n || f.h != u.shape().h || f.w != u.shape().w) {
            throw ShapeError("PMM high-way features " + f.str() + " do not match width " + std::to_string(width_) +
                             " and input " + u.shape().str());
        }
        const Var<T> shallow = cab_(conv_in_(u));
        Var<T> feat = fuse2_(fuse1_(ag::concat<T>({shallow, features_prev})));
        for (const auto& block : blocks_) feat = block(feat);
        return {ag::add(u, conv_out_(feat)), feat};
    }

    std::vector<PriorBlock<T>>& blocks() { return blocks_; }

private:
    int channels_ = 1;
    int width_ = 8;
    Conv2d<T> conv_in_;
    ChannelAttention<T> cab_;
    Conv2d<T> fuse1_, fuse2_;
    std::vector<PriorBlock<T>> blocks_;
    Conv2d<T> conv_out_;
};

/// Concat -> Conv3x3(n) -> CAB -> Conv3x3(3).
template <class T>
class SpaceAggregation {
public:
    SpaceAggregation() = default;
    SpaceAggregation(ParamStore<T>& store, const std::string& name, int in_channels, int width) {
        conv_in_ = Conv2d<T>(store, name + ".conv_in", in_channels, width, 3);
        cab_ = ChannelAttention<T>(store, name + ".cab", width);
        conv_out_ = Conv2d<T>(store, name + ".conv_out", width, 3, 3);
    }
    Var<T> operator()(const std::vector<Var<T>>& estimates) const {
        for (const auto& e : estimates) {
            const Shape& a = e.shape();
            const Shape& b = estimates.front().shape();
            if (a.n != b.n || a.h != b.h || a.w != b.w) {
                throw ShapeError("SAM: estimates " + a.str() + " and " + b.str() + " disagree spatially");
            }
        }
        return conv_out_(cab_(conv_in_(ag::concat(estimates))));
    }

private:
    Conv2d<T> conv_in_;
    ChannelAttention<T> cab_;
    Conv2d<T> conv_out_;
};

template <class T>
struct StreamModules {
    GradientDescentModule<T> gdm;
    PriorModule<T> pmm;
};

template <class T>
struct ForwardResult {
    std::vector<Var<T>> outputs;                ///< RGB estimate of every stage, unclamped
    std::vector<std::vector<Var<T>>> estimates; ///< [stage][stream] component estimates
    std::vector<std::vector<Var<T>>> features;  ///< [stage][stream] high-way features
};

/// Replaces the learned prior module; receives the gradient-step output and the stream index.
template <class T>
using ProxHook = std::function<Var<T>(const Var<T>& u, std::size_t stream)>;

template <class T>
class DASUNet {
public:
    explicit DASUNet(NetworkConfig cfg, std::uint64_t seed = 0) : cfg_(cfg), spec_(variant_spec(cfg.variant)), store_(seed) {
        cfg_.validate();
        const int n = cfg_.channels;
        for (int j = 1; j <= cfg_.stages; ++j) {
            const std::string stage = "stage" + std::to_string(j);
            std::vector<StreamModules<T>> streams;
            int total = 0;
            for (const auto& s : spec_.streams) {
                const std::string base = stage + "." + s.name;
                streams.push_back({GradientDescentModule<T>(store_, base + ".gdm", s.channels, n),
                                   PriorModule<T>(store_, base + ".pmm", s.channels, s.prior, cfg_)});
                total += s.channels;
            }
            streams_.push_back(std::move(streams));
            sams_.emplace_back(store_, stage + ".sam", total, n);
        }
    }

    [[nodiscard]] const NetworkConfig& config() const { return cfg_; }
    [[nodiscard]] const VariantSpec& spec() const { return spec_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    StreamModules<T>& stream(int stage, std::size_t index) { return streams_.at(stage).at(index); }
    SpaceAggregation<T>& sam(int stage) { return sams_.at(stage); }

    void set_prox_hook(ProxHook<T> hook) { hook_ = std::move(hook); }
    void clear_prox_hook() { hook_.reset(); }

    /// Input in the stream domain (YCbCr or RGB, stacked to 3 channels).
    [[nodiscard]] Tensor<T> transform_input(const Tensor<T>& rgb) const {
        if (rgb.c() != 3) throw ShapeError("network input must have 3 channels, got " + rgb.shape().str());
        return spec_.ycbcr ? rgb_to_ycbcr_stacked(rgb) : rgb;
    }

    /// All stage outputs with their graph, for training.
    ForwardResult<T> forward_detailed(const Tensor<T>& rgb) const {
        const Tensor<T> input = transform_input(rgb);
        const Shape s = input.shape();
        std::vector<Var<T>> y, x, f;
        for (const auto& spec : spec_.streams) {
            y.push_back(ag::constant(slice_channels(input, spec.first_channel, spec.channels)));
            x.push_back(y.back());
            f.push_back(ag::constant(Tensor<T>(s.n, cfg_.channels, s.h, s.w)));
        }
        ForwardResult<T> res;
        for (int j = 0; j < cfg_.stages; ++j) {
            for (std::size_t i = 0; i < spec_.streams.size(); ++i) {
                const auto& mods = streams_[j][i];
                const Var<T> u = mods.gdm(y[i], x[i]);
                if (hook_) {
                    x[i] = (*hook_)(u, i);
                } else {
                    PriorOutput<T> out = mods.pmm(u, f[i]);
                    x[i] = out.x;
                    f[i] = out.features;
                }
            }
            res.outputs.push_back(sams_[j](x));
            res.estimates.push_back(x);
            res.features.push_back(f);
        }
        return res;
    }

    std::vector<Var<T>> forward(const Tensor<T>& rgb) const { return forward_detailed(rgb).outputs; }

    /// Inference: every stage output clamped to [0,1]; the last one is the result.
    std::vector<Tensor<T>> enhance(const Tensor<T>& rgb) const {
        ag::NoGradGuard guard;
        std::vector<Tensor<T>> out;
        for (const auto& v : forward(rgb)) out.push_back(clamp01(v.value()));
        return out;
    }

private:
    NetworkConfig cfg_;
    VariantSpec spec_;
    ParamStore<T> store_;
    std::vector<std::vector<StreamModules<T>>> streams_;
    std::vector<SpaceAggregation<T>> sams_;
    std::optional<ProxHook<T>> hook_;
};

/// Copies parameter values between models of the same configuration (e.g. float <-> double).
template <class To, class From>
void copy_parameters(DASUNet<To>& dst, const DASUNet<From>& src) {
    const auto& sp = src.params().params();
    auto& dp = dst.params().params();
    if (sp.size() != dp.size()) throw ConfigError("copy_parameters: parameter count mismatch");
    for (std::size_t i = 0; i < sp.size(); ++i) {
        if (sp[i].name != dp[i].name || !(sp[i].var.shape() == dp[i].var.shape())) {
            throw ConfigError("copy_parameters: mismatch at " + sp[i].name);
        }
        dp[i].var.mutable_value() = sp[i].var.value().template cast<To>();
    }
}

} // namespace dasunet::nn
