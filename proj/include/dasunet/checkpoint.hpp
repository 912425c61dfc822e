#pragma once

// Binary checkpoint: magic, version, JSON header, named tensors, optional Adam
// moments, FNV-1a checksum of everything before it. Values are stored as
// little-endian doubles regardless of the model's scalar type.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dasunet/network.hpp"

namespace dasunet {

struct TrainingState {
    int epoch = 0;
    long long step = 0;
    long long adam_steps = 0;
    std::vector<Tensor<double>> adam_m;
    std::vector<Tensor<double>> adam_v;
};

struct Checkpoint {
    nn::NetworkConfig config;
    TrainingState state;
    std::vector<std::pair<std::string, Tensor<double>>> tensors;
};

namespace detail {

inline constexpr char checkpoint_magic[8] = {'D', 'A', 'S', 'U', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t checkpoint_version = 1;

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

class Writer {
public:
    template <class V>
    void pod(V v) {
        buf_.append(reinterpret_cast<const char*>(&v), sizeof(V));
    }
    void bytes(const std::string& s) {
        pod<std::uint64_t>(s.size());
        buf_ += s;
    }
    void tensor(const Tensor<double>& t) {
        const Shape s = t.shape();
        for (int d : {s.n, s.c, s.h, s.w}) pod<std::int32_t>(d);
        buf_.append(reinterpret_cast<const char*>(t.vec().data()), t.size() * sizeof(double));
    }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}
    template <class V>
    V pod() {
        need(sizeof(V));
        V v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(V));
        pos_ += sizeof(V);
        return v;
    }
    std::string bytes() {
        const auto n = pod<std::uint64_t>();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Tensor<double> tensor() {
        Shape s{pod<std::int32_t>(), pod<std::int32_t>(), pod<std::int32_t>(), pod<std::int32_t>()};
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw CheckpointError("checkpoint holds a negative tensor shape");
        need(s.numel() * sizeof(double));
        Tensor<double> t(s);
        std::memcpy(t.vec().data(), buf_.data() + pos_, t.size() * sizeof(double));
        pos_ += t.size() * sizeof(double);
        return t;
    }
    [[nodiscard]] bool done() const { return pos_ == end_; }

private:
    void need(std::size_t n) const {
        if (n > end_ - pos_) throw CheckpointError("checkpoint is truncated");
    }
    const std::string& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

} // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& path, const nn::DASUNet<T>& model, const TrainingState& state = {}) {
    nlohmann::json header;
    header["network"] = model.config();
    header["epoch"] = state.epoch;
    header["step"] = state.step;
    header["adam_steps"] = state.adam_steps;
    header["has_moments"] = !state.adam_m.empty();

    detail::Writer w;
    w.buffer().append(detail::checkpoint_magic, sizeof(detail::checkpoint_magic));
    w.pod(detail::checkpoint_version);
    w.bytes(header.dump());
    const auto& params = model.params().params();
    w.pod<std::uint64_t>(params.size());
    for (const auto& p : params) {
        w.bytes(p.name);
        w.tensor(p.var.value().template cast<double>());
    }
    if (!state.adam_m.empty()) {
        if (state.adam_m.size() != params.size() || state.adam_v.size() != params.size()) {
            throw CheckpointError("optimizer moments do not match the parameter count");
        }
        for (const auto& m : state.adam_m) w.tensor(m);
        for (const auto& v : state.adam_v) w.tensor(v);
    }
    w.pod(detail::fnv1a(w.buffer()));

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
        out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
        if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t magic = sizeof(detail::checkpoint_magic);
    if (buf.size() < magic + sizeof(std::uint64_t) || std::memcmp(buf.data(), detail::checkpoint_magic, magic) != 0) {
        throw CheckpointError("not a checkpoint file: " + path.string());
    }
    const std::size_t body = buf.size() - sizeof(std::uint64_t);
    std::uint64_t stored = 0;
    std::memcpy(&stored, buf.data() + body, sizeof(stored));
    if (stored != detail::fnv1a(buf.substr(0, body))) throw CheckpointError("checksum mismatch in " + path.string());

    Checkpoint ck;
    try {
        detail::Reader r(buf, body);
        for (std::size_t i = 0; i < magic; ++i) r.pod<char>();
        const auto version = r.pod<std::uint32_t>();
        if (version != detail::checkpoint_version) {
            throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
        }
        const auto header = nlohmann::json::parse(r.bytes());
        ck.config = header.at("network").get<nn::NetworkConfig>();
        ck.state.epoch = header.at("epoch").get<int>();
        ck.state.step = header.at("step").get<long long>();
        ck.state.adam_steps = header.at("adam_steps").get<long long>();
        const auto count = r.pod<std::uint64_t>();
        for (std::uint64_t i = 0; i < count; ++i) {
            std::string name = r.bytes();
            ck.tensors.emplace_back(std::move(name), r.tensor());
        }
        if (header.at("has_moments").get<bool>()) {
            for (std::uint64_t i = 0; i < count; ++i) ck.state.adam_m.push_back(r.tensor());
            for (std::uint64_t i = 0; i < count; ++i) ck.state.adam_v.push_back(r.tensor());
        }
        if (!r.done()) throw CheckpointError("trailing bytes in checkpoint");
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint network config: ") + e.what());
    }
    return ck;
}

/// Copies checkpoint tensors into `model`; names and shapes must match one to one.
template <class T>
void load_parameters(nn::DASUNet<T>& model, const Checkpoint& ck) {
    auto& params = model.params().params();
    const std::size_t n = std::min(params.size(), ck.tensors.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& [name, value] = ck.tensors[i];
        if (name != params[i].name) {
            throw CheckpointError("tensor mismatch at " + params[i].name + ": checkpoint has " + name);
        }
        if (!(value.shape() == params[i].var.shape())) {
            throw CheckpointError("tensor mismatch at " + name + ": shape " + value.shape().str() + " vs model " +
                                  params[i].var.shape().str());
        }
    }
    if (params.size() > n) throw CheckpointError("tensor mismatch at " + params[n].name + ": missing from checkpoint");
    if (ck.tensors.size() > n) throw CheckpointError("tensor mismatch at " + ck.tensors[n].first + ": not in model");
    for (std::size_t i = 0; i < n; ++i) params[i].var.mutable_value() = ck.tensors[i].second.template cast<T>();
}

template <class T>
nn::DASUNet<T> load_model(const std::filesystem::path& path) {
    const Checkpoint ck = read_checkpoint(path);
    nn::DASUNet<T> model(ck.config);
    load_parameters(model, ck);
    return model;
}

} // namespace dasunet
