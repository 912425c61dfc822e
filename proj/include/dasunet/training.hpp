#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dasunet/checkpoint.hpp"
#include "dasunet/dataset.hpp"
#include "dasunet/loss.hpp"
#include "dasunet/metrics.hpp"
#include "dasunet/optim.hpp"

namespace dasunet {

struct TrainConfig {
    double lr_init = 2e-4;
    double lr_final = 1e-6;
    int epochs = 50;
    int warmup_epochs = 3;
    int crop = 64;
    int batch_size = 4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    std::uint64_t seed = 0;
    double loss_eps = default_charbonnier_eps;
    bool augment = true;
    int steps_per_epoch = 0;  ///< 0: one pass over the dataset, ceil(N / batch_size)
    int val_every = 1;        ///< validate every this many epochs (and always after the last)
    int checkpoint_every = 0; ///< 0: only the final checkpoint
    std::vector<double> stage_weights; ///< empty: 0.1 for early stages, 1.0 for the last

    void validate() const {
        if (!(lr_init > 0.0)) throw ConfigError("train.lr_init must be positive");
        if (!(lr_final >= 0.0) || !(lr_final < lr_init)) throw ConfigError("train.lr_final must be in [0, lr_init)");
        if (epochs < 0) throw ConfigError("train.epochs must be non-negative");
        if (warmup_epochs < 0) throw ConfigError("train.warmup_epochs must be non-negative");
        if (epochs > 0 && warmup_epochs >= epochs) throw ConfigError("train.warmup_epochs must be below train.epochs");
        if (crop <= 0 || crop % 2 != 0) throw ConfigError("train.crop must be positive and even");
        if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw ConfigError("train.beta1 and train.beta2 must be in [0, 1)");
        }
        if (!(loss_eps > 0.0)) throw ConfigError("train.loss_eps must be positive");
        if (steps_per_epoch < 0) throw ConfigError("train.steps_per_epoch must be non-negative");
        if (val_every <= 0) throw ConfigError("train.val_every must be positive");
        if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be non-negative");
    }

    [[nodiscard]] LossWeights weights(int stages) const {
        if (stage_weights.empty()) return LossWeights::defaults(stages);
        if (static_cast<int>(stage_weights.size()) != stages) {
            throw ConfigError("train.stage_weights has " + std::to_string(stage_weights.size()) + " entries for " +
                              std::to_string(stages) + " stages");
        }
        return LossWeights{stage_weights};
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"lr_init", c.lr_init},
         {"lr_final", c.lr_final},
         {"epochs", c.epochs},
         {"warmup_epochs", c.warmup_epochs},
         {"crop", c.crop},
         {"batch_size", c.batch_size},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"seed", c.seed},
         {"loss_eps", c.loss_eps},
         {"augment", c.augment},
         {"steps_per_epoch", c.steps_per_epoch},
         {"val_every", c.val_every},
         {"checkpoint_every", c.checkpoint_every},
         {"stage_weights", c.stage_weights}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (!j.is_object()) throw ConfigError("train: expected an object");
    nlohmann::json known;
    to_json(known, TrainConfig{});
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw ConfigError("train." + key + ": unknown field");
    }
    auto field = [&](const char* key, auto& dst) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(dst);
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("train.") + key + ": wrong type");
        }
    };
    auto number = [&](const char* key, double& dst) {
        if (j.contains(key) && !j.at(key).is_number()) throw ConfigError(std::string("train.") + key + ": expected a number");
        field(key, dst);
    };
    auto integer = [&](const char* key, auto& dst) {
        if (j.contains(key) && !j.at(key).is_number_integer()) {
            throw ConfigError(std::string("train.") + key + ": expected an integer");
        }
        field(key, dst);
    };
    number("lr_init", c.lr_init);
    number("lr_final", c.lr_final);
    integer("epochs", c.epochs);
    integer("warmup_epochs", c.warmup_epochs);
    integer("crop", c.crop);
    integer("batch_size", c.batch_size);
    number("beta1", c.beta1);
    number("beta2", c.beta2);
    if (j.contains("seed") && !j.at("seed").is_number_unsigned()) throw ConfigError("train.seed: expected a non-negative integer");
    field("seed", c.seed);
    number("loss_eps", c.loss_eps);
    if (j.contains("augment") && !j.at("augment").is_boolean()) throw ConfigError("train.augment: expected a boolean");
    field("augment", c.augment);
    integer("steps_per_epoch", c.steps_per_epoch);
    integer("val_every", c.val_every);
    integer("checkpoint_every", c.checkpoint_every);
    field("stage_weights", c.stage_weights);
}

/// Linear warmup from 0 to lr_init, then cosine decay to lr_final at the end
/// of the last epoch. `step_frac` in [0, 1] is the position inside `epoch`.
inline double lr_at(int epoch, double step_frac, const TrainConfig& cfg) {
    const double t = static_cast<double>(epoch) + step_frac;
    const double warm = cfg.warmup_epochs;
    if (t < warm) return cfg.lr_init * t / warm;
    const double span = static_cast<double>(cfg.epochs) - warm;
    const double p = span > 0.0 ? std::clamp((t - warm) / span, 0.0, 1.0) : 1.0;
    return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * p));
}

struct EpochRecord {
    int epoch = 0; ///< 1-based
    long long step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double val_psnr = std::numeric_limits<double>::quiet_NaN();
    double val_ssim = std::numeric_limits<double>::quiet_NaN();
};

inline std::string format_metric(double v) {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline const char* metrics_csv_header = "epoch,step,lr,loss,val_psnr,val_ssim";

inline std::string metrics_csv_row(const EpochRecord& r) {
    return std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + format_metric(r.lr) + "," +
           format_metric(r.loss) + "," + format_metric(r.val_psnr) + "," + format_metric(r.val_ssim);
}

/// Mean PSNR/SSIM of the clamped final-stage output over every full-size pair.
template <class T>
metrics::MetricReport evaluate(const nn::DASUNet<T>& model, data::PairedDataset& ds) {
    metrics::MetricReport report;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto pair = ds.full<T>(i);
        const Tensor<T> out = model.enhance(pair.low).back();
        report.add(metrics::psnr(out, pair.normal), metrics::ssim(out, pair.normal));
    }
    return report;
}

struct TrainOptions {
    std::optional<std::filesystem::path> out_dir;   ///< checkpoints and metrics.csv go here
    data::PairedDataset* validation = nullptr;      ///< defaults to the training set
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    std::vector<EpochRecord> log;
    TrainingState state;
};

namespace detail {

template <class T>
std::string parameter_norm_snapshot(const nn::DASUNet<T>& model, std::size_t keep = 6) {
    std::vector<std::pair<double, std::string>> norms;
    for (const auto& p : model.params().params()) {
        norms.emplace_back(std::sqrt(squared_norm(p.var.value().template cast<double>())), p.name);
    }
    std::stable_sort(norms.begin(), norms.end(), [](const auto& a, const auto& b) {
        if (std::isfinite(a.first) != std::isfinite(b.first)) return !std::isfinite(a.first);
        return a.first > b.first;
    });
    std::ostringstream os;
    os.precision(6);
    for (std::size_t i = 0; i < std::min(keep, norms.size()); ++i) {
        os << (i ? ", " : "") << norms[i].second << "=" << norms[i].first;
    }
    return os.str();
}

template <class T>
TrainingState capture_state(optim::Adam<T>& adam, int epoch, long long step) {
    TrainingState st;
    st.epoch = epoch;
    st.step = step;
    st.adam_steps = adam.steps();
    for (const auto& m : adam.first_moments()) st.adam_m.push_back(m.template cast<double>());
    for (const auto& v : adam.second_moments()) st.adam_v.push_back(v.template cast<double>());
    return st;
}

} // namespace detail

/// Sample batch, forward every stage, multi-stage Charbonnier, backprop, Adam
/// step at lr_at. Single-threaded and fully determined by cfg.seed.
template <class T>
TrainResult train(nn::DASUNet<T>& model, data::PairedDataset& ds, const TrainConfig& cfg, const TrainOptions& opt = {}) {
    cfg.validate();
    const LossWeights weights = cfg.weights(model.config().stages);
    if (ds.size() == 0) throw DatasetError("training dataset is empty");
    data::PairedDataset& val = opt.validation ? *opt.validation : ds;

    std::ofstream csv;
    if (opt.out_dir) {
        std::filesystem::create_directories(*opt.out_dir);
        csv.open(*opt.out_dir / "metrics.csv", std::ios::trunc);
        if (!csv) throw Error("cannot write " + (*opt.out_dir / "metrics.csv").string());
        csv << metrics_csv_header << "\n";
    }

    optim::Adam<T> adam(model.params(), cfg.beta1, cfg.beta2);
    std::mt19937_64 rng(cfg.seed);
    const int n = static_cast<int>(ds.size());
    const int steps = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : (n + cfg.batch_size - 1) / cfg.batch_size;
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    long long global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        double lr = 0.0;
        for (int s = 0; s < steps; ++s) {
            std::vector<Tensor<T>> lows, normals;
            std::vector<std::string> names;
            for (int b = 0; b < cfg.batch_size; ++b) {
                const std::size_t idx = order[static_cast<std::size_t>(s * cfg.batch_size + b) % order.size()];
                auto pair = ds.load_pair<T>(idx, cfg.crop, cfg.augment, rng);
                lows.push_back(std::move(pair.low));
                normals.push_back(std::move(pair.normal));
                names.push_back(std::move(pair.name));
            }
            const Tensor<T> input = stack_batch(lows);
            const ag::Var<T> target = ag::constant(stack_batch(normals));

            model.params().zero_grad();
            const ag::Var<T> loss = multistage_loss(model.forward(input), target, weights, cfg.loss_eps);
            const double value = static_cast<double>(loss.value()[0]);
            if (!std::isfinite(value)) {
                std::string batch;
                for (const auto& nm : names) batch += (batch.empty() ? "" : ", ") + nm;
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                                    std::to_string(global_step + 1) + " (batch: " + batch +
                                    "); largest parameter norms: " + detail::parameter_norm_snapshot(model));
            }
            ag::backward(loss);
            // the last step of the run lands exactly on lr_final
            lr = lr_at(epoch, static_cast<double>(s + 1) / steps, cfg);
            adam.step(lr);
            loss_sum += value;
            ++global_step;
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.step = global_step;
        rec.lr = lr;
        rec.loss = loss_sum / steps;
        if (rec.epoch % cfg.val_every == 0 || rec.epoch == cfg.epochs) {
            const auto report = evaluate(model, val);
            rec.val_psnr = report.mean_psnr();
            rec.val_ssim = report.mean_ssim();
        }
        result.log.push_back(rec);
        if (csv.is_open()) csv << metrics_csv_row(rec) << std::endl;
        if (opt.on_epoch) opt.on_epoch(rec);
        if (opt.out_dir && cfg.checkpoint_every > 0 && rec.epoch % cfg.checkpoint_every == 0 && rec.epoch != cfg.epochs) {
            save_checkpoint(*opt.out_dir / ("checkpoint_epoch" + std::to_string(rec.epoch) + ".ckpt"), model,
                            detail::capture_state(adam, rec.epoch, global_step));
        }
    }
    result.state = detail::capture_state(adam, cfg.epochs, global_step);
    if (opt.out_dir) save_checkpoint(*opt.out_dir / "checkpoint.ckpt", model, result.state);
    return result;
}

} // namespace dasunet
