#pragma once

// Command implementations behind the dasunet executable. Each returns a
// process exit code and reports through the given streams.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dasunet/config.hpp"
#include "dasunet/toy_data.hpp"

#ifndef DASUNET_VERSION
#define DASUNET_VERSION "0.1.0"
#endif

namespace dasunet::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
    exit_ok = 0,
    exit_failure = 1,
    exit_config = 2,
    exit_data = 3,
    exit_checkpoint = 4,
    exit_divergence = 5,
};

struct Options {
    std::optional<fs::path> config;
    std::optional<fs::path> data_root;
    std::optional<fs::path> out;
    std::optional<fs::path> checkpoint;
    std::optional<fs::path> input;
    std::optional<fs::path> pred;
    std::optional<fs::path> ref;
    std::optional<fs::path> operator_spec;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    bool deterministic = false;
    bool save_stages = false;
    bool parallel = false;
    int toy_count = 8;
    int toy_size = 64;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

inline constexpr const char* manifest_schema = "dasunet.run_manifest.v1";

/// One per run directory, written as manifest.json.
struct RunManifest {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    std::string version = DASUNET_VERSION;
    std::string started_at = utc_timestamp();
    std::string finished_at;
    std::map<std::string, std::string> inputs;
    std::vector<std::string> outputs;
    std::string status = "ok";

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j;
        j["schema"] = manifest_schema;
        j["command"] = command;
        j["version"] = version;
        j["config"] = config;
        j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
        j["deterministic"] = deterministic;
        j["started_at"] = started_at;
        j["finished_at"] = finished_at;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["status"] = status;
        return j;
    }

    void write(const fs::path& dir) {
        finished_at = utc_timestamp();
        fs::create_directories(dir);
        std::ofstream out(dir / "manifest.json", std::ios::trunc);
        out << to_json().dump(2) << "\n";
    }
};

/// Problems with a manifest document; empty when it conforms to the schema.
inline std::vector<std::string> validate_manifest(const nlohmann::json& j) {
    std::vector<std::string> problems;
    if (!j.is_object()) return {"manifest is not an object"};
    auto need = [&](const char* key, bool ok, const char* what) {
        if (!j.contains(key)) problems.push_back(std::string("missing ") + key);
        else if (!ok) problems.push_back(std::string(key) + " must be " + what);
    };
    need("schema", j.contains("schema") && j["schema"] == manifest_schema, manifest_schema);
    need("command", j.contains("command") && j["command"].is_string() && !j["command"].get<std::string>().empty(),
         "a non-empty string");
    need("version", j.contains("version") && j["version"].is_string(), "a string");
    need("config", j.contains("config") && j["config"].is_object(), "an object");
    need("seed", j.contains("seed") && (j["seed"].is_null() || j["seed"].is_number_unsigned()),
         "null or a non-negative integer");
    need("deterministic", j.contains("deterministic") && j["deterministic"].is_boolean(), "a boolean");
    need("started_at", j.contains("started_at") && j["started_at"].is_string(), "a string");
    need("finished_at", j.contains("finished_at") && j["finished_at"].is_string(), "a string");
    need("inputs", j.contains("inputs") && j["inputs"].is_object(), "an object");
    bool outputs_ok = j.contains("outputs") && j["outputs"].is_array();
    if (outputs_ok) {
        for (const auto& o : j["outputs"]) outputs_ok = outputs_ok && o.is_string();
    }
    need("outputs", outputs_ok, "an array of strings");
    need("status", j.contains("status") && (j["status"] == "ok" || j["status"] == "failed"), "\"ok\" or \"failed\"");
    for (const auto& [key, _] : j.items()) {
        static const std::vector<std::string> known{"schema", "command", "version", "config", "seed", "deterministic",
                                                    "started_at", "finished_at", "inputs", "outputs", "status"};
        if (std::find(known.begin(), known.end(), key) == known.end()) problems.push_back("unknown field " + key);
    }
    return problems;
}

namespace detail {

inline const fs::path& require_path(const std::optional<fs::path>& p, const char* flag) {
    if (!p) throw ConfigError(std::string("missing required option ") + flag);
    return *p;
}

inline RunConfig resolve_run_config(const Options& opt) {
    RunConfig cfg = opt.config ? load_run_config(*opt.config) : parse_run_config(nlohmann::json::object());
    if (opt.seed) cfg.train.seed = *opt.seed;
    if (opt.epochs) cfg.train.epochs = *opt.epochs;
    cfg.validate();
    return cfg;
}

inline std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && io::is_image_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

inline Tensor<double> read_input(const fs::path& p) {
    try {
        return io::read_image(p);
    } catch (const io::ImageError& e) {
        throw DatasetError(e.what());
    }
}

/// Maps library exceptions onto the exit-code contract.
template <class F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const ParameterError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const DatasetError& e) {
        err << "data error: " << e.what() << "\n";
        return exit_data;
    } catch (const io::ImageError& e) {
        err << "data error: " << e.what() << "\n";
        return exit_data;
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << "\n";
        return exit_checkpoint;
    } catch (const SolverError& e) {
        err << "solver diverged: " << e.what() << "\n";
        return exit_divergence;
    } catch (const TrainingError& e) {
        err << "training diverged: " << e.what() << "\n";
        return exit_divergence;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_failure;
    }
}

} // namespace detail

using Model = nn::DASUNet<float>;

inline int cmd_train(const Options& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        const RunConfig cfg = detail::resolve_run_config(opt);
        const fs::path& out_dir = detail::require_path(opt.out, "--out");
        const fs::path& root = detail::require_path(opt.data_root, "--data-root");
        data::PairedDataset ds(root);

        RunManifest manifest;
        manifest.command = "train";
        manifest.config = run_config_json(cfg);
        manifest.seed = cfg.train.seed;
        manifest.deterministic = opt.deterministic;
        manifest.inputs["data_root"] = root.string();

        Model model(cfg.network, cfg.train.seed);
        out << "training " << nn::to_string(cfg.network.variant) << " k=" << cfg.network.stages
            << " n=" << cfg.network.channels << " (" << model.params().scalar_count() << " parameters) on " << ds.size()
            << " pairs\n";
        TrainOptions topt;
        topt.out_dir = out_dir;
        topt.on_epoch = [&](const EpochRecord& r) {
            out << "epoch " << r.epoch << " step " << r.step << " lr " << format_metric(r.lr) << " loss "
                << format_metric(r.loss);
            if (!std::isnan(r.val_psnr)) out << " psnr " << format_metric(r.val_psnr) << " ssim " << format_metric(r.val_ssim);
            out << std::endl;
        };
        const TrainResult res = train(model, ds, cfg.train, topt);
        for (int e = cfg.train.checkpoint_every; cfg.train.checkpoint_every > 0 && e < cfg.train.epochs;
             e += cfg.train.checkpoint_every) {
            manifest.outputs.push_back("checkpoint_epoch" + std::to_string(e) + ".ckpt");
        }
        manifest.outputs.push_back("checkpoint.ckpt");
        manifest.outputs.push_back("metrics.csv");
        manifest.write(out_dir);
        out << "wrote " << (out_dir / "checkpoint.ckpt").string() << " after " << res.state.step << " steps\n";
        return static_cast<int>(exit_ok);
    });
}

inline int cmd_infer(const Options& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        const fs::path& ckpt = detail::require_path(opt.checkpoint, "--checkpoint");
        const fs::path& input = detail::require_path(opt.input, "--input");
        const fs::path& out_dir = detail::require_path(opt.out, "--out");
        const Checkpoint ck = read_checkpoint(ckpt);
        // an explicit config must agree with the stored weights
        const nn::NetworkConfig net = opt.config ? detail::resolve_run_config(opt).network : ck.config;
        Model model(net);
        load_parameters(model, ck);

        std::vector<fs::path> inputs;
        if (fs::is_directory(input)) inputs = detail::list_images(input);
        else if (fs::exists(input)) inputs.push_back(input);
        else throw DatasetError("input does not exist: " + input.string());
        if (inputs.empty()) throw DatasetError("no images in " + input.string());

        RunManifest manifest;
        manifest.command = "infer";
        manifest.config = {{"network", net}, {"save_stages", opt.save_stages}};
        manifest.deterministic = opt.deterministic;
        manifest.inputs = {{"checkpoint", ckpt.string()}, {"input", input.string()}};
        fs::create_directories(out_dir);
        if (opt.save_stages) fs::create_directories(out_dir / "stages");
        for (const auto& path : inputs) {
            const Tensor<float> img = detail::read_input(path).cast<float>();
            const auto stages = model.enhance(img);
            const std::string stem = path.stem().string();
            io::write_png(out_dir / (stem + ".png"), stages.back());
            manifest.outputs.push_back(stem + ".png");
            if (opt.save_stages) {
                for (std::size_t j = 0; j < stages.size(); ++j) {
                    const std::string name = "stages/" + stem + "_stage" + std::to_string(j + 1) + ".png";
                    io::write_png(out_dir / name, stages[j]);
                    manifest.outputs.push_back(name);
                }
            }
            out << path.string() << " -> " << (out_dir / (stem + ".png")).string() << "\n";
        }
        manifest.write(out_dir);
        return static_cast<int>(exit_ok);
    });
}

inline int cmd_eval(const Options& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        const fs::path& pred = detail::require_path(opt.pred, "--pred");
        const fs::path& ref = detail::require_path(opt.ref, "--ref");
        const fs::path& out_dir = detail::require_path(opt.out, "--out");
        for (const auto& d : {pred, ref}) {
            if (!fs::is_directory(d)) throw DatasetError("not a directory: " + d.string());
        }
        std::map<std::string, fs::path> refs;
        for (const auto& p : detail::list_images(ref)) refs[p.stem().string()] = p;
        const auto preds = detail::list_images(pred);
        if (preds.empty() && refs.empty()) throw DatasetError("no images in " + pred.string() + " or " + ref.string());
        std::map<std::string, fs::path> paired;
        for (const auto& p : preds) {
            auto it = refs.find(p.stem().string());
            if (it == refs.end()) throw DatasetError("unpaired file " + p.string());
            paired[p.stem().string()] = p;
        }
        for (const auto& [stem, p] : refs) {
            if (!paired.count(stem)) throw DatasetError("unpaired file " + p.string());
        }

        metrics::MetricReport report;
        std::ostringstream csv;
        csv << "image,psnr,ssim\n";
        out << std::left << std::setw(24) << "image" << std::setw(14) << "psnr" << "ssim\n";
        for (const auto& [stem, p] : paired) {
            const Tensor<double> a = detail::read_input(p);
            const Tensor<double> b = detail::read_input(refs.at(stem));
            if (!(a.shape() == b.shape())) {
                throw DatasetError("size mismatch for " + stem + ": " + a.shape().str() + " vs " + b.shape().str());
            }
            const double ps = metrics::psnr(a, b);
            const double ss = metrics::ssim(a, b);
            report.add(ps, ss);
            csv << stem << "," << format_metric(ps) << "," << format_metric(ss) << "\n";
            out << std::setw(24) << stem << std::setw(14) << format_metric(ps) << format_metric(ss) << "\n";
        }
        csv << "mean," << format_metric(report.mean_psnr()) << "," << format_metric(report.mean_ssim()) << "\n";
        out << std::setw(24) << "mean" << std::setw(14) << format_metric(report.mean_psnr())
            << format_metric(report.mean_ssim()) << "\n";
        fs::create_directories(out_dir);
        std::ofstream(out_dir / "eval.csv", std::ios::trunc) << csv.str();

        RunManifest manifest;
        manifest.command = "eval";
        manifest.deterministic = opt.deterministic;
        manifest.inputs = {{"pred", pred.string()}, {"ref", ref.string()}};
        manifest.outputs = {"eval.csv"};
        manifest.write(out_dir);
        return static_cast<int>(exit_ok);
    });
}

inline int cmd_oracle(const Options& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        const fs::path& input = detail::require_path(opt.input, "--input");
        const fs::path& out_dir = detail::require_path(opt.out, "--out");
        const oracle::SolverConfig solver = parse_solver_config(
            opt.config ? dasunet::detail::read_json_file(*opt.config) : nlohmann::json::object());
        const nlohmann::json op_json = opt.operator_spec ? dasunet::detail::read_json_file(*opt.operator_spec)
                                                         : nlohmann::json{{"type", "identity"}};
        const oracle::OperatorPair ops = parse_operator_pair(op_json);
        const Tensor<double> rgb = detail::read_input(input);

        // chroma is solved around zero so that a gain scales colour saturation, not the offset
        SpaceDecomposition<double> dec = rgb_to_ycbcr(rgb);
        for (auto& v : dec.chrom.vec()) v -= bt601::chroma_offset;
        oracle::SolveResult res;
        try {
            res = oracle::solve_ddm(dec, ops, solver);
        } catch (const ShapeError& e) {
            throw ConfigError(std::string("operator does not fit the image: ") + e.what());
        }
        for (auto& v : res.x.chrom.vec()) v += bt601::chroma_offset;

        fs::create_directories(out_dir);
        io::write_png(out_dir / "enhanced.png", ycbcr_to_rgb(res.x));
        {
            std::ofstream trace(out_dir / "energy_trace.txt", std::ios::trunc);
            char buf[40];
            for (double e : res.trace) {
                std::snprintf(buf, sizeof(buf), "%.17g", e);
                trace << buf << "\n";
            }
        }
        RunManifest manifest;
        manifest.command = "oracle";
        manifest.config = {{"solver", solver_config_json(solver)}, {"operator", op_json}};
        manifest.deterministic = opt.deterministic;
        manifest.inputs = {{"input", input.string()}};
        manifest.outputs = {"enhanced.png", "energy_trace.txt"};
        manifest.write(out_dir);
        out << "iterations " << res.iterations << (res.converged ? " (converged)" : " (iteration limit)")
            << ", final energy " << format_metric(res.trace.empty() ? 0.0 : res.trace.back()) << "\n";
        return static_cast<int>(exit_ok);
    });
}

struct AblationRow {
    std::string variant;
    int stages = 0;
    std::size_t params = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    double train_seconds = 0.0;
    double infer_ms = 0.0;
    std::string error;
};

inline AblationRow run_ablation_variant(RunConfig cfg, nn::Variant variant, int stages, const fs::path& root,
                                        const fs::path& run_dir, bool deterministic) {
    AblationRow row;
    row.variant = nn::to_string(variant);
    row.stages = stages;
    cfg.network.variant = variant;
    cfg.network.stages = stages;
    if (!cfg.train.stage_weights.empty() && static_cast<int>(cfg.train.stage_weights.size()) != stages) {
        cfg.train.stage_weights.clear();
    }
    cfg.ablation = {};
    data::PairedDataset ds(root);
    Model model(cfg.network, cfg.train.seed);
    row.params = model.params().scalar_count();

    RunManifest manifest;
    manifest.command = "ablate:" + row.variant + ":k" + std::to_string(stages);
    manifest.config = run_config_json(cfg);
    manifest.seed = cfg.train.seed;
    manifest.deterministic = deterministic;
    manifest.inputs["data_root"] = root.string();

    TrainOptions topt;
    topt.out_dir = run_dir;
    const auto t0 = std::chrono::steady_clock::now();
    train(model, ds, cfg.train, topt);
    const auto t1 = std::chrono::steady_clock::now();
    const auto report = evaluate(model, ds);
    const auto t2 = std::chrono::steady_clock::now();
    row.psnr = report.mean_psnr();
    row.ssim = report.mean_ssim();
    row.train_seconds = std::chrono::duration<double>(t1 - t0).count();
    row.infer_ms = 1e3 * std::chrono::duration<double>(t2 - t1).count() / static_cast<double>(ds.size());
    manifest.outputs = {"checkpoint.ckpt", "metrics.csv"};
    manifest.write(run_dir);
    return row;
}

/// Trains every (variant, stage count) combination under the same seed and
/// budget. ablation.csv holds the deterministic columns, ablation_runtime.csv
/// the wall-clock ones.
inline int cmd_ablate(const Options& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<AblationRow> rows;
    const int code = detail::guarded(err, [&] {
        const RunConfig cfg = detail::resolve_run_config(opt);
        const fs::path& out_dir = detail::require_path(opt.out, "--out");
        const fs::path& root = detail::require_path(opt.data_root, "--data-root");
        data::PairedDataset probe(root);

        std::vector<nn::Variant> variants = cfg.ablation.variants;
        if (variants.empty()) variants.push_back(cfg.network.variant);
        std::vector<int> stage_counts = cfg.ablation.stages;
        if (stage_counts.empty()) stage_counts.push_back(cfg.network.stages);

        std::vector<std::pair<nn::Variant, int>> jobs;
        for (auto v : variants)
            for (int k : stage_counts) jobs.emplace_back(v, k);

        auto run = [&](std::pair<nn::Variant, int> job) {
            const std::string name = nn::to_string(job.first) + "_k" + std::to_string(job.second);
            try {
                return run_ablation_variant(cfg, job.first, job.second, root, out_dir / name, opt.deterministic);
            } catch (const std::exception& e) {
                AblationRow failed;
                failed.variant = nn::to_string(job.first);
                failed.stages = job.second;
                failed.error = e.what();
                return failed;
            }
        };
        if (opt.parallel) {
            std::vector<std::future<AblationRow>> futures;
            for (const auto& job : jobs) futures.push_back(std::async(std::launch::async, run, job));
            for (auto& f : futures) rows.push_back(f.get());
        } else {
            for (const auto& job : jobs) rows.push_back(run(job));
        }

        std::ostringstream table, runtime;
        table << "variant,stages,params,psnr,ssim\n";
        runtime << "variant,stages,train_seconds,infer_ms\n";
        out << std::left << std::setw(16) << "variant" << std::setw(8) << "stages" << std::setw(10) << "params"
            << std::setw(14) << "psnr" << std::setw(14) << "ssim" << std::setw(12) << "train_s" << "infer_ms\n";
        int failures = 0;
        RunManifest manifest;
        manifest.command = "ablate";
        manifest.config = run_config_json(cfg);
        manifest.seed = cfg.train.seed;
        manifest.deterministic = opt.deterministic;
        manifest.inputs["data_root"] = root.string();
        for (const auto& r : rows) {
            if (!r.error.empty()) {
                ++failures;
                err << "variant " << r.variant << " k=" << r.stages << " failed: " << r.error << "\n";
                continue;
            }
            table << r.variant << "," << r.stages << "," << r.params << "," << format_metric(r.psnr) << ","
                  << format_metric(r.ssim) << "\n";
            runtime << r.variant << "," << r.stages << "," << format_metric(r.train_seconds) << ","
                    << format_metric(r.infer_ms) << "\n";
            char ts[32], im[32];
            std::snprintf(ts, sizeof(ts), "%.1f", r.train_seconds);
            std::snprintf(im, sizeof(im), "%.1f", r.infer_ms);
            out << std::setw(16) << r.variant << std::setw(8) << r.stages << std::setw(10) << r.params << std::setw(14)
                << format_metric(r.psnr) << std::setw(14) << format_metric(r.ssim) << std::setw(12) << ts << im << "\n";
            manifest.outputs.push_back(r.variant + "_k" + std::to_string(r.stages));
        }
        fs::create_directories(out_dir);
        std::ofstream(out_dir / "ablation.csv", std::ios::trunc) << table.str();
        std::ofstream(out_dir / "ablation_runtime.csv", std::ios::trunc) << runtime.str();
        manifest.outputs.push_back("ablation.csv");
        manifest.outputs.push_back("ablation_runtime.csv");
        if (failures) manifest.status = "failed";
        manifest.write(out_dir);
        return failures ? static_cast<int>(exit_failure) : static_cast<int>(exit_ok);
    });
    return code;
}

/// Writes a synthetic paired dataset under --out.
inline int cmd_toyset(const Options& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return detail::guarded(err, [&] {
        const fs::path& root = detail::require_path(opt.out, "--out");
        data::ToyOptions toy;
        toy.count = opt.toy_count;
        toy.size = opt.toy_size;
        toy.seed = opt.seed.value_or(0);
        data::write_toy_dataset(root, toy);
        RunManifest manifest;
        manifest.command = "toyset";
        manifest.config = {{"count", toy.count}, {"size", toy.size}, {"gain", toy.gain}, {"gamma", toy.gamma}};
        manifest.seed = toy.seed;
        manifest.deterministic = opt.deterministic;
        manifest.outputs = {"low", "normal"};
        manifest.write(root);
        out << "wrote " << toy.count << " pairs to " << root.string() << "\n";
        return static_cast<int>(exit_ok);
    });
}

} // namespace dasunet::cli
