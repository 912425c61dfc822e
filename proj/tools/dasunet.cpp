#include <CLI11.hpp>

#include "dasunet/cli.hpp"

namespace {

using dasunet::cli::Options;

void add_common(CLI::App* app, Options& opt) {
    app->add_option("--out", opt.out, "Output directory");
    app->add_option("--seed", opt.seed, "Random seed");
    app->add_flag("--deterministic", opt.deterministic, "Deterministic mode (recorded in the manifest)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-degradation deep unfolding for low-light enhancement"};
    app.require_subcommand(1);
    Options opt;

    auto* train = app.add_subcommand("train", "Train a model on a paired dataset");
    train->add_option("--config", opt.config, "Run config (JSON)");
    train->add_option("--data-root", opt.data_root, "Dataset root with low/ and normal/");
    train->add_option("--epochs", opt.epochs, "Override train.epochs");
    add_common(train, opt);

    auto* infer = app.add_subcommand("infer", "Enhance an image or a directory of images");
    infer->add_option("--checkpoint", opt.checkpoint, "Checkpoint file");
    infer->add_option("--input", opt.input, "Image file or directory");
    infer->add_option("--config", opt.config, "Run config whose network must match the checkpoint");
    infer->add_flag("--save-stages", opt.save_stages, "Also write every stage output to <out>/stages");
    add_common(infer, opt);

    auto* eval = app.add_subcommand("eval", "PSNR/SSIM between two directories paired by name");
    eval->add_option("--pred", opt.pred, "Predicted images");
    eval->add_option("--ref", opt.ref, "Reference images");
    add_common(eval, opt);

    auto* oracle = app.add_subcommand("oracle", "Classical proximal-gradient solver");
    oracle->add_option("--input", opt.input, "Input image");
    oracle->add_option("--operator", opt.operator_spec, "Operator spec (JSON)");
    oracle->add_option("--config", opt.config, "Solver config (JSON)");
    add_common(oracle, opt);

    auto* ablate = app.add_subcommand("ablate", "Train and compare model variants");
    ablate->add_option("--config", opt.config, "Run config (JSON) with an ablation section");
    ablate->add_option("--data-root", opt.data_root, "Dataset root with low/ and normal/");
    ablate->add_option("--epochs", opt.epochs, "Override train.epochs");
    ablate->add_flag("--parallel", opt.parallel, "Run variants concurrently");
    add_common(ablate, opt);

    auto* toyset = app.add_subcommand("toyset", "Write a synthetic paired dataset");
    toyset->add_option("--count", opt.toy_count, "Number of pairs");
    toyset->add_option("--size", opt.toy_size, "Image side length");
    add_common(toyset, opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : dasunet::cli::exit_config;
    }

    if (train->parsed()) return dasunet::cli::cmd_train(opt);
    if (infer->parsed()) return dasunet::cli::cmd_infer(opt);
    if (eval->parsed()) return dasunet::cli::cmd_eval(opt);
    if (oracle->parsed()) return dasunet::cli::cmd_oracle(opt);
    if (ablate->parsed()) return dasunet::cli::cmd_ablate(opt);
    return dasunet::cli::cmd_toyset(opt);
}
