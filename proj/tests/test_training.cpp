#include <gtest/gtest.h>

#include <fstream>
#include <numeric>

#include "dasunet/checkpoint.hpp"
#include "dasunet/config.hpp"
#include "dasunet/toy_data.hpp"
#include "support.hpp"

using namespace dasunet;
using testing_support::random_image;
using testing_support::TempDir;

namespace {

nn::NetworkConfig tiny_network(int stages = 1) {
    nn::NetworkConfig cfg;
    cfg.stages = stages;
    cfg.channels = 8;
    cfg.attention_heads = 2;
    cfg.window_size = 4;
    return cfg;
}

TrainConfig tiny_train(int epochs) {
    TrainConfig cfg;
    cfg.lr_init = 2e-3;
    cfg.lr_final = 1e-5;
    cfg.epochs = epochs;
    cfg.warmup_epochs = epochs > 1 ? 1 : 0;
    cfg.crop = 16;
    cfg.batch_size = 2;
    cfg.seed = 5;
    cfg.val_every = 1000;
    return cfg;
}

void make_toy(const std::filesystem::path& root, int count = 4, int size = 24) {
    data::ToyOptions opt;
    opt.count = count;
    opt.size = size;
    opt.seed = 3;
    data::write_toy_dataset(root, opt);
}

template <class T>
std::vector<Tensor<T>> snapshot(nn::DASUNet<T>& model) {
    std::vector<Tensor<T>> out;
    for (const auto& p : model.params().params()) out.push_back(p.var.value());
    return out;
}

Tensor<double> ramp(int h, int w) {
    Tensor<double> t(1, 1, h, w);
    for (int i = 0; i < h * w; ++i) t.vec()[i] = i;
    return t;
}

} // namespace

TEST(Schedule, Examples) {
    const TrainConfig cfg; // 2e-4 -> 1e-6 over 50 epochs, 3 warmup
    EXPECT_EQ(lr_at(0, 0.0, cfg), 0.0);
    EXPECT_NEAR(lr_at(1, 0.5, cfg), 1e-4, 1e-18);
    EXPECT_NEAR(lr_at(3, 0.0, cfg), 2e-4, 1e-18);
    EXPECT_NEAR(lr_at(26, 0.5, cfg), (2e-4 + 1e-6) / 2, 1e-15);
    EXPECT_NEAR(lr_at(49, 1.0, cfg), 1e-6, 1e-18);
    EXPECT_NEAR(lr_at(60, 0.0, cfg), 1e-6, 1e-18);
}

TEST(Schedule, ContinuousAndMonotone) {
    const TrainConfig cfg;
    EXPECT_NEAR(lr_at(2, 1.0 - 1e-9, cfg), lr_at(3, 0.0, cfg), 1e-12);
    double last = lr_at(0, 0.0, cfg);
    for (int i = 1; i <= 500; ++i) {
        const double t = i * 0.1;
        const double lr = lr_at(static_cast<int>(t), t - static_cast<int>(t), cfg);
        if (t <= 3.0) EXPECT_GE(lr, last - 1e-18);
        else EXPECT_LE(lr, last + 1e-18);
        last = lr;
    }
}

TEST(Schedule, NoWarmup) {
    TrainConfig cfg;
    cfg.warmup_epochs = 0;
    EXPECT_EQ(lr_at(0, 0.0, cfg), cfg.lr_init);
}

TEST(Augment, FlipsAndRotation) {
    const auto img = ramp(2, 3); // 0 1 2 / 3 4 5
    data::Augmentation h{true, false, 0};
    EXPECT_EQ(data::apply_augmentation(img, h).vec(), (std::vector<double>{2, 1, 0, 5, 4, 3}));
    data::Augmentation v{false, true, 0};
    EXPECT_EQ(data::apply_augmentation(img, v).vec(), (std::vector<double>{3, 4, 5, 0, 1, 2}));
    data::Augmentation r{false, false, 1};
    const auto rot = data::apply_augmentation(img, r);
    EXPECT_EQ(rot.shape(), (Shape{1, 1, 3, 2}));
    EXPECT_EQ(rot.vec(), (std::vector<double>{2, 5, 1, 4, 0, 3}));
    data::Augmentation full{false, false, 4};
    EXPECT_EQ(data::apply_augmentation(img, full).vec(), img.vec());
    data::Augmentation twice{false, false, 2};
    data::Augmentation both{true, true, 0};
    EXPECT_EQ(data::apply_augmentation(img, twice).vec(), data::apply_augmentation(img, both).vec());
}

TEST(Augment, ReflectPadAndCrop) {
    const auto img = ramp(1, 3);
    EXPECT_EQ(data::pad_reflect_to(img, 1, 7).vec(), (std::vector<double>{0, 1, 2, 1, 0, 1, 2}));
    EXPECT_EQ(data::crop_window(ramp(3, 3), 1, 1, 2, 2).vec(), (std::vector<double>{4, 5, 7, 8}));
}

TEST(Dataset, PairsByStem) {
    TempDir dir("pairs");
    make_toy(dir.path(), 3, 10);
    data::PairedDataset ds(dir.path());
    ASSERT_EQ(ds.size(), 3u);
    EXPECT_EQ(ds.name(0), "toy00");
    EXPECT_EQ(ds.name(2), "toy02");
    const auto p = ds.full<double>(1);
    EXPECT_EQ(p.low.shape(), (Shape{1, 3, 10, 10}));
    EXPECT_LT(std::accumulate(p.low.vec().begin(), p.low.vec().end(), 0.0), std::accumulate(p.normal.vec().begin(), p.normal.vec().end(), 0.0));
}

TEST(Dataset, CropAndAugmentShareGeometry) {
    TempDir dir("crop");
    make_toy(dir.path(), 1, 12);
    data::PairedDataset ds(dir.path());
    const auto full = ds.full<double>(0);
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = ds.load_pair<double>(0, 8, true, rng);
        ASSERT_EQ(p.low.shape(), (Shape{1, 3, 8, 8}));
        // the same pixel positions are taken from both images, so the darkening relation holds
        double worst = 0.0;
        for (std::size_t i = 0; i < p.low.size(); ++i) {
            worst = std::max(worst, std::abs(p.low[i] - 0.3 * std::pow(p.normal[i], 1.3)));
        }
        EXPECT_LT(worst, 2.0 / 255.0);
    }
    // crops larger than the image are reflect-padded
    const auto big = ds.load_pair<double>(0, 16, false, rng);
    EXPECT_EQ(big.normal.shape(), (Shape{1, 3, 16, 16}));
}

TEST(Dataset, Errors) {
    TempDir dir("dserr");
    EXPECT_THROW(data::PairedDataset(dir / "absent"), DatasetError);
    std::filesystem::create_directories(dir / "empty" / "low");
    std::filesystem::create_directories(dir / "empty" / "normal");
    EXPECT_THROW(data::PairedDataset(dir / "empty"), DatasetError);

    make_toy(dir / "unpaired", 2, 8);
    std::filesystem::remove(dir / "unpaired" / "normal" / "toy01.png");
    try {
        data::PairedDataset ds(dir / "unpaired");
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find("toy01"), std::string::npos);
    }

    make_toy(dir / "broken", 1, 8);
    std::ofstream(dir / "broken" / "low" / "toy00.png") << "not an image";
    data::PairedDataset broken(dir / "broken");
    try {
        broken.full<double>(0);
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find("toy00"), std::string::npos);
    }

    make_toy(dir / "sizes", 1, 8);
    io::write_png(dir / "sizes" / "low" / "toy00.png", random_image(1, 3, 8, 9, 1));
    data::PairedDataset sizes(dir / "sizes");
    EXPECT_THROW(sizes.full<double>(0), DatasetError);
}

TEST(Training, ReproducibleForFixedSeed) {
    TempDir dir("repro");
    make_toy(dir.path());
    data::PairedDataset ds(dir.path());
    auto run = [&](std::uint64_t seed) {
        nn::DASUNet<float> model(tiny_network(2), 11);
        auto cfg = tiny_train(2);
        cfg.seed = seed;
        const auto res = train(model, ds, cfg);
        return std::make_pair(res.log, snapshot(model));
    };
    const auto [log_a, w_a] = run(5);
    const auto [log_b, w_b] = run(5);
    const auto [log_c, w_c] = run(6);
    ASSERT_EQ(log_a.size(), 2u);
    for (std::size_t i = 0; i < log_a.size(); ++i) EXPECT_EQ(metrics_csv_row(log_a[i]), metrics_csv_row(log_b[i]));
    for (std::size_t i = 0; i < w_a.size(); ++i) EXPECT_EQ(w_a[i].vec(), w_b[i].vec());
    EXPECT_NE(log_a.back().loss, log_c.back().loss);
}

TEST(Training, ZeroEpochsKeepsInitialisation) {
    TempDir dir("zero");
    make_toy(dir / "data", 2, 16);
    data::PairedDataset ds(dir / "data");
    nn::DASUNet<float> model(tiny_network(), 12);
    const auto before = snapshot(model);
    TrainOptions opt;
    opt.out_dir = dir / "run";
    const auto res = train(model, ds, tiny_train(0), opt);
    EXPECT_TRUE(res.log.empty());
    const auto after = snapshot(model);
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].vec(), after[i].vec());
    auto loaded = load_model<float>(dir / "run" / "checkpoint.ckpt");
    const auto restored = snapshot(loaded);
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].vec(), restored[i].vec());
}

TEST(Training, LossFallsOnToyData) {
    TempDir dir("falls");
    make_toy(dir / "data");
    data::PairedDataset ds(dir / "data");
    nn::DASUNet<float> model(tiny_network(), 13);
    auto cfg = tiny_train(10);
    cfg.val_every = 1;
    TrainOptions opt;
    opt.out_dir = dir / "run";
    int seen = 0;
    opt.on_epoch = [&](const EpochRecord&) { ++seen; };
    const auto res = train(model, ds, cfg, opt);
    ASSERT_EQ(res.log.size(), 10u);
    EXPECT_EQ(seen, 10);
    EXPECT_LT(res.log.back().loss, res.log.front().loss);
    EXPECT_GT(res.log.back().val_psnr, res.log.front().val_psnr);
    EXPECT_EQ(res.log.back().step, 20);
    EXPECT_NEAR(res.log.back().lr, cfg.lr_final, 1e-15);

    std::ifstream csv(dir / "run" / "metrics.csv");
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, metrics_csv_header);
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    EXPECT_EQ(rows, 10);
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "checkpoint.ckpt"));
}

TEST(Training, NonFiniteLossNamesBatch) {
    TempDir dir("nan");
    make_toy(dir.path(), 2, 16);
    data::PairedDataset ds(dir.path());
    nn::DASUNet<double> model(tiny_network(), 14);
    ASSERT_NE(model.params().find("stage1.sam.conv_out.weight"), nullptr);
    model.params().find("stage1.sam.conv_out.weight")->mutable_value().fill(std::numeric_limits<double>::infinity());
    try {
        train(model, ds, tiny_train(2));
        FAIL();
    } catch (const TrainingError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("batch: toy0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("stage1.sam.conv_out.weight"), std::string::npos) << msg;
    }
}

TEST(Training, RejectsBadConfigAndEmptyWeights) {
    TempDir dir("badcfg");
    make_toy(dir.path(), 1, 16);
    data::PairedDataset ds(dir.path());
    nn::DASUNet<float> model(tiny_network(2), 15);
    auto cfg = tiny_train(2);
    cfg.stage_weights = {1.0};
    EXPECT_THROW(train(model, ds, cfg), ConfigError);
    cfg.stage_weights = {};
    cfg.crop = 15;
    EXPECT_THROW(train(model, ds, cfg), ConfigError);
}

TEST(Checkpoint, RoundTripWithMoments) {
    TempDir dir("ckpt");
    nn::DASUNet<float> model(tiny_network(2), 16);
    TrainingState st;
    st.epoch = 3;
    st.step = 12;
    st.adam_steps = 12;
    for (const auto& p : model.params().params()) {
        st.adam_m.push_back(random_image(p.var.shape().n, p.var.shape().c, p.var.shape().h, p.var.shape().w, 1));
        st.adam_v.push_back(random_image(p.var.shape().n, p.var.shape().c, p.var.shape().h, p.var.shape().w, 2));
    }
    save_checkpoint(dir / "a.ckpt", model, st);
    const auto ck = read_checkpoint(dir / "a.ckpt");
    EXPECT_EQ(ck.state.epoch, 3);
    EXPECT_EQ(ck.state.step, 12);
    EXPECT_EQ(ck.state.adam_steps, 12);
    ASSERT_EQ(ck.state.adam_m.size(), st.adam_m.size());
    EXPECT_EQ(ck.state.adam_v.back().vec(), st.adam_v.back().vec());
    EXPECT_EQ(ck.config.stages, 2);

    auto loaded = load_model<float>(dir / "a.ckpt");
    const auto img = random_image<float>(1, 3, 8, 8, 3);
    EXPECT_EQ(loaded.forward(img).back().value().vec(), model.forward(img).back().value().vec());
    EXPECT_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
}

TEST(Checkpoint, DetectsCorruption) {
    TempDir dir("corrupt");
    nn::DASUNet<float> model(tiny_network(), 17);
    save_checkpoint(dir / "a.ckpt", model);
    std::string bytes;
    {
        std::ifstream in(dir / "a.ckpt", std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& name, const std::string& content) {
        std::ofstream(dir / name, std::ios::binary) << content;
        return dir / name;
    };
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x40;
    EXPECT_THROW(read_checkpoint(write("flip.ckpt", flipped)), CheckpointError);
    EXPECT_THROW(read_checkpoint(write("short.ckpt", bytes.substr(0, bytes.size() - 100))), CheckpointError);
    EXPECT_THROW(read_checkpoint(write("magic.ckpt", "PNG" + bytes.substr(3))), CheckpointError);
    EXPECT_THROW(read_checkpoint(dir / "missing.ckpt"), CheckpointError);
}

TEST(Checkpoint, MismatchNamesTensor) {
    TempDir dir("mismatch");
    nn::DASUNet<float> model(tiny_network(), 18);
    save_checkpoint(dir / "a.ckpt", model);
    auto other_cfg = tiny_network();
    other_cfg.channels = 16;
    nn::DASUNet<float> other(other_cfg, 18);
    try {
        load_parameters(other, read_checkpoint(dir / "a.ckpt"));
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("tensor mismatch at stage1."), std::string::npos) << e.what();
    }
    nn::DASUNet<float> deeper(tiny_network(2), 18);
    EXPECT_THROW(load_parameters(deeper, read_checkpoint(dir / "a.ckpt")), CheckpointError);
}

TEST(RunConfigParsing, DefaultsAndRoundTrip) {
    const auto def = parse_run_config(nlohmann::json::object());
    EXPECT_EQ(def.network.stages, 4);
    EXPECT_EQ(def.train.epochs, 50);
    EXPECT_EQ(def.train.lr_init, 2e-4);
    RunConfig cfg;
    cfg.network = tiny_network(3);
    cfg.train = tiny_train(4);
    cfg.ablation.variants = {nn::Variant::single_rgb};
    cfg.ablation.stages = {1, 2};
    const auto back = parse_run_config(run_config_json(cfg));
    EXPECT_EQ(run_config_json(back), run_config_json(cfg));
}

TEST(RunConfigParsing, FieldLevelErrors) {
    auto message = [](const std::string& text) -> std::string {
        try {
            parse_run_config(nlohmann::json::parse(text));
        } catch (const ConfigError& e) {
            return e.what();
        }
        return "";
    };
    EXPECT_NE(message(R"({"train": {"lr_intt": 1}})").find("train.lr_intt"), std::string::npos);
    EXPECT_NE(message(R"({"train": {"epochs": "ten"}})").find("train.epochs"), std::string::npos);
    EXPECT_NE(message(R"({"train": {"crop": 63}})").find("train.crop"), std::string::npos);
    EXPECT_NE(message(R"({"train": {"epochs": 3, "warmup_epochs": 3}})").find("warmup"), std::string::npos);
    EXPECT_NE(message(R"({"network": {"variant": "mono"}})").find("network.variant"), std::string::npos);
    EXPECT_NE(message(R"({"network": 3})").find("network"), std::string::npos);
    EXPECT_NE(message(R"({"ablation": {"stages": [0]}})").find("ablation.stages"), std::string::npos);
    EXPECT_NE(message(R"({"ablation": {"variants": ["nope"]}})").find("ablation.variants"), std::string::npos);
    EXPECT_NE(message(R"({"extra": {}})").find("extra: unknown field"), std::string::npos);
    EXPECT_NE(message(R"({"train": {"stage_weights": [1, 2]}})").find("stage_weights"), std::string::npos);
    EXPECT_EQ(message(R"({"train": {"epochs": 0}})"), "");
}

TEST(MetricsCsv, Format) {
    EpochRecord r;
    r.epoch = 2;
    r.step = 8;
    r.lr = 1e-4;
    r.loss = 0.125;
    EXPECT_EQ(metrics_csv_row(r), "2,8,0.0001,0.125,,");
    r.val_psnr = std::numeric_limits<double>::infinity();
    r.val_ssim = 0.5;
    EXPECT_EQ(metrics_csv_row(r), "2,8,0.0001,0.125,inf,0.5");
}
