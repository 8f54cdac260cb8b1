#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "fixtures.hpp"
#include "lidarsim/error.hpp"
#include "lidarsim/evaluation.hpp"
#include "lidarsim/ingest.hpp"
#include "lidarsim/pipeline.hpp"

using namespace lidarsim;

namespace {

DatasetSplit split_for(const TrainConfig& cfg, std::size_t n) {
    return split_dataset(n,
                         SplitSizes{static_cast<std::size_t>(cfg.train_size), static_cast<std::size_t>(cfg.val_size),
                                    static_cast<std::size_t>(cfg.test_size)},
                         cfg.data_seed);
}

// Dataset shared by the in-memory training tests (built once).
const Dataset& tiny_dataset() {
    static const Dataset data = [] {
        fixtures::TempDir dir("pipeline");
        return build_dataset(fixtures::tiny_config(dir.path()));
    }();
    return data;
}

double metric(const std::vector<MetricRow>& rows, int epoch, const std::string& split, const std::string& name) {
    for (const auto& r : rows)
        if (r.epoch == epoch && r.split == split && r.loss_name == name) return r.value;
    ADD_FAILURE() << "missing metric " << epoch << " " << split << " " << name;
    return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

TEST(PipelineConfig, ArchitectureOptimizerDefaults) {
    TrainConfig cfg;
    EXPECT_DOUBLE_EQ(cfg.effective_lr(), 0.003);
    EXPECT_DOUBLE_EQ(cfg.effective_weight_decay(), 0.001);
    cfg.arch = "pix2pix";
    EXPECT_DOUBLE_EQ(cfg.effective_lr(), 0.0002);
    EXPECT_DOUBLE_EQ(cfg.effective_beta1(), 0.5);
    EXPECT_DOUBLE_EQ(cfg.lambda_l1, 100.0);
    EXPECT_DOUBLE_EQ(cfg.gp_coeff, 10.0);
    EXPECT_EQ(cfg.generator_config(4).head, OutputHead::Sigmoid);
    EXPECT_EQ(cfg.discriminator_config(4).in_channels, 5);
    cfg.arch = "unet";
    EXPECT_EQ(cfg.generator_config(4).head, OutputHead::Linear);
}

TEST(PipelineConfig, ParseKeyValueText) {
    const auto cfg = parse_train_config(
        "# comment\n"
        "arch = pix2pix\n"
        "combo=D+RGB+L+I   # trailing comment\n"
        "\n"
        "epochs = 7\n"
        "lr = 0.01\n"
        "height = 32\n"
        "width = 128\n"
        "fov_up_deg = 3\n"
        "synth_noise = 0\n"
        "deterministic = true\n");
    EXPECT_EQ(cfg.arch, "pix2pix");
    EXPECT_EQ(cfg.combo, "D+RGB+L+I");
    EXPECT_EQ(cfg.epochs, 7);
    EXPECT_DOUBLE_EQ(cfg.effective_lr(), 0.01);
    EXPECT_EQ(cfg.projection.height, 32);
    EXPECT_NEAR(cfg.projection.fov_up, deg2rad(3.0), 1e-15);
    EXPECT_EQ(cfg.synth.noise_sigma, 0.0);
    EXPECT_TRUE(cfg.deterministic);
}

TEST(PipelineConfig, FormatRoundTrips) {
    TrainConfig cfg;
    cfg.combo = "D+I";
    cfg.lr = 0.0005;
    cfg.seed = 99;
    cfg.projection.width = 512;
    const auto back = parse_train_config(format_train_config(cfg));
    EXPECT_EQ(format_train_config(back), format_train_config(cfg));
    EXPECT_EQ(back.seed, 99u);
    EXPECT_EQ(back.projection.width, 512);
    for (const auto& key : train_config_keys()) {
        EXPECT_NE(format_train_config(cfg).find(key + " ="), std::string::npos) << key;
    }
}

TEST(PipelineConfig, ErrorsAreConfigErrors) {
    for (const char* text : {"bogus = 1\n", "epochs = many\n", "epochs 3\n", "lr = -1\n"}) {
        try {
            parse_train_config(text).validate();
            FAIL() << text;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::Config) << text;
        }
    }
    TrainConfig cfg;
    cfg.projection.width = 100;  // not divisible by 2^5
    EXPECT_THROW(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.arch = "gan";
    EXPECT_THROW(cfg.validate(), Error);
}

TEST(PipelineConfig, FrameListResolvedAgainstConfigFile) {
    fixtures::TempDir dir("pipeline");
    std::filesystem::create_directories(dir / "sub");
    {
        std::ofstream out(dir / "sub" / "train.cfg");
        out << "dataset = list\nframe_list = frames.txt\n";
    }
    const auto cfg = load_train_config(dir / "sub" / "train.cfg");
    EXPECT_EQ(cfg.frame_list, dir / "sub" / "frames.txt");
}

TEST(PipelineSplit, DisjointCoverAndDeterministic) {
    const auto s = split_dataset(300, {200, 50, 50}, 7);
    EXPECT_EQ(s.train.size(), 200u);
    EXPECT_EQ(s.val.size(), 50u);
    EXPECT_EQ(s.test.size(), 50u);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    EXPECT_EQ(all.size(), 300u);
    EXPECT_EQ(*all.rbegin(), 299u);
    const auto again = split_dataset(300, {200, 50, 50}, 7);
    EXPECT_EQ(again.train, s.train);
    EXPECT_EQ(again.val, s.val);
    EXPECT_EQ(again.test, s.test);
    EXPECT_NE(split_dataset(300, {200, 50, 50}, 8).train, s.train);
}

TEST(PipelineSplit, FullScaleSizes) {
    const auto s = split_dataset(12500, {7500, 2500, 2500}, 1);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    EXPECT_EQ(all.size(), 12500u);
}

TEST(PipelineSplit, Oversubscription) {
    try {
        split_dataset(10, {6, 3, 2}, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Config);
    }
}

TEST(PipelineData, SynthFrameChannels) {
    const Dataset& data = tiny_dataset();
    ASSERT_EQ(data.size(), 10u);
    for (const auto& f : data) {
        for (const char* c : {"depth", "mask", "incidence", "label", "r", "g", "b", "color_mask", "intensity"})
            EXPECT_TRUE(f.has(c)) << c;
        EXPECT_EQ(f.config.height, 32);
        EXPECT_EQ(f.config.width, 128);
    }
}

TEST(PipelineData, BuildIsDeterministicAcrossThreads) {
    fixtures::TempDir dir("pipeline");
    auto cfg = fixtures::tiny_config(dir.path());
    cfg.synth_frames = 4;
    cfg.deterministic = false;
    cfg.threads = 3;
    const auto a = build_dataset(cfg);
    cfg.threads = 1;
    cfg.deterministic = true;
    const auto b = build_dataset(cfg);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].channels, b[i].channels);
    EXPECT_EQ(a[0].channels, tiny_dataset()[0].channels);
}

TEST(PipelineData, FrameListDataset) {
    fixtures::TempDir dir("pipeline");
    auto cfg = fixtures::tiny_config(dir.path());
    SynthSceneConfig scfg;
    std::ofstream list(dir / "frames.txt");
    for (int i = 0; i < 3; ++i) {
        const auto s = synth_scene(100 + i, scfg, cfg.projection);
        const std::string stem = "f" + std::to_string(i);
        write_point_cloud(dir / (stem + ".bin"), s.cloud);
        write_labels(dir / (stem + ".label"), *s.cloud.label);
        list << "cloud=" << stem << ".bin labels=" << stem << ".label\n";
    }
    list.close();
    const auto sources = read_frame_list(dir / "frames.txt");
    ASSERT_EQ(sources.size(), 3u);
    EXPECT_EQ(sources[0].cloud, dir / "f0.bin");
    cfg.dataset = "list";
    cfg.frame_list = dir / "frames.txt";
    const auto data = build_dataset(cfg);
    ASSERT_EQ(data.size(), 3u);
    EXPECT_TRUE(data[0].has("label"));
    EXPECT_TRUE(data[0].has("incidence"));
    EXPECT_FALSE(data[0].has("r"));
    // Training on an RGB combo fails before any step.
    cfg.combo = "D+RGB";
    cfg.train_size = 1;
    cfg.val_size = 1;
    cfg.test_size = 1;
    try {
        train(cfg, data, split_for(cfg, data.size()));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ModalityUnavailable);
    }
}

TEST(PipelineNorm, StatisticsUseTrainingFramesOnly) {
    Dataset data = tiny_dataset();
    fixtures::TempDir dir("pipeline");
    auto cfg = fixtures::tiny_config(dir.path());
    const auto split = split_for(cfg, data.size());
    const auto combo = ModalityCombo::parse("D+L+I");
    const NormStats norm = compute_norm_stats(data, split.train, combo);

    // Independent recomputation over the training frames.
    const auto names = combo.channel_names();
    ASSERT_EQ(norm.channels, names);
    for (std::size_t c = 0; c < names.size(); ++c) {
        double s = 0, sq = 0, n = 0;
        for (auto f : split.train) {
            for (float v : data[f].channel(names[c])) {
                const double x = names[c] == "label" ? v / 255.0f : v;
                s += x;
                sq += x * x;
                n += 1;
            }
        }
        const double mean = s / n;
        const double sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
        EXPECT_NEAR(norm.mean[c], mean, 1e-9) << names[c];
        EXPECT_NEAR(norm.std[c], sd < 1e-6 ? 1.0 : sd, 1e-6) << names[c];
    }

    // Corrupting held-out frames changes nothing the trainer embeds.
    cfg.epochs = 1;
    const auto before = train(cfg, data, split);
    for (auto f : split.val) std::fill(data[f].channels["depth"].begin(), data[f].channels["depth"].end(), 0.9f);
    for (auto f : split.test) std::fill(data[f].channels["label"].begin(), data[f].channels["label"].end(), 200.0f);
    const auto after = train(cfg, data, split);
    EXPECT_EQ(before.final_descriptor.norm_mean, after.final_descriptor.norm_mean);
    EXPECT_EQ(before.final_descriptor.norm_std, after.final_descriptor.norm_std);
    EXPECT_EQ(before.final_descriptor.norm_mean, norm.mean);
}

TEST(PipelineNorm, BatchIsStandardized) {
    const Dataset& data = tiny_dataset();
    const auto combo = ModalityCombo::parse("D+I");
    const std::vector<std::size_t> frames{0, 1};
    const NormStats norm = compute_norm_stats(data, frames, combo);
    const Batch b = make_batch(data, frames, combo, norm);
    EXPECT_EQ(b.input.shape(), (ad::Shape{2, 3, 32, 128}));
    EXPECT_EQ(b.target.shape(), (ad::Shape{2, 1, 32, 128}));
    const std::size_t hw = 32 * 128;
    for (int c = 0; c < 3; ++c) {
        double s = 0, sq = 0;
        for (int n = 0; n < 2; ++n)
            for (std::size_t p = 0; p < hw; ++p) {
                const double v = b.input.data()[(n * 3 + c) * hw + p];
                s += v;
                sq += v * v;
            }
        EXPECT_NEAR(s / (2 * hw), 0.0, 1e-4);
        EXPECT_NEAR(sq / (2 * hw), 1.0, 1e-3);
    }
    const auto& mask = data[1].channel("mask");
    for (std::size_t p = 0; p < hw; ++p) EXPECT_EQ(b.mask.data()[hw + p], mask[p]);
}

TEST(PipelineTrain, SmokeRunReloadsBitwise) {
    fixtures::TempDir dir("pipeline");
    auto cfg = fixtures::tiny_config(dir / "run");
    cfg.projection = ProjectionConfig{64, 256};
    const auto art = train(cfg);
    EXPECT_TRUE(std::filesystem::exists(art.best_checkpoint));
    EXPECT_TRUE(std::filesystem::exists(art.final_checkpoint));
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "config.txt"));

    const auto csv = fixtures::read_text(art.metrics_csv);
    EXPECT_EQ(csv.rfind("epoch,split,loss_name,value\n", 0), 0u);
    EXPECT_NE(csv.find("2,val,masked_mse,"), std::string::npos);
    EXPECT_NE(csv.find("1,train,masked_mse,"), std::string::npos);

    const auto data = build_dataset(cfg);
    const auto split = split_for(cfg, data.size());
    const CheckpointPredictor best(load_checkpoint(art.best_checkpoint));
    EXPECT_EQ(eval_mse(best, data, split.val), art.result.best_val_mse);
    const CheckpointPredictor fin(load_checkpoint(art.final_checkpoint));
    EXPECT_EQ(eval_mse(fin, data, split.val), art.result.final_val_mse);
    EXPECT_LE(art.result.best_val_mse, art.result.final_val_mse);
    EXPECT_EQ(parse_train_config(fixtures::read_text(dir / "run" / "config.txt")).seed, cfg.seed);
}

TEST(PipelineTrain, DeterministicCheckpoints) {
    fixtures::TempDir dir("pipeline");
    const auto a = train(fixtures::tiny_config(dir / "a"));
    const auto b = train(fixtures::tiny_config(dir / "b"));
    EXPECT_EQ(fixtures::read_bytes(a.best_checkpoint), fixtures::read_bytes(b.best_checkpoint));
    EXPECT_EQ(fixtures::read_bytes(a.final_checkpoint), fixtures::read_bytes(b.final_checkpoint));
    EXPECT_EQ(fixtures::read_text(a.metrics_csv), fixtures::read_text(b.metrics_csv));
    auto other = fixtures::tiny_config(dir / "c");
    other.seed = 2;
    const auto c = train(other);
    EXPECT_NE(fixtures::read_bytes(a.final_checkpoint), fixtures::read_bytes(c.final_checkpoint));
}

TEST(PipelineTrain, LossDropsByEpochFive) {
    fixtures::TempDir dir("pipeline");
    auto cfg = fixtures::tiny_config(dir.path());
    cfg.epochs = 5;
    const auto& data = tiny_dataset();
    const auto r = train(cfg, data, split_for(cfg, data.size()));
    EXPECT_LT(metric(r.metrics, 5, "train", "masked_mse"), metric(r.metrics, 1, "train", "masked_mse"));
    double best = std::numeric_limits<double>::infinity();
    for (int e = 1; e <= 5; ++e) best = std::min(best, metric(r.metrics, e, "val", "masked_mse"));
    EXPECT_EQ(r.best_val_mse, best);
    EXPECT_LE(r.best_val_mse, r.final_val_mse);
}

TEST(PipelineTrain, Pix2PixSmoke) {
    fixtures::TempDir dir("pipeline");
    auto cfg = fixtures::tiny_config(dir.path());
    cfg.arch = "pix2pix";
    const auto& data = tiny_dataset();
    const auto r = train(cfg, data, split_for(cfg, data.size()));
    for (const char* name : {"g_loss", "g_adv", "g_l1", "d_loss", "d_real_bce", "d_fake_bce", "r1"})
        EXPECT_TRUE(std::isfinite(metric(r.metrics, 2, "train", name))) << name;
    EXPECT_EQ(r.final_descriptor.kind, "pix2pix");
    bool has_disc = false;
    for (const auto& [name, t] : r.final_params) has_disc |= name.rfind("disc.", 0) == 0;
    EXPECT_TRUE(has_disc);
}

TEST(PipelineTrain, NonFiniteLossWritesFaultDump) {
    fixtures::TempDir dir("pipeline");
    auto cfg = fixtures::tiny_config(dir.path());
    Dataset data = tiny_dataset();
    const auto split = split_for(cfg, data.size());
    for (auto f : split.train) data[f].channels["intensity"][0] = std::numeric_limits<float>::quiet_NaN();
    try {
        train(cfg, data, split);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::TrainingFault);
    }
    const auto dump = fixtures::read_text(dir / "fault_dump.json");
    EXPECT_NE(dump.find("\"epoch\""), std::string::npos);
    EXPECT_NE(dump.find("\"config\""), std::string::npos);
}
