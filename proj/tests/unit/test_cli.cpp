#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <string>

#include "fixtures.hpp"

namespace {

const std::string kCli = LIDARSIM_CLI_PATH;

int run(const std::string& args, const fixtures::TempDir& dir) {
    const std::string cmd = kCli + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " +
                            (dir / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Small synthetic run: 32 x 128 grid, depth 3, 8 frames.
void write_config(const std::filesystem::path& path) {
    std::ofstream out(path);
    out << "height = 32\nwidth = 128\ndepth = 3\nbase_width = 4\ndisc_base_width = 4\ndisc_layers = 2\n"
           "synth_frames = 8\ntrain_size = 4\nval_size = 2\ntest_size = 2\nepochs = 2\nbatch_size = 2\n";
}

}  // namespace

TEST(Cli, NoSubcommandIsConfigError) {
    fixtures::TempDir dir("cli");
    EXPECT_EQ(run("", dir), 2);
    EXPECT_EQ(run("--help", dir), 0);
}

TEST(Cli, UnknownConfigKeyIsConfigError) {
    fixtures::TempDir dir("cli");
    EXPECT_EQ(run("--set bogus=1 synth --out " + (dir / "s").string(), dir), 2);
    EXPECT_NE(fixtures::read_text(dir / "stderr.txt").find("bogus"), std::string::npos);
}

TEST(Cli, MissingInputIsDataError) {
    fixtures::TempDir dir("cli");
    EXPECT_EQ(run("angles --cloud /nonexistent.bin --out " + (dir / "a.csv").string(), dir), 3);
}

TEST(Cli, SynthProjectAngles) {
    fixtures::TempDir dir("cli");
    const std::string grid = "--set height=32 --set width=128 ";
    ASSERT_EQ(run(grid + "synth --frames 2 --out " + (dir / "frames").string(), dir), 0);
    EXPECT_TRUE(std::filesystem::exists(dir / "frames" / "000001.bin"));
    EXPECT_TRUE(std::filesystem::exists(dir / "frames" / "000001.label"));
    EXPECT_NE(fixtures::read_text(dir / "frames" / "frames.txt").find("cloud=000000.bin"), std::string::npos);

    const std::string cloud = (dir / "frames" / "000000.bin").string();
    ASSERT_EQ(run(grid + "project --cloud " + cloud + " --labels " + (dir / "frames" / "000000.label").string() +
                      " --out " + (dir / "proj" / "f0").string(),
                  dir),
              0);
    EXPECT_TRUE(std::filesystem::exists(dir / "proj" / "f0.lsi"));
    EXPECT_TRUE(std::filesystem::exists(dir / "proj" / "f0_label.pgm"));
    EXPECT_TRUE(std::filesystem::exists(dir / "proj" / "f0.json"));

    ASSERT_EQ(run("angles --k 8 --cloud " + cloud + " --out " + (dir / "angles.csv").string(), dir), 0);
    EXPECT_EQ(fixtures::read_text(dir / "angles.csv").rfind("index,angle_rad,degenerate_flag", 0), 0u);
}

TEST(Cli, TrainThenAnalyse) {
    fixtures::TempDir dir("cli");
    write_config(dir / "run.cfg");
    const std::string base = "--deterministic --config " + (dir / "run.cfg").string() + " ";
    ASSERT_EQ(run(base + "train --out " + (dir / "run").string(), dir), 0);
    const auto ckpt = (dir / "run" / "best.ckpt").string();
    ASSERT_TRUE(std::filesystem::exists(ckpt));
    EXPECT_NE(fixtures::read_text(dir / "run" / "metrics.csv").find("2,val,masked_mse,"), std::string::npos);

    ASSERT_EQ(run(base + "eval --checkpoint " + ckpt + " --out " + (dir / "eval.csv").string(), dir), 0);
    const auto eval = fixtures::read_text(dir / "eval.csv");
    EXPECT_NE(eval.find("best.ckpt,U-NET,synthetic,D+L+I,test,2,"), std::string::npos) << eval;

    ASSERT_EQ(run(base + "ablation --checkpoint " + ckpt + " --out " + (dir / "abl.csv").string(), dir), 0);
    const auto abl = fixtures::read_text(dir / "abl.csv");
    EXPECT_NE(abl.find("U-NET,synthetic,D+RGB,-"), std::string::npos) << abl;
    EXPECT_EQ(run(base + "ablation --out " + (dir / "empty.csv").string(), dir), 0);

    ASSERT_EQ(run(base + "histogram --checkpoint " + ckpt + " --bins 21 --out " + (dir / "h.csv").string(), dir), 0);
    const auto hist = fixtures::read_text(dir / "h.csv");
    EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 22);

    ASSERT_EQ(run(base + "heatmap --checkpoint " + ckpt + " --out " + (dir / "heat").string(), dir), 0);
    EXPECT_TRUE(std::filesystem::exists(dir / "heat.pgm"));
    EXPECT_TRUE(std::filesystem::exists(dir / "heat.lsi"));

    ASSERT_EQ(run(base + "render --checkpoint " + ckpt + " --frame 1 --out " + (dir / "r").string(), dir), 0);
    EXPECT_TRUE(std::filesystem::exists(dir / "r_reference.pgm"));
    EXPECT_TRUE(std::filesystem::exists(dir / "r_predicted.pgm"));
    EXPECT_EQ(run(base + "render --frame 9 --out " + (dir / "r").string(), dir), 2);
}

TEST(Cli, ComboMismatchIsConfigError) {
    fixtures::TempDir dir("cli");
    write_config(dir / "run.cfg");
    const std::string base = "--deterministic --config " + (dir / "run.cfg").string() + " ";
    EXPECT_EQ(run(base + "--set combo=D+X train --out " + (dir / "run").string(), dir), 2);
}

TEST(Cli, DivergentTrainingIsTrainingFault) {
    fixtures::TempDir dir("cli");
    write_config(dir / "run.cfg");
    const std::string base = "--deterministic --config " + (dir / "run.cfg").string() + " ";
    EXPECT_EQ(run(base + "--set lr=1e30 --set weight_decay=0 train --out " + (dir / "run").string(), dir), 4);
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "fault_dump.json"));
}
