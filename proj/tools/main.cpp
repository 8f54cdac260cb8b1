#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lidarsim/error.hpp"
#include "lidarsim/evaluation.hpp"
#include "lidarsim/geometry.hpp"
#include "lidarsim/image_io.hpp"
#include "lidarsim/ingest.hpp"
#include "lidarsim/pipeline.hpp"
#include "lidarsim/synth.hpp"

namespace fs = std::filesystem;
using namespace lidarsim;

namespace {

struct GlobalOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    std::optional<int> threads;
    std::vector<std::string> settings;
};

TrainConfig resolve_config(const GlobalOptions& g) {
    TrainConfig cfg = g.config.empty() ? TrainConfig{} : load_train_config(g.config);
    for (const auto& kv : g.settings) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::Config, "--set expects key=value, got '" + kv + "'");
        }
        apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed) cfg.seed = *g.seed;
    if (g.deterministic) cfg.deterministic = true;
    if (g.threads) cfg.threads = *g.threads;
    cfg.validate();
    return cfg;
}

std::string architecture_label(const std::string& kind) {
    return kind == "pix2pix" ? "Pix2Pix" : "U-NET";
}

void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::ofstream open_out(const fs::path& path) {
    ensure_parent(path);
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    return out;
}

// Dataset and split for evaluating checkpoints. The grid comes from the
// checkpoint; everything else from the run configuration.
class EvalData {
public:
    explicit EvalData(TrainConfig cfg) : cfg_(std::move(cfg)) {}

    const Dataset& data_for(const ProjectionConfig& grid) {
        if (!data_ || !(grid == cfg_.projection)) {
            cfg_.projection = grid;
            data_ = build_dataset(cfg_);
            split_ = split_dataset(data_->size(),
                                   SplitSizes{static_cast<std::size_t>(cfg_.train_size),
                                              static_cast<std::size_t>(cfg_.val_size),
                                              static_cast<std::size_t>(cfg_.test_size)},
                                   cfg_.data_seed);
        }
        return *data_;
    }

    const std::vector<std::size_t>& frames(const std::string& which) const {
        if (which == "train") return split_.train;
        if (which == "val") return split_.val;
        if (which == "test") return split_.test;
        throw Error(ErrorCode::Config, "--split must be train, val or test");
    }

    const TrainConfig& config() const { return cfg_; }

private:
    TrainConfig cfg_;
    std::optional<Dataset> data_;
    DatasetSplit split_;
};

int cmd_synth(const TrainConfig& cfg, const fs::path& out_dir, int frames) {
    fs::create_directories(out_dir);
    std::ofstream list(out_dir / "frames.txt");
    const int count = frames > 0 ? frames : cfg.synth_frames;
    for (int i = 0; i < count; ++i) {
        const SynthScene scene = synth_scene(synth_frame_seed(cfg, static_cast<std::size_t>(i)), cfg.synth,
                                             cfg.projection);
        std::ostringstream stem;
        stem << std::setw(6) << std::setfill('0') << i;
        write_point_cloud(out_dir / (stem.str() + ".bin"), scene.cloud);
        write_labels(out_dir / (stem.str() + ".label"), *scene.cloud.label);
        list << "cloud=" << stem.str() << ".bin labels=" << stem.str() << ".label\n";
    }
    std::cout << "wrote " << count << " frames to " << out_dir.string() << "\n";
    return 0;
}

int cmd_project(const TrainConfig& cfg, const FrameSource& src, const fs::path& prefix) {
    ensure_parent(prefix);
    const SphericalImage img = load_frame(src, cfg);
    export_spherical_image(prefix, img);
    std::size_t hits = 0;
    for (float m : img.channel(channel::kMask)) hits += m > 0.5f;
    std::cout << "projected " << img.source_points << " points onto " << hits << " pixels ("
              << img.dropped_out_of_fov << " outside the vertical field of view)\n";
    return 0;
}

int cmd_angles(const TrainConfig& cfg, const fs::path& cloud_path, const fs::path& out, int k) {
    ParseReport report;
    const PointCloud cloud = read_point_cloud(cloud_path, &report, static_cast<float>(cfg.intensity_max));
    const IncidenceChannel ch = incidence_channel(cloud, k > 0 ? k : cfg.knn_k);
    ensure_parent(out);
    write_angle_csv(out, ch);
    std::size_t degenerate = 0;
    for (auto d : ch.degenerate) degenerate += d;
    std::cout << cloud.size() << " points (" << report.dropped() << " dropped), " << degenerate
              << " degenerate neighbourhoods\n";
    return 0;
}

int cmd_train(TrainConfig cfg, const std::string& out_dir) {
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    std::cout << "training " << cfg.arch << " on " << cfg.combo << " for " << cfg.epochs << " epochs -> "
              << cfg.out_dir.string() << "\n";
    const Dataset data = build_dataset(cfg);
    const DatasetSplit split = split_dataset(
        data.size(),
        SplitSizes{static_cast<std::size_t>(cfg.train_size), static_cast<std::size_t>(cfg.val_size),
                   static_cast<std::size_t>(cfg.test_size)},
        cfg.data_seed);
    fs::create_directories(cfg.out_dir);
    {
        std::ofstream out(cfg.out_dir / "config.txt");
        out << format_train_config(cfg);
    }
    const fs::path metrics_csv = cfg.out_dir / "metrics.csv";
    std::vector<MetricRow> so_far;
    const TrainResult result = train(cfg, data, split, [&](int epoch, const std::vector<MetricRow>& rows) {
        so_far.insert(so_far.end(), rows.begin(), rows.end());
        write_metrics_csv(metrics_csv, so_far);
        std::cout << "epoch " << epoch;
        for (const auto& r : rows) std::cout << "  " << r.split << "." << r.loss_name << "=" << r.value;
        std::cout << std::endl;
    });
    save_checkpoint(cfg.out_dir / "best.ckpt", result.best_descriptor, result.best_params);
    save_checkpoint(cfg.out_dir / "final.ckpt", result.final_descriptor, result.final_params);
    write_metrics_csv(metrics_csv, result.metrics);
    std::cout << "best val masked_mse " << result.best_val_mse << " at epoch " << result.best_epoch << "\n";
    return 0;
}

int cmd_eval(EvalData& ev, const std::vector<std::string>& checkpoints, const std::string& split,
             const fs::path& out) {
    std::ostringstream csv;
    csv << "checkpoint,architecture,dataset,combo,split,frames,masked_mse\n" << std::setprecision(9);
    for (const auto& path : checkpoints) {
        const CheckpointPredictor predictor(load_checkpoint(path));
        const Dataset& data = ev.data_for(predictor.descriptor().projection);
        const auto& frames = ev.frames(split);
        const double mse = eval_mse(predictor, data, frames);
        csv << fs::path(path).filename().string() << ',' << architecture_label(predictor.descriptor().kind) << ','
            << ev.config().dataset_name << ',' << predictor.combo().name() << ',' << split << ',' << frames.size()
            << ',' << mse << '\n';
    }
    if (out.empty()) {
        std::cout << csv.str();
    } else {
        open_out(out) << csv.str();
    }
    return 0;
}

int cmd_ablation(EvalData& ev, const std::vector<std::string>& checkpoints, const std::string& split,
                 const fs::path& out, const fs::path& table) {
    std::vector<AblationRow> measured;
    for (const auto& path : checkpoints) {
        const CheckpointPredictor predictor(load_checkpoint(path));
        const Dataset& data = ev.data_for(predictor.descriptor().projection);
        measured.push_back({architecture_label(predictor.descriptor().kind), ev.config().dataset_name,
                            predictor.combo().name(), eval_mse(predictor, data, ev.frames(split))});
    }
    const auto rows = ablation_matrix(measured);
    if (!out.empty()) {
        auto f = open_out(out);
        write_ablation_csv(f, rows);
    }
    if (!table.empty()) {
        auto f = open_out(table);
        write_ablation_table(f, rows);
    }
    write_ablation_table(std::cout, rows);
    return 0;
}

int cmd_histogram(EvalData& ev, const std::string& checkpoint, const std::string& split, const fs::path& out,
                  int bins) {
    const CheckpointPredictor predictor(load_checkpoint(checkpoint));
    const Dataset& data = ev.data_for(predictor.descriptor().projection);
    const Histogram hist = error_histogram(predictor, data, ev.frames(split), bins, ev.config().threads);
    auto f = open_out(out);
    write_histogram_csv(f, hist);
    std::cout << hist.total() << " masked pixels in " << hist.bins() << " bins\n";
    return 0;
}

int cmd_heatmap(EvalData& ev, const std::string& checkpoint, const std::string& split, const fs::path& prefix) {
    const CheckpointPredictor predictor(load_checkpoint(checkpoint));
    const Dataset& data = ev.data_for(predictor.descriptor().projection);
    const Heatmap heat = error_heatmap(predictor, data, ev.frames(split), ev.config().threads);
    ensure_parent(prefix);
    const double scale = export_heatmap(prefix, heat);
    std::cout << "heatmap over " << heat.frames << " frames, 65535 = " << scale << " squared error\n";
    return 0;
}

int cmd_render(EvalData& ev, const std::string& checkpoint, const std::string& split, int index,
               const fs::path& prefix) {
    std::unique_ptr<Predictor> predictor;
    ProjectionConfig grid = ev.config().projection;
    if (checkpoint.empty()) {
        predictor = std::make_unique<OraclePredictor>();
    } else {
        auto p = std::make_unique<CheckpointPredictor>(load_checkpoint(checkpoint));
        grid = p->descriptor().projection;
        predictor = std::move(p);
    }
    const Dataset& data = ev.data_for(grid);
    const auto& frames = ev.frames(split);
    if (index < 0 || static_cast<std::size_t>(index) >= frames.size()) {
        throw Error(ErrorCode::Config, "--frame " + std::to_string(index) + " outside the " + split + " split");
    }
    ensure_parent(prefix);
    write_rendered_pair(prefix, render_intensity(*predictor, data[frames[static_cast<std::size_t>(index)]]));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LiDAR intensity simulation: data preparation, training and evaluation"};
    app.require_subcommand(1);
    GlobalOptions g;
    app.add_option("--config", g.config, "Training/data configuration file (key = value)");
    app.add_option("--seed", g.seed, "Training seed (overrides the configuration)");
    app.add_flag("--deterministic", g.deterministic, "Single-threaded, bitwise reproducible run");
    app.add_option("--threads", g.threads, "Worker threads for preprocessing and evaluation")->check(CLI::PositiveNumber);
    app.add_option("--set", g.settings, "Override one configuration key (key=value), repeatable");

    std::string out, split = "test", checkpoint, table, out_dir;
    std::vector<std::string> checkpoints;
    int frames = 0, k = 0, bins = 201, index = 0;
    FrameSource src;
    std::string labels, image, proj;

    auto* synth = app.add_subcommand("synth", "Write synthetic frames (.bin + .label) and a frame list");
    synth->add_option("--out", out, "Output directory")->required();
    synth->add_option("--frames", frames, "Number of frames (default: synth_frames)");

    auto* project = app.add_subcommand("project", "Project one cloud onto the spherical grid and export it");
    project->add_option("--cloud", src.cloud, "KITTI .bin point cloud")->required();
    project->add_option("--labels", labels, "SemanticKITTI .label file");
    project->add_option("--image", image, "Camera image (PPM/PNG)");
    project->add_option("--proj", proj, "3x4 projection matrix file");
    project->add_option("--out", out, "Output prefix")->required();

    auto* angles = app.add_subcommand("angles", "Per-point incidence angles as CSV");
    angles->add_option("--cloud", src.cloud, "KITTI .bin point cloud")->required();
    angles->add_option("--out", out, "Output CSV")->required();
    angles->add_option("--k", k, "Neighbourhood size (default: knn_k)");

    auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoints and metrics");
    train_cmd->add_option("--out", out_dir, "Run directory (default: out_dir)");

    auto* eval = app.add_subcommand("eval", "Masked MSE of checkpoints on a split");
    eval->add_option("--checkpoint", checkpoints, "Checkpoint file(s)")->required();
    eval->add_option("--split", split, "train, val or test");
    eval->add_option("--out", out, "Output CSV (default: stdout)");

    auto* ablation = app.add_subcommand("ablation", "Modality ablation table from a set of checkpoints");
    ablation->add_option("--checkpoint", checkpoints, "Checkpoint file(s)");
    ablation->add_option("--split", split, "train, val or test");
    ablation->add_option("--out", out, "Long-form CSV");
    ablation->add_option("--table", table, "Wide table CSV");

    auto* histogram = app.add_subcommand("histogram", "Signed error histogram over masked pixels");
    histogram->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    histogram->add_option("--split", split, "train, val or test");
    histogram->add_option("--bins", bins, "Number of bins over [-1, 1]")->check(CLI::PositiveNumber);
    histogram->add_option("--out", out, "Output CSV")->required();

    auto* heatmap = app.add_subcommand("heatmap", "Per-pixel mean squared error map");
    heatmap->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    heatmap->add_option("--split", split, "train, val or test");
    heatmap->add_option("--out", out, "Output prefix (.pgm and .lsi)")->required();

    auto* render = app.add_subcommand("render", "Reference and predicted intensity images of one frame");
    render->add_option("--checkpoint", checkpoint, "Checkpoint file (omit to render the reference twice)");
    render->add_option("--split", split, "train, val or test");
    render->add_option("--frame", index, "Frame index within the split");
    render->add_option("--out", out, "Output prefix")->required();

    for (auto* sub : app.get_subcommands({})) {
        sub->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_code_for(ErrorCode::Config);
    }

    try {
        const TrainConfig cfg = resolve_config(g);
        if (*synth) return cmd_synth(cfg, out, frames);
        if (*project) {
            if (!labels.empty()) src.labels = labels;
            if (image.empty() != proj.empty()) {
                throw Error(ErrorCode::Config, "--image and --proj must be given together");
            }
            if (!image.empty()) {
                src.image = image;
                src.projection = proj;
            }
            return cmd_project(cfg, src, out);
        }
        if (*angles) return cmd_angles(cfg, src.cloud, out, k);
        if (*train_cmd) return cmd_train(cfg, out_dir);
        EvalData ev(cfg);
        if (*eval) return cmd_eval(ev, checkpoints, split, out);
        if (*ablation) return cmd_ablation(ev, checkpoints, split, out, table);
        if (*histogram) return cmd_histogram(ev, checkpoint, split, out, bins);
        if (*heatmap) return cmd_heatmap(ev, checkpoint, split, out);
        if (*render) return cmd_render(ev, checkpoint, split, index, out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(ErrorCode::Io);
    }
    return 0;
}
