#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lmbis/checkpoint.hpp"
#include "lmbis/dataset.hpp"
#include "lmbis/metrics.hpp"
#include "lmbis/model.hpp"
#include "lmbis/selfcheck.hpp"
#include "lmbis/train.hpp"

namespace fs = std::filesystem;
using namespace lmbis;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Exit codes are a scripting contract: 0 ok, 2 config, 3 data, 4 checkpoint.
enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kCheckpointError = 4 };

struct RunConfig {
    NetworkConfig net;
    TrainConfig train;
    std::string manifest;
    std::string out_dir = "out";
    float threshold = 0.5f;
    int resize = kTargetSize;  // desk-scale runs may train below 512
    bool fov_restrict = true;
};

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto to_int = [&] { return std::stoi(value); };
    const auto to_f = [&] { return std::strtof(value.c_str(), nullptr); };
    const auto to_bool = [&] { return value == "1" || value == "true"; };
    if (key == "input_channels") cfg.net.input_channels = to_int();
    else if (key == "num_classes") cfg.net.num_classes = to_int();
    else if (key == "stage_widths") {
        std::istringstream in(value);
        if (!(in >> cfg.net.stage_widths[0] >> cfg.net.stage_widths[1] >>
              cfg.net.stage_widths[2]))
            throw ConfigError("stage_widths needs three integers, got '" + value + "'");
    } else if (key == "multipath_width") cfg.net.multipath_width = to_int();
    else if (key == "passes") cfg.net.pass_count = to_int();
    else if (key == "multipath") cfg.net.multipath = to_bool();
    else if (key == "parameter_budget") cfg.net.parameter_budget = std::stoll(value);
    else if (key == "net_seed") cfg.net.seed = static_cast<std::uint32_t>(std::stoul(value));
    else if (key == "lr") cfg.train.learning_rate = to_f();
    else if (key == "max_epochs") cfg.train.max_epochs = to_int();
    else if (key == "plateau_patience") cfg.train.plateau_patience = to_int();
    else if (key == "lr_factor") cfg.train.lr_factor = to_f();
    else if (key == "early_stop_patience") cfg.train.early_stop_patience = to_int();
    else if (key == "batch_size") cfg.train.batch_size = to_int();
    else if (key == "train_seed") cfg.train.seed = static_cast<std::uint32_t>(std::stoul(value));
    else if (key == "dice_eps") cfg.train.smoothing_eps = to_f();
    else if (key == "val_fraction") cfg.train.val_fraction = to_f();
    else if (key == "manifest") cfg.manifest = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "threshold") cfg.threshold = to_f();
    else if (key == "resize") cfg.resize = to_int();
    else if (key == "fov_restrict") cfg.fov_restrict = to_bool();
    else throw ConfigError("unknown config key '" + key + "'");
}

void load_config_file(RunConfig& cfg, const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        std::string key, value;
        if (eq != std::string::npos) {
            key = line.substr(0, eq);
            value = line.substr(eq + 1);
        } else if (line.find_first_not_of(" \t\r") != std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected key = value");
        } else {
            continue;
        }
        const auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        apply_key(cfg, trim(key), trim(value));
    }
}

// Flags shared by every subcommand; CLI values override the config file.
struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string data_path;
    int seed = -1;
    float threshold = -1.0f;
    int passes = 0;
    int resize = 0;
    float lr = -1.0f;
    int epochs = 0;
    bool no_multipath = false;
    bool no_bidirectional = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key = value config file");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--data", data_path, "dataset manifest path");
        cmd->add_option("--seed", seed, "seed for both network init and training");
        cmd->add_option("--threshold", threshold, "binarization threshold");
        cmd->add_option("--passes", passes, "forward passes (1 or 2)")
            ->check(CLI::Range(1, 2));
        cmd->add_option("--resize", resize, "working resolution (divisible by 4)");
        cmd->add_option("--lr", lr, "initial learning rate");
        cmd->add_option("--epochs", epochs, "maximum training epochs");
        cmd->add_flag("--no-multipath", no_multipath,
                      "replace the multipath block with a single 3x3 stage");
        cmd->add_flag("--no-bidirectional", no_bidirectional,
                      "disable the reverse-skip refinement pass");
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!config_path.empty()) load_config_file(cfg, config_path);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!data_path.empty()) cfg.manifest = data_path;
        if (seed >= 0) {
            cfg.net.seed = static_cast<std::uint32_t>(seed);
            cfg.train.seed = static_cast<std::uint32_t>(seed);
        }
        if (threshold >= 0.0f) cfg.threshold = threshold;
        if (passes > 0) cfg.net.pass_count = passes;
        if (resize > 0) cfg.resize = resize;
        if (lr >= 0.0f) cfg.train.learning_rate = lr;
        if (epochs > 0) cfg.train.max_epochs = epochs;
        if (no_multipath) cfg.net.multipath = false;
        if (no_bidirectional) cfg.net.pass_count = 1;

        cfg.net.validate();
        cfg.train.validate();
        if (cfg.resize % 4 != 0 || cfg.resize < 8 || cfg.resize > kTargetSize)
            throw ConfigError("resize must be divisible by 4 and within [8, 512]");
        if (!(cfg.threshold >= 0.0f && cfg.threshold <= 1.0f))
            throw ConfigError("threshold must lie in [0,1]");
        return cfg;
    }
};

std::vector<TrainSample> load_split(const DatasetManifest& manifest,
                                    const std::vector<std::string>& ids,
                                    const RunConfig& cfg) {
    std::vector<TrainSample> out;
    out.reserve(ids.size());
    for (const auto& id : ids)
        out.push_back(to_train_sample(load_sample(manifest, id, cfg.fov_restrict),
                                      cfg.net.num_classes, cfg.resize));
    return out;
}

int cmd_train(const CommonFlags& flags) {
    const RunConfig cfg = flags.resolve();
    if (cfg.manifest.empty()) throw ConfigError("train: no dataset manifest given");
    const DatasetManifest manifest = DatasetManifest::load(cfg.manifest);

    const SplitLists split = train_val_split(manifest, cfg.train.val_fraction);

    std::vector<TrainSample> train_set;
    for (const auto& id : split.train) {
        const Sample base = load_sample(manifest, id, cfg.fov_restrict);
        for (int v = 0; v < kAugmentCount; ++v)
            train_set.push_back(
                to_train_sample(augment_variant(base, v), cfg.net.num_classes, cfg.resize));
    }
    const std::vector<TrainSample> val_set = load_split(manifest, split.val, cfg);

    Model model = build_network(cfg.net);
    AdamState optimizer;
    const TrainResult result = train(model, train_set, val_set, cfg.train, &optimizer);

    fs::create_directories(cfg.out_dir);
    Checkpoint cp;
    cp.model = std::move(model);
    cp.train_cfg = cfg.train;
    cp.history = result.history;
    save_checkpoint(fs::path(cfg.out_dir) / "checkpoint.lmbs", cp);

    std::ofstream hist(fs::path(cfg.out_dir) / "history.txt", std::ios::trunc);
    hist << "epoch train_loss val_dice lr\n";
    for (std::size_t e = 0; e < result.history.size(); ++e) {
        char line[128];
        std::snprintf(line, sizeof(line), "%zu %.6f %.6f %.6g\n", e + 1,
                      result.history[e].train_loss, result.history[e].val_dice,
                      result.history[e].lr);
        hist << line;
    }

    std::cout << "trained " << result.history.size() << " epochs"
              << (result.early_stopped ? " (early stop)" : "") << ", final val dice "
              << (result.history.empty() ? 0.0f : result.history.back().val_dice) << "\n"
              << "checkpoint: " << (fs::path(cfg.out_dir) / "checkpoint.lmbs").string()
              << "\n";
    return kOk;
}

int cmd_evaluate(const CommonFlags& flags, const std::string& checkpoint_path,
                 bool overlays) {
    const Checkpoint cp = load_checkpoint(checkpoint_path);
    RunConfig cfg;
    if (!flags.config_path.empty() || flags.seed >= 0 || flags.passes > 0 ||
        flags.no_multipath || flags.no_bidirectional || flags.lr >= 0.0f ||
        flags.epochs > 0) {
        cfg = flags.resolve();
        if (config_digest(cfg.net, cfg.train) != cp.digest)
            throw CheckpointError("checkpoint digest does not match the given config");
    } else {
        cfg.net = cp.model.config;
        cfg.train = cp.train_cfg;
        if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
        if (!flags.data_path.empty()) cfg.manifest = flags.data_path;
        if (flags.threshold >= 0.0f) cfg.threshold = flags.threshold;
        if (flags.resize > 0) cfg.resize = flags.resize;
    }
    if (cfg.manifest.empty()) throw ConfigError("evaluate: no dataset manifest given");

    const DatasetManifest manifest = DatasetManifest::load(cfg.manifest);
    if (manifest.test_ids.empty())
        throw DataError("evaluate: manifest " + cfg.manifest + " has an empty test split");

    Model model = cp.model;
    fs::create_directories(fs::path(cfg.out_dir) / "per_image");

    std::vector<NamedReport> rows;
    ConfusionCounts aggregate;
    for (const auto& id : manifest.test_ids) {
        const Sample sample = load_sample(manifest, id, cfg.fov_restrict);
        const TrainSample ts = to_train_sample(sample, cfg.net.num_classes, cfg.resize);
        const Tensor prob = forward(model, ts.image, model.config.pass_count, BNMode::infer);

        Mask gt(ts.image.height(), ts.image.width());
        Mask fov(ts.image.height(), ts.image.width());
        for (int y = 0; y < gt.height; ++y) {
            for (int x = 0; x < gt.width; ++x) {
                gt.at(y, x) = ts.gt_onehot.at(0, kVesselChannel, y, x) != 0.0f ? 1 : 0;
                fov.at(y, x) = ts.fov.at(0, 0, y, x) != 0.0f ? 1 : 0;
            }
        }

        const Mask pred = binarize(prob, cfg.threshold);
        const ConfusionCounts counts = confusion(pred, gt, fov);
        aggregate += counts;

        MetricsReport report = compute_metrics(counts);
        report.roc_auc = roc_auc(prob, gt, fov);
        if (!report.roc_auc)
            std::cerr << "note: ROC AUC undefined for image " << id
                      << " (single-class ground truth); skipped\n";
        write_metrics_kv(fs::path(cfg.out_dir) / "per_image" / (id + ".kv"), report);
        rows.push_back({id, report});

        if (overlays)
            write_png(fs::path(cfg.out_dir) / ("overlay_" + id + ".png"),
                      render_overlay(pred, gt, fov));
    }

    MetricsReport total = compute_metrics(aggregate);
    double roc_sum = 0.0;
    int roc_n = 0;
    for (const auto& row : rows)
        if (row.report.roc_auc) {
            roc_sum += *row.report.roc_auc;
            ++roc_n;
        }
    if (roc_n > 0) total.roc_auc = roc_sum / roc_n;
    rows.push_back({"aggregate", total});

    write_metrics_kv(fs::path(cfg.out_dir) / "metrics.kv", total);
    const std::string table = metrics_table(rows);
    std::ofstream(fs::path(cfg.out_dir) / "metrics.txt", std::ios::trunc) << table;
    std::cout << table;
    return kOk;
}

int cmd_predict(const CommonFlags& flags, const std::string& checkpoint_path,
                const std::string& image_path) {
    const Checkpoint cp = load_checkpoint(checkpoint_path);
    RunConfig cfg;
    cfg.net = cp.model.config;
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (flags.threshold >= 0.0f) cfg.threshold = flags.threshold;
    if (flags.resize > 0) cfg.resize = flags.resize;

    ImageU8 raw;
    try {
        raw = decode_image(image_path);
    } catch (const IoError& e) {
        throw DataError(e.what());
    }
    const Tensor image = resize_bilinear(image_to_tensor(raw), cfg.resize, cfg.resize);

    Model model = cp.model;
    const Tensor prob = forward(model, image, model.config.pass_count, BNMode::infer);

    fs::create_directories(cfg.out_dir);
    write_png(fs::path(cfg.out_dir) / "prob.png", tensor_channel_to_gray(prob, kVesselChannel));
    write_png(fs::path(cfg.out_dir) / "mask.png",
              mask_to_image(binarize(prob, cfg.threshold)));
    std::cout << "wrote " << (fs::path(cfg.out_dir) / "prob.png").string() << " and mask.png\n";
    return kOk;
}

int cmd_overlay(const std::string& pred_path, const std::string& gt_path,
                const std::string& fov_path, const std::string& out_path) {
    try {
        const Mask pred = mask_from_image(decode_image(pred_path));
        const Mask gt = mask_from_image(decode_image(gt_path));
        Mask fov;
        if (!fov_path.empty()) {
            fov = mask_from_image(decode_image(fov_path));
        } else {
            fov = Mask(pred.height, pred.width);
            std::fill(fov.v.begin(), fov.v.end(), 1);
        }
        write_png(out_path, render_overlay(pred, gt, fov));
    } catch (const IoError& e) {
        throw DataError(e.what());
    } catch (const ShapeError& e) {
        throw DataError(e.what());
    }
    std::cout << "wrote " << out_path << "\n";
    return kOk;
}

int cmd_params(const CommonFlags& flags) {
    const RunConfig cfg = flags.resolve();
    const Model model = build_network(cfg.net);
    const std::int64_t total = count_parameters(model);
    const std::int64_t expected = expected_parameter_count(cfg.net);

    std::printf("%-24s %10s\n", "layer", "params");
    for (const auto& row : per_layer_counts(model))
        std::printf("%-24s %10lld\n", row.name.c_str(), static_cast<long long>(row.count));
    std::printf("%-24s %10lld\n", "total", static_cast<long long>(total));
    if (total != expected) {
        std::cerr << "error: tensor count " << total << " != closed-form count " << expected
                  << "\n";
        return kFailure;
    }
    return kOk;
}

int cmd_gradcheck(int kernel_seeds, int e2e_seeds) {
    const auto items = run_self_check({kernel_seeds, e2e_seeds});
    bool all_pass = true;
    for (const auto& item : items) {
        std::printf("%-18s max_rel_err %.3e  (threshold %.0e, %d seeds)  %s\n",
                    item.name.c_str(), item.max_err, item.threshold, item.seeds,
                    item.pass() ? "PASS" : "FAIL");
        all_pass = all_pass && item.pass();
    }
    return all_pass ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lightweight multipath bidirectional-skip vessel segmentation"};
    app.require_subcommand(1);

    CommonFlags train_flags, eval_flags, predict_flags, params_flags;
    std::string checkpoint_path, image_path;
    std::string pred_path, gt_path, fov_path, overlay_out;
    bool overlays = false;
    int kernel_seeds = 20, e2e_seeds = 3;

    auto* train_cmd = app.add_subcommand("train", "train on a dataset manifest");
    train_flags.attach(train_cmd);

    auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a test split");
    eval_flags.attach(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    eval_cmd->add_flag("--overlays", overlays, "write per-image overlay images");

    auto* predict_cmd = app.add_subcommand("predict", "segment a single image");
    predict_flags.attach(predict_cmd);
    predict_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    predict_cmd->add_option("--image", image_path, "input image")->required();

    auto* overlay_cmd = app.add_subcommand("overlay", "render TP/FP/FN overlay");
    overlay_cmd->add_option("--pred", pred_path, "predicted mask image")->required();
    overlay_cmd->add_option("--gt", gt_path, "ground-truth mask image")->required();
    overlay_cmd->add_option("--fov", fov_path, "FOV mask image");
    overlay_cmd->add_option("--out", overlay_out, "output PNG")->required();

    auto* params_cmd = app.add_subcommand("params", "report trainable parameter counts");
    params_flags.attach(params_cmd);

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference self check");
    gradcheck_cmd->add_option("--kernel-seeds", kernel_seeds, "seeds per kernel check");
    gradcheck_cmd->add_option("--e2e-seeds", e2e_seeds, "seeds for the end-to-end check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kConfigError;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(train_flags);
        if (eval_cmd->parsed()) return cmd_evaluate(eval_flags, checkpoint_path, overlays);
        if (predict_cmd->parsed()) return cmd_predict(predict_flags, checkpoint_path, image_path);
        if (overlay_cmd->parsed()) return cmd_overlay(pred_path, gt_path, fov_path, overlay_out);
        if (params_cmd->parsed()) return cmd_params(params_flags);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(kernel_seeds, e2e_seeds);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kCheckpointError;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const IoError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kConfigError;
}
