#include "sdnet/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sdnet/analysis.hpp"
#include "sdnet/checkpoint.hpp"
#include "sdnet/config.hpp"
#include "sdnet/train.hpp"

namespace fs = std::filesystem;

namespace sdnet {

namespace {

template <typename F>
int guard(F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ContractError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << text;
}

void write_curve_csv(const fs::path& path, const std::vector<EpochRow>& curve) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << "epoch,train_loss,val_dice,val_jaccard\n";
    char buf[128];
    for (const auto& row : curve) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", row.epoch, row.train_loss,
                      row.val_dice, row.val_jaccard);
        out << buf;
    }
}

}  // namespace

int cmd_train(const std::string& config_path, const std::string& out_dir, int runs_override,
              int64_t seed_override) {
    return guard([&] {
        RunConfig cfg = load_run_config(config_path);
        if (runs_override > 0) cfg.train.runs = runs_override;
        if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);
        cfg.train.validate();
        const DataBundle data = load_data(cfg.data);

        fs::create_directories(out_dir);
        std::vector<RunResult> details;
        const MetricReport report = run_experiment(cfg.arch, data, cfg.train, 0, &details);

        write_text(fs::path(out_dir) / "config.json", run_config_to_json(cfg));
        write_text(fs::path(out_dir) / "metrics.json", report.to_json());
        for (size_t r = 0; r < details.size(); ++r) {
            const fs::path run_dir = fs::path(out_dir) / ("run" + std::to_string(r));
            fs::create_directories(run_dir);
            write_curve_csv(run_dir / "curve.csv", details[r].curve);
            save_checkpoint((run_dir / "checkpoint.sdnt").string(), details[r].best_params);
        }
        std::cout << report.table();
        return kExitOk;
    });
}

namespace {

void write_eval_masks(const fs::path& dir, const Dataset& test, const ModelForwardFn& forward,
                      ParamStore& params, int batch_size) {
    fs::create_directories(dir);
    size_t pos = 0;
    while (pos < test.size()) {
        const size_t take = std::min(static_cast<size_t>(batch_size), test.size() - pos);
        std::vector<size_t> idx(take);
        for (size_t i = 0; i < take; ++i) idx[i] = pos + i;
        const IntTensor pred = argmax_classes(forward(nullptr, params, batch_images(test, idx), false));
        const int H = pred.dim(1), W = pred.dim(2);
        for (size_t b = 0; b < take; ++b) {
            IntTensor mask({H, W});
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c)
                    mask.mutable_data()[static_cast<size_t>(r) * W + c] =
                        pred.at({static_cast<int>(b), r, c});
            const std::string tag = std::to_string(pos + b);
            save_mask_pgm((dir / ("pred" + tag + ".pgm")).string(), mask, 2);

            // overlay: false positive 64, false negative 128, correct 255
            const IntTensor& gt = test[pos + b].mask;
            std::ofstream out(dir / ("overlay" + tag + ".pgm"), std::ios::binary);
            out << "P5\n" << W << " " << H << "\n255\n";
            std::vector<unsigned char> bytes(static_cast<size_t>(H) * W);
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c) {
                    const int32_t p = mask.at({r, c}), g = gt.at({r, c});
                    unsigned char code = 255;
                    if (p != g) code = g == 0 ? 64 : (p == 0 ? 128 : 64);
                    bytes[static_cast<size_t>(r) * W + c] = code;
                }
            out.write(reinterpret_cast<const char*>(bytes.data()),
                      static_cast<std::streamsize>(bytes.size()));
        }
        pos += take;
    }
}

}  // namespace

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
             const std::string& out_dir, bool write_masks) {
    return guard([&] {
        const RunConfig cfg = load_run_config(config_path);
        const DataBundle data = load_data(cfg.data);
        Network net = build_network(cfg.arch, cfg.train.seed);
        apply_checkpoint(net.params, checkpoint_path);
        ModelForwardFn forward = [&net](Tape* tape, ParamStore& ps, const Tensor& x, bool training) {
            return network_forward<float>(tape, net.spec, ps, x, training);
        };
        const RunMetrics m = evaluate_model(forward, net.params, data.test, cfg.train.batch_size,
                                            cfg.arch.out_classes);
        const MetricReport report = MetricReport::from_runs({m});

        fs::create_directories(out_dir);
        write_text(fs::path(out_dir) / "metrics.json", report.to_json());
        if (write_masks)
            write_eval_masks(fs::path(out_dir) / "masks", data.test, forward, net.params,
                             cfg.train.batch_size);
        std::cout << report.table();
        return kExitOk;
    });
}

int cmd_probe_rf(const std::string& config_path, const std::string& checkpoint_path, int probe_row,
                 int probe_col, const std::string& out_dir, uint64_t seed) {
    return guard([&] {
        const RunConfig cfg = load_run_config(config_path);
        Network net = build_network(cfg.arch, seed);
        if (!checkpoint_path.empty()) apply_checkpoint(net.params, checkpoint_path);
        const ReceptiveFieldReport rep = probe_receptive_field(
            net, {cfg.arch.in_channels, cfg.data.height, cfg.data.width}, probe_row, probe_col, seed);

        fs::create_directories(out_dir);
        write_text(fs::path(out_dir) / "rf_report.json", rep.to_json());
        rep.write_pgm((fs::path(out_dir) / "rf_footprint.pgm").string());
        std::cout << "probe (" << probe_row << "," << probe_col << "): bbox " << rep.bbox_rows()
                  << "x" << rep.bbox_cols() << ", full_width=" << (rep.full_width ? "yes" : "no")
                  << ", full_height=" << (rep.full_height ? "yes" : "no") << "\n";
        return kExitOk;
    });
}

int cmd_count(const std::string& config_path) {
    return guard([&] {
        const RunConfig cfg = load_run_config(config_path);
        const Network net = build_network(cfg.arch, 0);
        nlohmann::ordered_json j;
        j["params"] = count_params(net);
        j["macs"] = count_macs(cfg.arch, cfg.data.height, cfg.data.width);
        std::cout << j.dump(2) << "\n";
        return kExitOk;
    });
}

int cmd_gradcheck(const std::string& scope) {
    return guard([&] {
        const auto results = run_gradient_suite(scope);
        bool all_pass = true;
        for (const auto& r : results) {
            std::printf("%-24s max_rel_err=%.3e %s\n", r.name.c_str(), r.max_rel_err,
                        r.pass ? "PASS" : "FAIL");
            all_pass = all_pass && r.pass;
        }
        if (!all_pass) {
            std::cerr << "gradient checks failed\n";
            return kExitNumeric;
        }
        return kExitOk;
    });
}

namespace {

std::vector<Direction> direction_prefix(int count) {
    // canonical expansion order: cross-axes pair first, then the reverses
    static const std::vector<Direction> kOrder{Direction::kLR, Direction::kUD, Direction::kRL,
                                               Direction::kDU};
    if (count < 1 || count > 4)
        throw ConfigError("ablate: direction count must be in 1..4, got " + std::to_string(count));
    return {kOrder.begin(), kOrder.begin() + count};
}

std::vector<Direction> parse_direction_set(const std::string& text) {
    std::vector<Direction> out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t next = text.find('+', pos);
        if (next == std::string::npos) next = text.size();
        out.push_back(parse_direction(text.substr(pos, next - pos)));
        pos = next + 1;
    }
    if (out.empty()) throw ConfigError("ablate: empty direction set");
    return out;
}

RunConfig apply_axis(RunConfig cfg, const std::string& axis, const std::string& value) {
    if (axis == "scales") {
        const int v = std::stoi(value);
        if (v < 0 || v > cfg.arch.depth)
            throw ConfigError("ablate: scale count " + value + " outside 0..depth");
        cfg.arch.sd_scales.clear();
        for (int s = cfg.arch.depth - v; s < cfg.arch.depth; ++s) cfg.arch.sd_scales.push_back(s);
    } else if (axis == "directions") {
        cfg.arch.sdn.directions = direction_prefix(std::stoi(value));
    } else if (axis == "channels") {
        cfg.arch.sdn.state_size = std::stoi(value);
    } else if (axis == "direction_set") {
        cfg.arch.sdn.directions = parse_direction_set(value);
    } else {
        throw ConfigError("ablate: unknown axis '" + axis +
                          "' (expected scales, directions, channels or direction_set)");
    }
    cfg.arch.validate();
    return cfg;
}

}  // namespace

int cmd_ablate(const std::string& config_path, const std::string& axis,
               const std::vector<std::string>& values, const std::string& out_dir) {
    return guard([&] {
        if (values.empty()) throw ConfigError("ablate: no values given");
        const RunConfig base = load_run_config(config_path);
        const DataBundle data = load_data(base.data);

        // validate the whole grid before any side effects
        std::vector<RunConfig> grid;
        for (const auto& v : values) grid.push_back(apply_axis(base, axis, v));

        fs::create_directories(out_dir);
        nlohmann::ordered_json summary;
        summary["axis"] = axis;
        summary["points"] = nlohmann::ordered_json::array();
        std::cout << "axis=" << axis << "\n";
        for (size_t i = 0; i < grid.size(); ++i) {
            RunConfig cfg = grid[i];
            cfg.train.seed = base.train.seed + 1000 * static_cast<uint64_t>(i);
            const MetricReport report = run_experiment(cfg.arch, data, cfg.train);
            const fs::path point_dir = fs::path(out_dir) / (axis + "=" + values[i]);
            fs::create_directories(point_dir);
            write_text(point_dir / "metrics.json", report.to_json());
            write_text(point_dir / "config.json", run_config_to_json(cfg));
            nlohmann::ordered_json row;
            row["value"] = values[i];
            row["dice_mean"] = report.mean_dice;
            row["dice_sd"] = report.sd_dice;
            row["jaccard_mean"] = report.mean_jaccard;
            row["jaccard_sd"] = report.sd_jaccard;
            nlohmann::ordered_json run_dice = nlohmann::ordered_json::array();
            for (const auto& m : report.per_run) run_dice.push_back(m.dice);
            row["run_dice"] = run_dice;
            summary["points"].push_back(row);
            std::printf("%s=%-8s dice %.2f±%.2f  jaccard %.2f±%.2f\n", axis.c_str(),
                        values[i].c_str(), report.mean_dice * 100, report.sd_dice * 100,
                        report.mean_jaccard * 100, report.sd_jaccard * 100);
        }
        write_text(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
        return kExitOk;
    });
}

int cmd_synth(const std::string& task, int n, const std::string& out_dir, uint64_t seed, int height,
              int width) {
    return guard([&] {
        if (task != "stripe" && task != "blobs")
            throw ConfigError("synth: unknown task '" + task + "'");
        const Dataset data = task == "stripe" ? gen_stripe_task(n, height, width, seed)
                                              : gen_blob_task(n, height, width, seed);
        fs::create_directories(out_dir);
        std::vector<ManifestEntry> entries;
        for (size_t i = 0; i < data.size(); ++i) {
            const std::string img = "img" + std::to_string(i) + ".pgm";
            const std::string msk = "mask" + std::to_string(i) + ".pgm";
            save_pgm((fs::path(out_dir) / img).string(), data[i].image);
            save_mask_pgm((fs::path(out_dir) / msk).string(), data[i].mask, 2);
            entries.push_back({img, msk, data[i].group_id});
        }
        write_manifest((fs::path(out_dir) / "manifest.json").string(), entries);
        std::cout << "wrote " << data.size() << " samples to " << out_dir << "\n";
        return kExitOk;
    });
}

int run_cli(int argc, char** argv) {
    CLI::App app{"spatial-dependency segmentation workbench"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", checkpoint_path, pixel = "0,0";
    std::string scope = "all", axis, values_csv, task = "stripe";
    int runs = 0, n = 100, height = 64, width = 64;
    int64_t seed = -1;
    bool masks = false;

    auto* train = app.add_subcommand("train", "train per config, write metrics/curves/checkpoints");
    train->add_option("--config", config_path, "JSON run config")->required();
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--runs", runs, "override number of runs");
    train->add_option("--seed", seed, "override base seed");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval->add_option("--config", config_path)->required();
    eval->add_option("--checkpoint", checkpoint_path)->required();
    eval->add_option("--out", out_dir);
    eval->add_flag("--masks", masks, "write predicted masks and error overlays");

    auto* probe = app.add_subcommand("probe-rf", "empirical receptive-field probe");
    probe->add_option("--config", config_path)->required();
    probe->add_option("--checkpoint", checkpoint_path);
    probe->add_option("--pixel", pixel, "probe pixel I,J");
    probe->add_option("--out", out_dir);
    probe->add_option("--seed", seed);

    auto* count = app.add_subcommand("count", "parameter and MAC counts for a config");
    count->add_option("--config", config_path)->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--scope", scope, "ops | sdn | network | all");

    auto* ablate = app.add_subcommand("ablate", "grid of experiments along one axis");
    ablate->add_option("--config", config_path)->required();
    ablate->add_option("--axis", axis, "scales | directions | channels | direction_set")->required();
    ablate->add_option("--values", values_csv, "comma-separated grid values")->required();
    ablate->add_option("--out", out_dir);

    auto* synth = app.add_subcommand("synth", "write a synthetic PGM dataset + manifest");
    synth->add_option("--task", task, "stripe | blobs");
    synth->add_option("-n", n, "sample count");
    synth->add_option("--out", out_dir);
    synth->add_option("--seed", seed);
    synth->add_option("--height", height);
    synth->add_option("--width", width);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    if (train->parsed()) return cmd_train(config_path, out_dir, runs, seed);
    if (eval->parsed()) return cmd_eval(config_path, checkpoint_path, out_dir, masks);
    if (probe->parsed()) {
        const size_t comma = pixel.find(',');
        if (comma == std::string::npos) {
            std::cerr << "config error: --pixel expects I,J\n";
            return kExitConfig;
        }
        int pr = 0, pc = 0;
        try {
            pr = std::stoi(pixel.substr(0, comma));
            pc = std::stoi(pixel.substr(comma + 1));
        } catch (const std::exception&) {
            std::cerr << "config error: --pixel expects I,J\n";
            return kExitConfig;
        }
        return cmd_probe_rf(config_path, checkpoint_path, pr, pc, out_dir,
                            seed < 0 ? 1 : static_cast<uint64_t>(seed));
    }
    if (count->parsed()) return cmd_count(config_path);
    if (gradcheck->parsed()) return cmd_gradcheck(scope);
    if (ablate->parsed()) {
        std::vector<std::string> values;
        size_t pos = 0;
        while (pos <= values_csv.size()) {
            size_t next = values_csv.find(',', pos);
            if (next == std::string::npos) next = values_csv.size();
            if (next > pos) values.push_back(values_csv.substr(pos, next - pos));
            pos = next + 1;
        }
        return cmd_ablate(config_path, axis, values, out_dir);
    }
    if (synth->parsed())
        return cmd_synth(task, n, out_dir, seed < 0 ? 0 : static_cast<uint64_t>(seed), height, width);
    return kExitConfig;
}

}  // namespace sdnet
