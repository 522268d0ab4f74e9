#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "sdnet/checkpoint.hpp"
#include "sdnet/cli.hpp"
#include "sdnet/config.hpp"

using namespace sdnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("sdnet_cli_" + std::to_string(Rng(std::random_device{}()).next()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

const char* kTinyConfig = R"({
  "arch": {"family": "unet", "depth": 2, "base_width": 2, "sd_scales": [1],
           "sdn": {"state_size": 3, "directions": ["LR", "UD"], "residual": true},
           "in_channels": 1, "out_classes": 2},
  "train": {"learning_rate": 1e-3, "batch_size": 4, "max_epochs": 3, "patience": 2,
            "seed": 1, "runs": 1},
  "data": {"task": "stripe", "n_train": 8, "n_val": 3, "n_test": 3,
           "height": 16, "width": 16, "seed": 5}
})";

std::string write_config(const TempDir& tmp, const std::string& text) {
    const std::string path = tmp.file("config.json");
    std::ofstream out(path);
    out << text;
    return path;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config schema: defaults, round trip, strict unknown-key rejection") {
    const RunConfig cfg = parse_run_config(kTinyConfig);
    CHECK(cfg.arch.depth == 2);
    CHECK(cfg.arch.sdn.state_size == 3);
    CHECK(cfg.train.max_epochs == 3);
    CHECK(cfg.data.n_train == 8);

    const RunConfig again = parse_run_config(run_config_to_json(cfg));
    CHECK(run_config_to_json(again) == run_config_to_json(cfg));

    CHECK_THROWS_AS(parse_run_config(R"({"arc": {}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"arch": {"depht": 3}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"arch": {"sdn": {"statesize": 4}}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"lr": 0.1}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"data": {"task": "stripe", "bogus": 1}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"data": {"manifest": "m.json", "split": {"trian": 0.8}}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"arch": {"sdn": {"directions": ["XY"]}}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("not json"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"data": {"task": "mnist"}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"patience": 300}})"), ConfigError);
}

TEST_CASE("config presets expand inside arch") {
    const RunConfig cfg = parse_run_config(R"({"arch": {"preset": "sdu_net", "base_width": 4}})");
    CHECK(cfg.arch.family == "unet");
    CHECK(cfg.arch.base_width == 4);
    CHECK(cfg.arch.sdn.state_size == 150);
    CHECK(cfg.arch.sd_scales == std::vector<int>{2, 3});
}

TEST_CASE("checkpoint round trip is bit-exact and restores forward outputs") {
    TempDir tmp;
    ArchitectureSpec spec;
    spec.family = "unet";
    spec.depth = 2;
    spec.base_width = 3;
    spec.sd_scales = {1};
    spec.sdn.state_size = 3;
    Network net = build_network(spec, 41);
    const std::string path = tmp.file("net.sdnt");
    save_checkpoint(path, net.params);

    const auto entries = load_checkpoint(path);
    CHECK(entries.size() == net.params.size());
    for (const auto& [name, tensor] : entries) {
        CHECK(net.params.at(name).shape() == tensor.shape());
        CHECK(net.params.at(name).data() == tensor.data());
    }

    Tensor x = Rng(42).uniform_tensor<float>({1, 1, 8, 8}, 0.0f, 1.0f);
    const Tensor y0 = network_forward(nullptr, net, x, false);
    for (auto& e : net.params.entries())
        for (float& v : e.tensor.mutable_data()) v += 0.25f;
    apply_checkpoint(net.params, path);
    const Tensor y1 = network_forward(nullptr, net, x, false);
    CHECK(y0.data() == y1.data());

    // byte-stable: saving the restored store reproduces the same file
    save_checkpoint(tmp.file("net2.sdnt"), net.params);
    CHECK(slurp(path) == slurp(tmp.file("net2.sdnt")));
}

TEST_CASE("checkpoint loader rejects corruption and mismatches") {
    TempDir tmp;
    ParamStore ps;
    ps.add("w", Tensor({2, 2}, {1, 2, 3, 4}));
    const std::string path = tmp.file("p.sdnt");
    save_checkpoint(path, ps);

    std::string bytes = slurp(path);
    bytes[bytes.size() / 2] = static_cast<char>(~bytes[bytes.size() / 2]);
    std::ofstream(tmp.file("corrupt.sdnt"), std::ios::binary) << bytes;
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp.file("corrupt.sdnt")), doctest::Contains("CRC"),
                         DataError);

    std::ofstream(tmp.file("short.sdnt"), std::ios::binary) << "SDNT";
    CHECK_THROWS_AS(load_checkpoint(tmp.file("short.sdnt")), DataError);

    ParamStore other;
    other.add("w", Tensor({3}));
    CHECK_THROWS_AS(apply_checkpoint(other, path), DataError);
    ParamStore missing;
    missing.add("v", Tensor({2, 2}));
    CHECK_THROWS_AS(apply_checkpoint(missing, path), DataError);
}

TEST_CASE("cmd_train writes run-scoped outputs deterministically") {
    TempDir tmp;
    const std::string cfg = write_config(tmp, kTinyConfig);
    CHECK(cmd_train(cfg, tmp.file("out1")) == kExitOk);
    CHECK(cmd_train(cfg, tmp.file("out2")) == kExitOk);
    CHECK(fs::exists(tmp.file("out1/metrics.json")));
    CHECK(fs::exists(tmp.file("out1/run0/curve.csv")));
    CHECK(fs::exists(tmp.file("out1/run0/checkpoint.sdnt")));
    CHECK(slurp(tmp.file("out1/metrics.json")) == slurp(tmp.file("out2/metrics.json")));
    CHECK(slurp(tmp.file("out1/run0/curve.csv")) == slurp(tmp.file("out2/run0/curve.csv")));
    CHECK(slurp(tmp.file("out1/run0/checkpoint.sdnt")) == slurp(tmp.file("out2/run0/checkpoint.sdnt")));

    const std::string csv = slurp(tmp.file("out1/run0/curve.csv"));
    CHECK(csv.rfind("epoch,train_loss,val_dice,val_jaccard\n", 0) == 0);
}

TEST_CASE("failed validation writes nothing") {
    TempDir tmp;
    const std::string cfg = write_config(tmp, R"({"arch": {"family": "alexnet"}})");
    CHECK(cmd_train(cfg, tmp.file("out")) == kExitConfig);
    CHECK_FALSE(fs::exists(tmp.file("out")));

    CHECK(cmd_train(tmp.file("nonexistent.json"), tmp.file("out2")) == kExitConfig);
    CHECK_FALSE(fs::exists(tmp.file("out2")));

    CHECK(cmd_eval(cfg, tmp.file("nope.sdnt"), tmp.file("out3")) == kExitConfig);
    CHECK_FALSE(fs::exists(tmp.file("out3")));
}

TEST_CASE("cmd_eval consumes a trained checkpoint and writes masks") {
    TempDir tmp;
    const std::string cfg = write_config(tmp, kTinyConfig);
    REQUIRE(cmd_train(cfg, tmp.file("train")) == kExitOk);
    CHECK(cmd_eval(cfg, tmp.file("train/run0/checkpoint.sdnt"), tmp.file("eval"), true) == kExitOk);
    CHECK(fs::exists(tmp.file("eval/metrics.json")));
    CHECK(fs::exists(tmp.file("eval/masks/pred0.pgm")));
    CHECK(fs::exists(tmp.file("eval/masks/overlay0.pgm")));

    // a bad checkpoint path is a data error
    CHECK(cmd_eval(cfg, tmp.file("train/missing.sdnt"), tmp.file("eval2")) == kExitData);
}

TEST_CASE("cmd_probe_rf and cmd_count succeed on a tiny config") {
    TempDir tmp;
    const std::string cfg = write_config(tmp, kTinyConfig);
    CHECK(cmd_probe_rf(cfg, "", 8, 8, tmp.file("probe"), 3) == kExitOk);
    CHECK(fs::exists(tmp.file("probe/rf_report.json")));
    CHECK(fs::exists(tmp.file("probe/rf_footprint.pgm")));
    CHECK(cmd_probe_rf(cfg, "", 99, 0, tmp.file("probe2"), 3) == kExitConfig);
    CHECK(cmd_count(cfg) == kExitOk);
}

TEST_CASE("cmd_ablate runs a grid and writes a summary") {
    TempDir tmp;
    const std::string cfg = write_config(tmp, kTinyConfig);
    CHECK(cmd_ablate(cfg, "directions", {"1", "2"}, tmp.file("ab")) == kExitOk);
    CHECK(fs::exists(tmp.file("ab/summary.json")));
    CHECK(fs::exists(tmp.file("ab/directions=1/metrics.json")));
    CHECK(fs::exists(tmp.file("ab/directions=2/metrics.json")));

    CHECK(cmd_ablate(cfg, "channels", {"2", "4"}, tmp.file("ab2")) == kExitOk);
    CHECK(cmd_ablate(cfg, "direction_set", {"LR+RL", "LR+UD"}, tmp.file("ab3")) == kExitOk);
    CHECK(cmd_ablate(cfg, "scales", {"0", "1"}, tmp.file("ab4")) == kExitOk);
    CHECK(cmd_ablate(cfg, "bogus", {"1"}, tmp.file("ab5")) == kExitConfig);
    CHECK_FALSE(fs::exists(tmp.file("ab5")));
}

TEST_CASE("cmd_synth writes a loadable manifest dataset") {
    TempDir tmp;
    CHECK(cmd_synth("stripe", 4, tmp.file("data"), 9, 16, 16) == kExitOk);
    const Dataset back = load_manifest(tmp.file("data/manifest.json"));
    CHECK(back.size() == 4);
    CHECK(back[0].image.shape() == Shape{1, 16, 16});
    CHECK(cmd_synth("voxels", 4, tmp.file("d2")) == kExitConfig);
}

TEST_CASE("run_cli dispatches subcommands and maps exit codes") {
    TempDir tmp;
    const std::string cfg = write_config(tmp, kTinyConfig);
    {
        std::vector<std::string> args{"sdnet", "count", "--config", cfg};
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        CHECK(run_cli(static_cast<int>(argv.size()), argv.data()) == kExitOk);
    }
    {
        std::vector<std::string> args{"sdnet", "count", "--config", tmp.file("none.json")};
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        CHECK(run_cli(static_cast<int>(argv.size()), argv.data()) == kExitConfig);
    }
    {
        std::vector<std::string> args{"sdnet", "bogus-subcommand"};
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        CHECK(run_cli(static_cast<int>(argv.size()), argv.data()) == kExitConfig);
    }
}
