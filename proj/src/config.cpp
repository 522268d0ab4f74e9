#include "sdnet/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace sdnet {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be a JSON object");
    for (const auto& kv : j.items())
        if (!allowed.count(kv.key()))
            throw ConfigError("config: unknown key '" + kv.key() + "' in " + where);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value for '" + key + "'");
    }
}

SdnLayerConfig parse_sdn(const json& j) {
    reject_unknown(j, {"state_size", "directions", "kernel_width", "residual"}, "arch.sdn");
    SdnLayerConfig cfg;
    cfg.state_size = get_or(j, "state_size", cfg.state_size);
    cfg.kernel_width = get_or(j, "kernel_width", cfg.kernel_width);
    cfg.residual = get_or(j, "residual", cfg.residual);
    if (j.contains("directions")) {
        cfg.directions.clear();
        if (!j.at("directions").is_array())
            throw ConfigError("config: arch.sdn.directions must be an array");
        for (const auto& d : j.at("directions"))
            cfg.directions.push_back(parse_direction(d.get<std::string>()));
    }
    return cfg;
}

ArchitectureSpec parse_arch(const json& j) {
    reject_unknown(j,
                   {"family", "depth", "base_width", "width_multiplier", "convs_per_block",
                    "sd_scales", "sd_layers_per_block", "sdn", "in_channels", "out_classes",
                    "batchnorm", "residual_blocks", "preset"},
                   "arch");
    ArchitectureSpec spec;
    if (j.contains("preset"))
        spec = presets(j.at("preset").get<std::string>());
    spec.family = get_or<std::string>(j, "family", spec.family);
    spec.depth = get_or(j, "depth", spec.depth);
    spec.base_width = get_or(j, "base_width", spec.base_width);
    spec.width_multiplier = get_or(j, "width_multiplier", spec.width_multiplier);
    spec.convs_per_block = get_or(j, "convs_per_block", spec.convs_per_block);
    spec.sd_layers_per_block = get_or(j, "sd_layers_per_block", spec.sd_layers_per_block);
    spec.in_channels = get_or(j, "in_channels", spec.in_channels);
    spec.out_classes = get_or(j, "out_classes", spec.out_classes);
    spec.batchnorm = get_or(j, "batchnorm", spec.batchnorm);
    spec.residual_blocks = get_or(j, "residual_blocks", spec.residual_blocks);
    if (j.contains("sd_scales")) spec.sd_scales = j.at("sd_scales").get<std::vector<int>>();
    if (j.contains("sdn")) spec.sdn = parse_sdn(j.at("sdn"));
    spec.validate();
    return spec;
}

TrainConfig parse_train(const json& j) {
    reject_unknown(j, {"learning_rate", "batch_size", "max_epochs", "patience", "seed", "runs"},
                   "train");
    TrainConfig cfg;
    cfg.learning_rate = get_or(j, "learning_rate", cfg.learning_rate);
    cfg.batch_size = get_or(j, "batch_size", cfg.batch_size);
    cfg.max_epochs = get_or(j, "max_epochs", cfg.max_epochs);
    cfg.patience = get_or(j, "patience", cfg.patience);
    cfg.seed = get_or(j, "seed", cfg.seed);
    cfg.runs = get_or(j, "runs", cfg.runs);
    cfg.validate();
    return cfg;
}

DataConfig parse_data(const json& j) {
    DataConfig cfg;
    if (j.contains("manifest")) {
        reject_unknown(j, {"manifest", "split", "seed"}, "data");
        cfg.kind = DataConfig::Kind::kManifest;
        cfg.manifest_path = j.at("manifest").get<std::string>();
        if (j.contains("split")) {
            const json& s = j.at("split");
            reject_unknown(s, {"train", "val", "test", "group_aware"}, "data.split");
            cfg.split.train = get_or(s, "train", cfg.split.train);
            cfg.split.val = get_or(s, "val", cfg.split.val);
            cfg.split.test = get_or(s, "test", cfg.split.test);
            cfg.split.group_aware = get_or(s, "group_aware", cfg.split.group_aware);
        }
    } else {
        reject_unknown(j, {"task", "n_train", "n_val", "n_test", "height", "width", "seed"}, "data");
        cfg.kind = DataConfig::Kind::kTask;
        cfg.task = get_or<std::string>(j, "task", cfg.task);
        cfg.n_train = get_or(j, "n_train", cfg.n_train);
        cfg.n_val = get_or(j, "n_val", cfg.n_val);
        cfg.n_test = get_or(j, "n_test", cfg.n_test);
        cfg.height = get_or(j, "height", cfg.height);
        cfg.width = get_or(j, "width", cfg.width);
    }
    cfg.seed = get_or(j, "seed", cfg.seed);
    cfg.validate();
    return cfg;
}

}  // namespace

void DataConfig::validate() const {
    if (kind == Kind::kTask) {
        if (task != "stripe" && task != "blobs")
            throw ConfigError("config: unknown task '" + task + "' (expected stripe or blobs)");
        if (n_train < 1 || n_val < 1 || n_test < 1)
            throw ConfigError("config: data sample counts must be >= 1");
        if (height < 16 || width < 16) throw ConfigError("config: task images must be >= 16x16");
    } else {
        if (manifest_path.empty()) throw ConfigError("config: empty manifest path");
        split.validate();
    }
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    reject_unknown(j, {"arch", "train", "data"}, "top level");
    RunConfig cfg;
    if (j.contains("arch")) cfg.arch = parse_arch(j.at("arch"));
    if (j.contains("train")) cfg.train = parse_train(j.at("train"));
    if (j.contains("data")) cfg.data = parse_data(j.at("data"));
    cfg.arch.validate();
    cfg.train.validate();
    cfg.data.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    return parse_run_config(std::string(std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()));
}

std::string run_config_to_json(const RunConfig& config) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json arch;
    arch["family"] = config.arch.family;
    arch["depth"] = config.arch.depth;
    arch["base_width"] = config.arch.base_width;
    arch["width_multiplier"] = config.arch.width_multiplier;
    arch["convs_per_block"] = config.arch.convs_per_block;
    arch["sd_scales"] = config.arch.sd_scales;
    arch["sd_layers_per_block"] = config.arch.sd_layers_per_block;
    nlohmann::ordered_json sdn;
    sdn["state_size"] = config.arch.sdn.state_size;
    std::vector<std::string> dirs;
    for (Direction d : config.arch.sdn.directions) dirs.push_back(direction_name(d));
    sdn["directions"] = dirs;
    sdn["kernel_width"] = config.arch.sdn.kernel_width;
    sdn["residual"] = config.arch.sdn.residual;
    arch["sdn"] = sdn;
    arch["in_channels"] = config.arch.in_channels;
    arch["out_classes"] = config.arch.out_classes;
    arch["batchnorm"] = config.arch.batchnorm;
    arch["residual_blocks"] = config.arch.residual_blocks;
    j["arch"] = arch;

    nlohmann::ordered_json train;
    train["learning_rate"] = config.train.learning_rate;
    train["batch_size"] = config.train.batch_size;
    train["max_epochs"] = config.train.max_epochs;
    train["patience"] = config.train.patience;
    train["seed"] = config.train.seed;
    train["runs"] = config.train.runs;
    j["train"] = train;

    nlohmann::ordered_json data;
    if (config.data.kind == DataConfig::Kind::kTask) {
        data["task"] = config.data.task;
        data["n_train"] = config.data.n_train;
        data["n_val"] = config.data.n_val;
        data["n_test"] = config.data.n_test;
        data["height"] = config.data.height;
        data["width"] = config.data.width;
    } else {
        data["manifest"] = config.data.manifest_path;
        data["split"] = {{"train", config.data.split.train},
                         {"val", config.data.split.val},
                         {"test", config.data.split.test},
                         {"group_aware", config.data.split.group_aware}};
    }
    data["seed"] = config.data.seed;
    j["data"] = data;
    return j.dump(2) + "\n";
}

DataBundle load_data(const DataConfig& config) {
    config.validate();
    DataBundle bundle;
    if (config.kind == DataConfig::Kind::kTask) {
        const int total = config.n_train + config.n_val + config.n_test;
        Dataset all = config.task == "stripe"
                          ? gen_stripe_task(total, config.height, config.width, config.seed)
                          : gen_blob_task(total, config.height, config.width, config.seed);
        bundle.train.assign(all.begin(), all.begin() + config.n_train);
        bundle.val.assign(all.begin() + config.n_train, all.begin() + config.n_train + config.n_val);
        bundle.test.assign(all.begin() + config.n_train + config.n_val, all.end());
    } else {
        Dataset all = load_manifest(config.manifest_path);
        auto parts = split(all, config.split, config.seed);
        bundle.train = std::move(parts[0]);
        bundle.val = std::move(parts[1]);
        bundle.test = std::move(parts[2]);
    }
    return bundle;
}

}  // namespace sdnet
