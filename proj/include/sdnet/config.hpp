#pragma once

#include <string>

#include "sdnet/arch.hpp"
#include "sdnet/data.hpp"
#include "sdnet/train.hpp"

namespace sdnet {

// Data source: either a named synthetic task with explicit per-split sample
// counts, or a manifest of PGM pairs split by fractions.
struct DataConfig {
    enum class Kind { kTask, kManifest };
    Kind kind = Kind::kTask;
    std::string task = "stripe";  // "stripe" | "blobs"
    int n_train = 200, n_val = 50, n_test = 50;
    int height = 64, width = 64;
    std::string manifest_path;
    SplitSpec split;
    uint64_t seed = 0;

    void validate() const;
};

struct RunConfig {
    ArchitectureSpec arch;
    TrainConfig train;
    DataConfig data;
};

// Strict parsing: unknown keys are rejected at every level, values are
// type- and range-checked before any work starts.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& config);

DataBundle load_data(const DataConfig& config);

}  // namespace sdnet
