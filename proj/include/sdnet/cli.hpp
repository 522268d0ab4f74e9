#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sdnet {

// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int cmd_train(const std::string& config_path, const std::string& out_dir, int runs_override = 0,
              int64_t seed_override = -1);
int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
             const std::string& out_dir, bool write_masks = false);
int cmd_probe_rf(const std::string& config_path, const std::string& checkpoint_path, int probe_row,
                 int probe_col, const std::string& out_dir, uint64_t seed = 1);
int cmd_count(const std::string& config_path);
int cmd_gradcheck(const std::string& scope);
int cmd_ablate(const std::string& config_path, const std::string& axis,
               const std::vector<std::string>& values, const std::string& out_dir);
int cmd_synth(const std::string& task, int n, const std::string& out_dir, uint64_t seed = 0,
              int height = 64, int width = 64);

int run_cli(int argc, char** argv);

}  // namespace sdnet
