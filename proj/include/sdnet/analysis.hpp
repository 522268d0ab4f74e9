#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sdnet/arch.hpp"
#include "sdnet/gradcheck.hpp"

namespace sdnet {

// |gradient| threshold separating exact zeros (causal masking) from small but
// real dependencies in float32 backpropagation.
constexpr double kFootprintThreshold = 1e-12;

struct ReceptiveFieldReport {
    int probe_row = 0, probe_col = 0;
    int height = 0, width = 0;
    std::vector<uint8_t> footprint;  // row-major H*W, 1 where |d out/d in| > threshold
    int row_min = 0, row_max = 0, col_min = 0, col_max = 0;
    bool full_width = false, full_height = false;

    bool at(int r, int c) const { return footprint[static_cast<size_t>(r) * width + c] != 0; }
    bool empty() const { return row_max < 0; }
    int bbox_rows() const { return empty() ? 0 : row_max - row_min + 1; }
    int bbox_cols() const { return empty() ? 0 : col_max - col_min + 1; }
    std::string to_json() const;
    void write_pgm(const std::string& path) const;
};

// Empirical receptive field: feeds a random input through `forward`, then
// backpropagates from the class-0 logit at the probe pixel and thresholds
// |d out / d in| over all input channels.
using ProbeForwardFn = std::function<Tensor(Tape*, const Tensor&)>;

ReceptiveFieldReport probe_receptive_field_fn(const ProbeForwardFn& forward, const Shape& input_shape,
                                              int probe_row, int probe_col, uint64_t seed);

ReceptiveFieldReport probe_receptive_field(Network& net, const Shape& input_shape, int probe_row,
                                           int probe_col, uint64_t seed);

int64_t count_params(const Network& net);

// Analytic multiply-accumulate counts (batch of one). Batchnorm, activations,
// pooling and upsampling are excluded.
int64_t macs_conv2d(int h, int w, int cin, int cout, int k);
int64_t macs_affine(int h, int w, int cin, int cout);
int64_t macs_sweep_direction(int h, int w, int state_size, int k);
int64_t count_macs(const ArchitectureSpec& spec, int height, int width);

struct GradSuiteResult {
    std::string name;
    double max_rel_err;
    bool pass;
};

// Finite-difference checks over the differentiable surface. Scope is "ops",
// "sdn", "network" or "all"; every check runs over five seeds at tolerance 1e-4.
std::vector<GradSuiteResult> run_gradient_suite(const std::string& scope);

}  // namespace sdnet
