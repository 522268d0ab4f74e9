#pragma once

#include <array>
#include <string>
#include <vector>

#include "sdnet/tensor.hpp"

namespace sdnet {

// One segmentation sample: image channels in [0,1], integer label map, and a
// group id so splits can be kept at the volume/sequence level.
struct Sample {
    Tensor image;     // [C,H,W]
    IntTensor mask;   // [H,W], values in 0..K-1
    std::string group_id;
};

using Dataset = std::vector<Sample>;

// Long-range dependency task: uniform background noise in [0,0.3], a bright
// length-5 cue at a random row near the left edge, and a ground-truth mask
// covering that entire row. Labeling pixels far from the cue requires a
// receptive field spanning the distance to it.
Dataset gen_stripe_task(int n, int height = 64, int width = 64, uint64_t seed = 0);

// Local-texture control task: one soft-edged ellipse per image, mask = interior.
Dataset gen_blob_task(int n, int height = 64, int width = 64, uint64_t seed = 0);

// Binary PGM ("P5", maxval 255) ingestion, bit-exact on 8-bit data.
Tensor load_pgm(const std::string& path);
void save_pgm(const std::string& path, const Tensor& image);
IntTensor load_mask_pgm(const std::string& path);
void save_mask_pgm(const std::string& path, const IntTensor& mask, int num_classes);

// Clamp to [lo,hi], then min-max rescale to [0,1]; a degenerate range maps to zeros.
Tensor clip_rescale(const Tensor& x, float lo, float hi);

struct SplitSpec {
    double train = 0.8, val = 0.1, test = 0.1;
    bool group_aware = false;
    void validate() const;
};

// Deterministic three-way split with largest-remainder rounding. When
// group_aware is set, samples sharing a group_id always land together.
std::array<Dataset, 3> split(const Dataset& dataset, const SplitSpec& spec, uint64_t seed);

struct ManifestEntry {
    std::string image_path, mask_path, group_id;
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
// Loads PGM pairs listed in a manifest; relative paths resolve against the
// manifest's directory.
Dataset load_manifest(const std::string& path);

}  // namespace sdnet
