#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "sdnet/ops.hpp"
#include "sdnet/params.hpp"
#include "sdnet/sdn.hpp"

namespace sdnet {

// Declarative description of a U-Net-family segmentation network. Scales run
// from 0 (full resolution) to depth-1 (coarsest); sd_scales lists the scales
// whose blocks append spatial dependency layers after their convolutions.
struct ArchitectureSpec {
    std::string family = "unet";  // "unet" | "unetpp"
    int depth = 4;
    int base_width = 16;
    int width_multiplier = 2;
    int convs_per_block = 2;
    std::vector<int> sd_scales;
    int sd_layers_per_block = 1;
    SdnLayerConfig sdn;
    int in_channels = 1;
    int out_classes = 2;
    bool batchnorm = true;
    bool residual_blocks = false;

    int width(int scale) const {
        int w = base_width;
        for (int i = 0; i < scale; ++i) w *= width_multiplier;
        return w;
    }

    bool sd_at(int scale) const {
        return std::find(sd_scales.begin(), sd_scales.end(), scale) != sd_scales.end();
    }

    void validate() const;
};

struct BlockInfo {
    std::string prefix;
    int scale;
    int in_channels;
};

// Blocks in build/forward order, plus the 1x1 output head appended by callers.
std::vector<BlockInfo> enumerate_blocks(const ArchitectureSpec& spec);

struct Network {
    ArchitectureSpec spec;
    ParamStore params;
};

Network build_network(const ArchitectureSpec& spec, uint64_t seed);

enum class TaskSize { kSmall, kLarge };

// Shipped default configurations: 150 state channels, 3-wide SDN kernels,
// two directions (LR then UD), two convs per block, batchnorm on, SD layers
// on the two deepest scales. Small tasks use two SD layers per equipped
// block, large tasks one SD layer with a residual connection.
ArchitectureSpec presets(const std::string& name, TaskSize task_size = TaskSize::kSmall);

namespace detail {

template <typename T>
TensorT<T> block_forward(TapeT<T>* tape, const ArchitectureSpec& spec, ParamStoreT<T>& ps,
                         const std::string& prefix, int scale, TensorT<T> h, bool training) {
    const int out_ch = spec.width(scale);
    for (int c = 0; c < spec.convs_per_block; ++c) {
        const std::string cp = prefix + ".conv" + std::to_string(c);
        TensorT<T> block_in = h;
        h = conv2d(tape, h, ps.at(cp + ".w"), ps.at(cp + ".b"), Padding::kSame);
        if (spec.batchnorm) {
            const std::string bp = prefix + ".bn" + std::to_string(c);
            h = batchnorm(tape, h, ps.at(bp + ".gamma"), ps.at(bp + ".beta"), ps.at(bp + ".rm"),
                          ps.at(bp + ".rv"), training);
        }
        if (spec.residual_blocks && block_in.dim(block_in.rank() - 3) == out_ch)
            h = add(tape, h, block_in);
        h = relu(tape, h);
    }
    if (spec.sd_at(scale)) {
        for (int l = 0; l < spec.sd_layers_per_block; ++l) {
            auto sp = sdn_params_from_store(ps, prefix + ".sd" + std::to_string(l), spec.sdn);
            h = sdn_forward(tape, h, spec.sdn, sp);
        }
    }
    return h;
}

}  // namespace detail

// Runs the network on [N,C,H,W] input and returns logits [N,out_classes,H,W].
// Rebuilds the compute graph on the given tape (pass nullptr for inference).
// watch_params controls whether trainable parameters are registered as tape
// leaves here; pass false when the caller has already watched them.
template <typename T>
TensorT<T> network_forward(TapeT<T>* tape, const ArchitectureSpec& spec, ParamStoreT<T>& ps,
                           const TensorT<T>& x, bool training, bool watch_params = true) {
    spec.validate();
    require_rank(x, 4, "network_forward");
    if (x.dim(1) != spec.in_channels)
        throw ShapeError("network_forward: input " + shape_str(x.shape()) + " has " +
                         std::to_string(x.dim(1)) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
    const int div = 1 << (spec.depth - 1);
    if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
        throw ConfigError("network_forward: input " + shape_str(x.shape()) +
                          " spatial dims must be divisible by " + std::to_string(div));
    if (tape && watch_params)
        for (auto& e : ps.entries())
            if (e.trainable) tape->watch(e.tensor);

    const int D = spec.depth;
    TensorT<T> cur;
    if (spec.family == "unet") {
        std::vector<TensorT<T>> skip(static_cast<size_t>(D));
        cur = x;
        for (int i = 0; i < D; ++i) {
            if (i > 0) cur = maxpool2(tape, cur);
            cur = detail::block_forward(tape, spec, ps, "enc" + std::to_string(i), i, cur, training);
            skip[static_cast<size_t>(i)] = cur;
        }
        for (int i = D - 2; i >= 0; --i) {
            cur = upsample_nearest2(tape, cur);
            cur = concat_channels(tape, {skip[static_cast<size_t>(i)], cur});
            cur = detail::block_forward(tape, spec, ps, "dec" + std::to_string(i), i, cur, training);
        }
    } else {  // unetpp
        std::vector<std::vector<TensorT<T>>> grid(static_cast<size_t>(D));
        for (int i = 0; i < D; ++i) grid[static_cast<size_t>(i)].resize(static_cast<size_t>(D - i));
        for (int i = 0; i < D; ++i) {
            TensorT<T> in = i == 0 ? x : maxpool2(tape, grid[static_cast<size_t>(i - 1)][0]);
            grid[static_cast<size_t>(i)][0] = detail::block_forward(
                tape, spec, ps, "x" + std::to_string(i) + "_0", i, in, training);
        }
        for (int j = 1; j < D; ++j) {
            for (int i = 0; i + j <= D - 1; ++i) {
                std::vector<TensorT<T>> parts;
                for (int q = 0; q < j; ++q)
                    parts.push_back(grid[static_cast<size_t>(i)][static_cast<size_t>(q)]);
                parts.push_back(upsample_nearest2(tape, grid[static_cast<size_t>(i + 1)][static_cast<size_t>(j - 1)]));
                grid[static_cast<size_t>(i)][static_cast<size_t>(j)] = detail::block_forward(
                    tape, spec, ps, "x" + std::to_string(i) + "_" + std::to_string(j), i,
                    concat_channels(tape, parts), training);
            }
        }
        cur = grid[0][static_cast<size_t>(D - 1)];
    }
    return conv2d(tape, cur, ps.at("head.w"), ps.at("head.b"), Padding::kSame);
}

inline Tensor network_forward(Tape* tape, Network& net, const Tensor& x, bool training,
                              bool watch_params = true) {
    return network_forward<float>(tape, net.spec, net.params, x, training, watch_params);
}

}  // namespace sdnet
