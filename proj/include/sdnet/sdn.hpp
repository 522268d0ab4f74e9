#pragma once

#include <string>
#include <vector>

#include "sdnet/ops.hpp"
#include "sdnet/params.hpp"

namespace sdnet {

// A spatial dependency layer runs three stages: a pixelwise affine projection
// into a state space of C_s channels, a sequence of directional gated
// recurrent sweeps over that state, and a pixelwise affine projection back to
// the input channel count (optionally with a residual connection).

enum class Direction { kLR, kRL, kUD, kDU };

inline const char* direction_name(Direction d) {
    switch (d) {
        case Direction::kLR: return "LR";
        case Direction::kRL: return "RL";
        case Direction::kUD: return "UD";
        case Direction::kDU: return "DU";
    }
    return "?";
}

inline Direction parse_direction(const std::string& s) {
    if (s == "LR") return Direction::kLR;
    if (s == "RL") return Direction::kRL;
    if (s == "UD") return Direction::kUD;
    if (s == "DU") return Direction::kDU;
    throw ConfigError("unknown direction '" + s + "' (expected LR, RL, UD or DU)");
}

struct SdnLayerConfig {
    int state_size = 150;
    std::vector<Direction> directions{Direction::kLR, Direction::kUD};
    int kernel_width = 3;
    bool residual = false;

    void validate() const {
        if (state_size < 1) throw ConfigError("sdn: state_size must be >= 1");
        if (kernel_width < 1 || kernel_width % 2 == 0)
            throw ConfigError("sdn: kernel_width must be odd and positive, got " +
                              std::to_string(kernel_width));
        if (directions.empty()) throw ConfigError("sdn: directions must be nonempty");
        for (size_t i = 0; i < directions.size(); ++i)
            for (size_t j = i + 1; j < directions.size(); ++j)
                if (directions[i] == directions[j])
                    throw ConfigError(std::string("sdn: duplicate direction ") +
                                      direction_name(directions[i]));
    }
};

// Gate parameters of one sweep direction. K_* act on the previous state
// column/row, L_* on the incoming feature column/row; all are width-k 1-D
// convolution kernels along the axis orthogonal to the sweep.
template <typename T>
struct SdnDirectionParamsT {
    TensorT<T> Kz, Kr, Kc;
    TensorT<T> Lz, Lr, Lc;
    TensorT<T> bz, br, bc;
};

template <typename T>
struct SdnLayerParamsT {
    TensorT<T> W_in, b_in;
    std::vector<SdnDirectionParamsT<T>> dirs;  // one entry per configured direction
    TensorT<T> W_out, b_out;
};

using SdnDirectionParams = SdnDirectionParamsT<float>;
using SdnLayerParams = SdnLayerParamsT<float>;

// Fresh parameters: weights uniform(-s, s) with s = 1/sqrt(fan_in); biases
// zero except the update-gate bias b_z, which starts at +1 so the gate is
// open and the layer is alive at initialization.
inline SdnLayerParams init_sdn_params(const SdnLayerConfig& config, int in_channels, Rng& rng) {
    config.validate();
    const int cs = config.state_size, k = config.kernel_width;
    SdnLayerParams p;
    auto uniform_fan = [&rng](Shape shape, int fan_in) {
        const float s = 1.0f / std::sqrt(static_cast<float>(fan_in));
        return rng.uniform_tensor<float>(std::move(shape), -s, s);
    };
    p.W_in = uniform_fan({in_channels, cs}, in_channels);
    p.b_in = Tensor::zeros({cs});
    for (size_t d = 0; d < config.directions.size(); ++d) {
        SdnDirectionParams dp;
        dp.Kz = uniform_fan({cs, cs, k}, cs * k);
        dp.Kr = uniform_fan({cs, cs, k}, cs * k);
        dp.Kc = uniform_fan({cs, cs, k}, cs * k);
        dp.Lz = uniform_fan({cs, cs, k}, cs * k);
        dp.Lr = uniform_fan({cs, cs, k}, cs * k);
        dp.Lc = uniform_fan({cs, cs, k}, cs * k);
        dp.bz = Tensor::full({cs}, 1.0f);
        dp.br = Tensor::zeros({cs});
        dp.bc = Tensor::zeros({cs});
        p.dirs.push_back(std::move(dp));
    }
    p.W_out = uniform_fan({cs, in_channels}, cs);
    p.b_out = Tensor::zeros({in_channels});
    return p;
}

// Registers a layer's parameters under `prefix` ("<prefix>.Win", ".dir0.Kz", ...).
inline void register_sdn_params(ParamStore& store, const std::string& prefix,
                                const SdnLayerConfig& config, SdnLayerParams params) {
    store.add(prefix + ".Win", std::move(params.W_in));
    store.add(prefix + ".bin", std::move(params.b_in));
    for (size_t d = 0; d < config.directions.size(); ++d) {
        const std::string dp = prefix + ".dir" + std::to_string(d) + ".";
        auto& src = params.dirs[d];
        store.add(dp + "Kz", std::move(src.Kz));
        store.add(dp + "Kr", std::move(src.Kr));
        store.add(dp + "Kc", std::move(src.Kc));
        store.add(dp + "Lz", std::move(src.Lz));
        store.add(dp + "Lr", std::move(src.Lr));
        store.add(dp + "Lc", std::move(src.Lc));
        store.add(dp + "bz", std::move(src.bz));
        store.add(dp + "br", std::move(src.br));
        store.add(dp + "bc", std::move(src.bc));
    }
    store.add(prefix + ".Wout", std::move(params.W_out));
    store.add(prefix + ".bout", std::move(params.b_out));
}

// Fetches a layer's parameters back out of a store. Tensors share storage
// with the store, including tape node ids set by watch().
template <typename T>
SdnLayerParamsT<T> sdn_params_from_store(ParamStoreT<T>& store, const std::string& prefix,
                                         const SdnLayerConfig& config) {
    SdnLayerParamsT<T> p;
    p.W_in = store.at(prefix + ".Win");
    p.b_in = store.at(prefix + ".bin");
    for (size_t d = 0; d < config.directions.size(); ++d) {
        const std::string dp = prefix + ".dir" + std::to_string(d) + ".";
        SdnDirectionParamsT<T> e;
        e.Kz = store.at(dp + "Kz");
        e.Kr = store.at(dp + "Kr");
        e.Kc = store.at(dp + "Kc");
        e.Lz = store.at(dp + "Lz");
        e.Lr = store.at(dp + "Lr");
        e.Lc = store.at(dp + "Lc");
        e.bz = store.at(dp + "bz");
        e.br = store.at(dp + "br");
        e.bc = store.at(dp + "bc");
        p.dirs.push_back(std::move(e));
    }
    p.W_out = store.at(prefix + ".Wout");
    p.b_out = store.at(prefix + ".bout");
    return p;
}

template <typename T>
TensorT<T> project_in(TapeT<T>* tape, const TensorT<T>& x, const SdnLayerParamsT<T>& params) {
    return affine_pointwise(tape, x, params.W_in, params.b_in);
}

template <typename T>
TensorT<T> project_out(TapeT<T>* tape, const TensorT<T>& u, const SdnLayerParamsT<T>& params) {
    return affine_pointwise(tape, u, params.W_out, params.b_out);
}

// One directional gated sweep. For LR the feature map is consumed column by
// column; each step applies GRU-style gates where both the state-to-state and
// input-to-state transitions are 1-D convolutions along the column:
//   r = sigmoid(Kr*h + Lr*u + br)
//   z = sigmoid(Kz*h + Lz*u + bz)
//   c = tanh(Kc*(r.h) + Lc*u + bc)
//   h' = (1-z).h + z.c
// with h(-1) = 0. RL mirrors the column order; UD/DU iterate rows with the
// convolutions running horizontally.
template <typename T>
TensorT<T> sweep(TapeT<T>* tape, const TensorT<T>& u, Direction dir,
                 const SdnDirectionParamsT<T>& p) {
    const auto d = detail::dims3(u, "sweep");
    const bool column_wise = dir == Direction::kLR || dir == Direction::kRL;
    const int steps = column_wise ? d.w : d.h;
    const bool forward_order = dir == Direction::kLR || dir == Direction::kUD;

    const TensorT<T> empty_bias;
    TensorT<T> h = column_wise
                       ? TensorT<T>(detail::with_batch(d.batched, d.n, {d.c, d.h}))
                       : TensorT<T>(detail::with_batch(d.batched, d.n, {d.c, d.w}));  // zeros
    std::vector<TensorT<T>> slices(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const int pos = forward_order ? i : steps - 1 - i;
        TensorT<T> ux = column_wise ? take_col(tape, u, pos) : take_row(tape, u, pos);
        TensorT<T> r = sigmoid(tape, add(tape, conv1d_axis(tape, h, p.Kr, empty_bias),
                                         conv1d_axis(tape, ux, p.Lr, p.br)));
        TensorT<T> z = sigmoid(tape, add(tape, conv1d_axis(tape, h, p.Kz, empty_bias),
                                         conv1d_axis(tape, ux, p.Lz, p.bz)));
        TensorT<T> c = tanh_op(tape, add(tape, conv1d_axis(tape, mul(tape, r, h), p.Kc, empty_bias),
                                         conv1d_axis(tape, ux, p.Lc, p.bc)));
        h = add(tape, mul(tape, one_minus(tape, z), h), mul(tape, z, c));
        slices[static_cast<size_t>(pos)] = h;
    }
    return column_wise ? stack_cols(tape, slices) : stack_rows(tape, slices);
}

// Applies the configured sweeps sequentially: the output of sweep i feeds
// sweep i+1. Each direction owns its parameters.
template <typename T>
TensorT<T> correction(TapeT<T>* tape, const TensorT<T>& u, const SdnLayerConfig& config,
                      const SdnLayerParamsT<T>& params) {
    config.validate();
    if (params.dirs.size() != config.directions.size())
        throw ContractError("correction: " + std::to_string(params.dirs.size()) +
                            " direction parameter sets for " +
                            std::to_string(config.directions.size()) + " directions");
    TensorT<T> h = u;
    for (size_t i = 0; i < config.directions.size(); ++i)
        h = sweep(tape, h, config.directions[i], params.dirs[i]);
    return h;
}

template <typename T>
TensorT<T> sdn_forward(TapeT<T>* tape, const TensorT<T>& x, const SdnLayerConfig& config,
                       const SdnLayerParamsT<T>& params) {
    TensorT<T> u = project_in(tape, x, params);
    u = correction(tape, u, config, params);
    u = project_out(tape, u, params);
    if (config.residual) u = add(tape, u, x);
    return u;
}

}  // namespace sdnet
