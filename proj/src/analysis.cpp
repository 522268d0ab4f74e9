#include "sdnet/analysis.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "sdnet/train.hpp"

namespace sdnet {

std::string ReceptiveFieldReport::to_json() const {
    nlohmann::ordered_json j;
    j["probe_pixel"] = {probe_row, probe_col};
    j["height"] = height;
    j["width"] = width;
    j["bbox"] = {{"row_min", row_min}, {"row_max", row_max}, {"col_min", col_min}, {"col_max", col_max}};
    j["full_width"] = full_width;
    j["full_height"] = full_height;
    std::vector<std::string> rows;
    for (int r = 0; r < height; ++r) {
        std::string line(static_cast<size_t>(width), '0');
        for (int c = 0; c < width; ++c)
            if (at(r, c)) line[static_cast<size_t>(c)] = '1';
        rows.push_back(std::move(line));
    }
    j["footprint"] = rows;
    return j.dump(2) + "\n";
}

void ReceptiveFieldReport::write_pgm(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "P5\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> bytes(footprint.size());
    for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = footprint[i] ? 255 : 0;
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ReceptiveFieldReport probe_receptive_field_fn(const ProbeForwardFn& forward, const Shape& input_shape,
                                              int probe_row, int probe_col, uint64_t seed) {
    if (input_shape.size() != 3)
        throw ShapeError("probe: input shape must be [C,H,W], got " + shape_str(input_shape));
    const int C = input_shape[0], H = input_shape[1], W = input_shape[2];
    if (probe_row < 0 || probe_row >= H || probe_col < 0 || probe_col >= W)
        throw ConfigError("probe: pixel (" + std::to_string(probe_row) + "," +
                          std::to_string(probe_col) + ") outside " + std::to_string(H) + "x" +
                          std::to_string(W));
    Rng rng(seed);
    Tensor x = rng.uniform_tensor<float>({1, C, H, W}, 0.0f, 1.0f);
    Tape tape;
    tape.watch(x);
    Tensor logits = forward(&tape, x);
    if (logits.rank() != 4 || logits.dim(2) != H || logits.dim(3) != W)
        throw ShapeError("probe: forward returned " + shape_str(logits.shape()) +
                         " for input " + shape_str(x.shape()));
    const size_t flat =
        (static_cast<size_t>(0) * logits.dim(1) + 0) * H * W + static_cast<size_t>(probe_row) * W + probe_col;
    Tensor root = pick(&tape, logits, flat);
    tape.backward(root.node());
    const Tensor g = tape.grad(x.node());

    ReceptiveFieldReport rep;
    rep.probe_row = probe_row;
    rep.probe_col = probe_col;
    rep.height = H;
    rep.width = W;
    rep.footprint.assign(static_cast<size_t>(H) * W, 0);
    rep.row_min = H;
    rep.col_min = W;
    rep.row_max = -1;
    rep.col_max = -1;
    for (int c = 0; c < C; ++c)
        for (int r = 0; r < H; ++r)
            for (int w = 0; w < W; ++w)
                if (std::fabs(static_cast<double>(g.at({0, c, r, w}))) > kFootprintThreshold) {
                    rep.footprint[static_cast<size_t>(r) * W + w] = 1;
                    rep.row_min = std::min(rep.row_min, r);
                    rep.row_max = std::max(rep.row_max, r);
                    rep.col_min = std::min(rep.col_min, w);
                    rep.col_max = std::max(rep.col_max, w);
                }
    if (rep.row_max < 0) {
        // Dead activations can cut every path from the probed logit to the
        // input (for instance at random initialization); report that honestly.
        rep.row_min = rep.row_max = rep.col_min = rep.col_max = -1;
        return rep;
    }
    rep.full_width = rep.col_min == 0 && rep.col_max == W - 1;
    rep.full_height = rep.row_min == 0 && rep.row_max == H - 1;
    return rep;
}

ReceptiveFieldReport probe_receptive_field(Network& net, const Shape& input_shape, int probe_row,
                                           int probe_col, uint64_t seed) {
    ProbeForwardFn fwd = [&net](Tape* tape, const Tensor& x) {
        return network_forward(tape, net, x, /*training=*/false);
    };
    return probe_receptive_field_fn(fwd, input_shape, probe_row, probe_col, seed);
}

int64_t count_params(const Network& net) { return net.params.trainable_count(); }

int64_t macs_conv2d(int h, int w, int cin, int cout, int k) {
    return static_cast<int64_t>(h) * w * cout * cin * k * k;
}

int64_t macs_affine(int h, int w, int cin, int cout) {
    return static_cast<int64_t>(h) * w * cin * cout;
}

// One direction visits every position once; each step runs six 1-D
// convolutions (three state-to-state, three input-to-state) over the
// orthogonal slice, so the total is 6*H*W*C_s^2*k regardless of direction.
int64_t macs_sweep_direction(int h, int w, int state_size, int k) {
    return 6LL * h * w * state_size * state_size * k;
}

namespace {

Tensor rand_t(Shape shape, uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
    Rng rng(seed);
    return rng.uniform_tensor<float>(std::move(shape), lo, hi);
}

template <typename Fn>
GradSuiteResult suite_check(const std::string& name, Fn&& fn,
                            const std::function<std::vector<Tensor>(uint64_t)>& make_inputs,
                            int max_coords = 120) {
    GradSuiteResult result{name, 0.0, true};
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        const auto rep = grad_check(fn, make_inputs(seed),
                                    {.max_coords_per_tensor = max_coords, .seed = seed});
        result.max_rel_err = std::max(result.max_rel_err, rep.max_rel_err);
        result.pass = result.pass && rep.pass;
    }
    return result;
}

void append_op_checks(std::vector<GradSuiteResult>& out) {
    out.push_back(suite_check(
        "affine_pointwise",
        [](auto* tape, auto& ins) { return sum(tape, affine_pointwise(tape, ins[0], ins[1], ins[2])); },
        [](uint64_t s) {
            return std::vector<Tensor>{rand_t({2, 3, 3}, s), rand_t({2, 4}, s + 50), rand_t({4}, s + 99)};
        }));
    out.push_back(suite_check(
        "conv2d",
        [](auto* tape, auto& ins) {
            return sum(tape, conv2d(tape, ins[0], ins[1], ins[2], Padding::kSame));
        },
        [](uint64_t s) {
            return std::vector<Tensor>{rand_t({2, 4, 5}, s), rand_t({3, 2, 3, 3}, s + 1), rand_t({3}, s + 2)};
        }));
    out.push_back(suite_check(
        "conv1d_axis",
        [](auto* tape, auto& ins) { return sum(tape, conv1d_axis(tape, ins[0], ins[1], ins[2])); },
        [](uint64_t s) {
            return std::vector<Tensor>{rand_t({3, 7}, s), rand_t({2, 3, 3}, s + 1), rand_t({2}, s + 2)};
        }));
    out.push_back(suite_check(
        "batchnorm",
        [](auto* tape, auto& ins) {
            using TT = std::decay_t<decltype(ins[0])>;
            TT rm(Shape{3}), rv = TT::full(Shape{3}, typename TT::value_type(1));
            auto y = batchnorm(tape, ins[0], ins[1], ins[2], rm, rv, true);
            return sum(tape, mul(tape, y, y));
        },
        [](uint64_t s) {
            return std::vector<Tensor>{rand_t({2, 3, 4, 4}, s), rand_t({3}, s + 1, 0.5f, 1.5f),
                                       rand_t({3}, s + 2)};
        }));
    out.push_back(suite_check(
        "activations",
        [](auto* tape, auto& ins) {
            auto y = tanh_op(tape, sigmoid(tape, relu(tape, ins[0])));
            return sum(tape, mul(tape, y, y));
        },
        [](uint64_t s) { return std::vector<Tensor>{rand_t({2, 4, 4}, s, -2.0f, 2.0f)}; }));
    out.push_back(suite_check(
        "pool_upsample_concat",
        [](auto* tape, auto& ins) {
            auto a = maxpool2(tape, ins[0]);
            auto b = upsample_nearest2(tape, a);
            auto c = concat_channels(tape, {b, ins[0]});
            return sum(tape, mul(tape, c, c));
        },
        [](uint64_t s) { return std::vector<Tensor>{rand_t({2, 4, 6}, s)}; }));
    out.push_back(suite_check(
        "elementwise",
        [](auto* tape, auto& ins) {
            using U = typename std::decay_t<decltype(ins[0])>::value_type;
            auto q = div(tape, ins[0], add_scalar(tape, sigmoid(tape, ins[1]), U(1)));
            return sum(tape, mul(tape, sub(tape, q, one_minus(tape, ins[1])), q));
        },
        [](uint64_t s) { return std::vector<Tensor>{rand_t({3, 4}, s), rand_t({3, 4}, s + 1)}; }));
    {
        IntTensor target({1, 4, 4});
        for (int h = 0; h < 4; ++h)
            for (int w = 0; w < 4; ++w)
                target.mutable_data()[static_cast<size_t>(h * 4 + w)] = h < 2 ? 1 : 0;
        out.push_back(suite_check(
            "soft_dice_loss",
            [target](auto* tape, auto& ins) {
                using U = typename std::decay_t<decltype(ins[0])>::value_type;
                return soft_dice_loss(tape, ins[0], one_hot<U>(target, 2));
            },
            [](uint64_t s) { return std::vector<Tensor>{rand_t({1, 2, 4, 4}, s, -1.5f, 1.5f)}; }));
        out.push_back(suite_check(
            "cross_entropy_loss",
            [target](auto* tape, auto& ins) { return cross_entropy_loss(tape, ins[0], target); },
            [](uint64_t s) { return std::vector<Tensor>{rand_t({1, 2, 4, 4}, s, -1.5f, 1.5f)}; }));
    }
}

void append_sdn_checks(std::vector<GradSuiteResult>& out) {
    {
        SdnLayerConfig cfg;
        cfg.state_size = 2;
        cfg.directions = {Direction::kLR};
        out.push_back(suite_check(
            "sd_sweep",
            [](auto* tape, auto& ins) {
                using U = typename std::decay_t<decltype(ins[0])>::value_type;
                SdnDirectionParamsT<U> p;
                p.Kz = ins[1];
                p.Kr = ins[2];
                p.Kc = ins[3];
                p.Lz = ins[4];
                p.Lr = ins[5];
                p.Lc = ins[6];
                p.bz = ins[7];
                p.br = ins[8];
                p.bc = ins[9];
                auto y = sweep(tape, ins[0], Direction::kLR, p);
                return sum(tape, mul(tape, y, y));
            },
            [](uint64_t s) {
                std::vector<Tensor> ins{rand_t({2, 4, 5}, s)};
                for (int i = 0; i < 6; ++i) ins.push_back(rand_t({2, 2, 3}, s + 10 + static_cast<uint64_t>(i), -0.6f, 0.6f));
                for (int i = 0; i < 3; ++i) ins.push_back(rand_t({2}, s + 20 + static_cast<uint64_t>(i)));
                return ins;
            },
            40));
    }
    {
        SdnLayerConfig cfg;
        cfg.state_size = 3;
        cfg.directions = {Direction::kLR, Direction::kUD};
        cfg.residual = true;
        Rng rng(4099);
        const SdnLayerParams fixed = init_sdn_params(cfg, 2, rng);
        out.push_back(suite_check(
            "sd_layer",
            [cfg, fixed](auto* tape, auto& ins) {
                using U = typename std::decay_t<decltype(ins[0])>::value_type;
                SdnLayerParamsT<U> p;
                p.W_in = ins[1];
                p.b_in = ins[2];
                p.W_out = ins[3];
                p.b_out = ins[4];
                p.dirs.resize(2);
                p.dirs[0].Kz = ins[5];
                p.dirs[0].Kr = ins[6];
                p.dirs[0].Kc = ins[7];
                p.dirs[0].Lz = ins[8];
                p.dirs[0].Lr = ins[9];
                p.dirs[0].Lc = ins[10];
                p.dirs[0].bz = ins[11];
                p.dirs[0].br = ins[12];
                p.dirs[0].bc = ins[13];
                p.dirs[1].Kz = fixed.dirs[1].Kz.template cast<U>();
                p.dirs[1].Kr = fixed.dirs[1].Kr.template cast<U>();
                p.dirs[1].Kc = fixed.dirs[1].Kc.template cast<U>();
                p.dirs[1].Lz = fixed.dirs[1].Lz.template cast<U>();
                p.dirs[1].Lr = fixed.dirs[1].Lr.template cast<U>();
                p.dirs[1].Lc = fixed.dirs[1].Lc.template cast<U>();
                p.dirs[1].bz = fixed.dirs[1].bz.template cast<U>();
                p.dirs[1].br = fixed.dirs[1].br.template cast<U>();
                p.dirs[1].bc = fixed.dirs[1].bc.template cast<U>();
                auto y = sdn_forward(tape, ins[0], cfg, p);
                return sum(tape, mul(tape, y, y));
            },
            [fixed](uint64_t s) {
                return std::vector<Tensor>{rand_t({2, 6, 6}, s), fixed.W_in,       fixed.b_in,
                                           fixed.W_out,          fixed.b_out,      fixed.dirs[0].Kz,
                                           fixed.dirs[0].Kr,     fixed.dirs[0].Kc, fixed.dirs[0].Lz,
                                           fixed.dirs[0].Lr,     fixed.dirs[0].Lc, fixed.dirs[0].bz,
                                           fixed.dirs[0].br,     fixed.dirs[0].bc};
            },
            24));
    }
}

void append_network_checks(std::vector<GradSuiteResult>& out) {
    ArchitectureSpec spec;
    spec.family = "unet";
    spec.depth = 2;
    spec.base_width = 2;
    spec.in_channels = 1;
    spec.out_classes = 2;
    spec.sd_scales = {1};
    spec.sd_layers_per_block = 1;
    spec.sdn.state_size = 3;
    spec.sdn.directions = {Direction::kLR, Direction::kUD};
    spec.sdn.residual = true;
    const Network net = build_network(spec, 17);
    out.push_back(suite_check(
        "network_d2",
        [&net](auto* tape, auto& ins) {
            using U = typename std::decay_t<decltype(ins[0])>::value_type;
            ParamStoreT<U> ps;
            size_t k = 1;
            for (const auto& e : net.params.entries()) {
                if (e.trainable)
                    ps.add(e.name, ins[k++], true);
                else
                    ps.add(e.name, e.tensor.template cast<U>(), false);
            }
            auto y = network_forward(tape, net.spec, ps, ins[0], true, false);
            return sum(tape, mul(tape, y, y));
        },
        [&net](uint64_t s) {
            std::vector<Tensor> ins{rand_t({1, 1, 8, 8}, s, 0.0f, 1.0f)};
            for (const auto& e : net.params.entries())
                if (e.trainable) ins.push_back(e.tensor);
            return ins;
        },
        8));
}

}  // namespace

std::vector<GradSuiteResult> run_gradient_suite(const std::string& scope) {
    std::vector<GradSuiteResult> out;
    if (scope == "ops" || scope == "all")
        append_op_checks(out);
    if (scope == "sdn" || scope == "all")
        append_sdn_checks(out);
    if (scope == "network" || scope == "all")
        append_network_checks(out);
    if (out.empty())
        throw ConfigError("gradcheck: unknown scope '" + scope +
                          "' (expected ops, sdn, network or all)");
    return out;
}

int64_t count_macs(const ArchitectureSpec& spec, int height, int width) {
    spec.validate();
    const int div = 1 << (spec.depth - 1);
    if (height % div != 0 || width % div != 0)
        throw ConfigError("count_macs: input " + std::to_string(height) + "x" +
                          std::to_string(width) + " must be divisible by " + std::to_string(div));
    int64_t total = 0;
    for (const BlockInfo& block : enumerate_blocks(spec)) {
        const int h = height >> block.scale, w = width >> block.scale;
        const int out_ch = spec.width(block.scale);
        int cin = block.in_channels;
        for (int c = 0; c < spec.convs_per_block; ++c) {
            total += macs_conv2d(h, w, cin, out_ch, 3);
            cin = out_ch;
        }
        if (spec.sd_at(block.scale)) {
            const int cs = spec.sdn.state_size;
            for (int l = 0; l < spec.sd_layers_per_block; ++l) {
                total += macs_affine(h, w, out_ch, cs);
                total += static_cast<int64_t>(spec.sdn.directions.size()) *
                         macs_sweep_direction(h, w, cs, spec.sdn.kernel_width);
                total += macs_affine(h, w, cs, out_ch);
            }
        }
    }
    total += macs_conv2d(height, width, spec.width(0), spec.out_classes, 1);
    return total;
}

}  // namespace sdnet
