#include "sdnet/arch.hpp"

namespace sdnet {

void ArchitectureSpec::validate() const {
    if (family != "unet" && family != "unetpp")
        throw ConfigError("arch: unknown family '" + family + "' (expected unet or unetpp)");
    if (depth < 2) throw ConfigError("arch: depth must be >= 2, got " + std::to_string(depth));
    if (base_width < 1) throw ConfigError("arch: base_width must be >= 1");
    if (width_multiplier < 1) throw ConfigError("arch: width_multiplier must be >= 1");
    if (convs_per_block < 1) throw ConfigError("arch: convs_per_block must be >= 1");
    if (in_channels < 1) throw ConfigError("arch: in_channels must be >= 1");
    if (out_classes < 2) throw ConfigError("arch: out_classes must be >= 2");
    for (size_t i = 0; i < sd_scales.size(); ++i) {
        if (sd_scales[i] < 0 || sd_scales[i] >= depth)
            throw ConfigError("arch: sd scale " + std::to_string(sd_scales[i]) +
                              " outside [0," + std::to_string(depth - 1) + "]");
        for (size_t j = i + 1; j < sd_scales.size(); ++j)
            if (sd_scales[i] == sd_scales[j])
                throw ConfigError("arch: duplicate sd scale " + std::to_string(sd_scales[i]));
    }
    if (!sd_scales.empty()) {
        if (sd_layers_per_block < 1) throw ConfigError("arch: sd_layers_per_block must be >= 1");
        sdn.validate();
    }
}

std::vector<BlockInfo> enumerate_blocks(const ArchitectureSpec& spec) {
    spec.validate();
    std::vector<BlockInfo> blocks;
    const int D = spec.depth;
    if (spec.family == "unet") {
        for (int i = 0; i < D; ++i)
            blocks.push_back({"enc" + std::to_string(i), i,
                              i == 0 ? spec.in_channels : spec.width(i - 1)});
        for (int i = D - 2; i >= 0; --i)
            blocks.push_back({"dec" + std::to_string(i), i, spec.width(i) + spec.width(i + 1)});
    } else {
        for (int i = 0; i < D; ++i)
            blocks.push_back({"x" + std::to_string(i) + "_0", i,
                              i == 0 ? spec.in_channels : spec.width(i - 1)});
        for (int j = 1; j < D; ++j)
            for (int i = 0; i + j <= D - 1; ++i)
                blocks.push_back({"x" + std::to_string(i) + "_" + std::to_string(j), i,
                                  j * spec.width(i) + spec.width(i + 1)});
    }
    return blocks;
}

namespace {

Tensor uniform_fan(Rng& rng, Shape shape, int fan_in) {
    const float s = 1.0f / std::sqrt(static_cast<float>(fan_in));
    return rng.uniform_tensor<float>(std::move(shape), -s, s);
}

void register_block(ParamStore& ps, const ArchitectureSpec& spec, const BlockInfo& block,
                    Rng& rng) {
    const int out_ch = spec.width(block.scale);
    int cin = block.in_channels;
    for (int c = 0; c < spec.convs_per_block; ++c) {
        const std::string cp = block.prefix + ".conv" + std::to_string(c);
        ps.add(cp + ".w", uniform_fan(rng, {out_ch, cin, 3, 3}, cin * 9));
        ps.add(cp + ".b", Tensor::zeros({out_ch}));
        if (spec.batchnorm) {
            const std::string bp = block.prefix + ".bn" + std::to_string(c);
            ps.add(bp + ".gamma", Tensor::full({out_ch}, 1.0f));
            ps.add(bp + ".beta", Tensor::zeros({out_ch}));
            ps.add(bp + ".rm", Tensor::zeros({out_ch}), /*trainable=*/false);
            ps.add(bp + ".rv", Tensor::full({out_ch}, 1.0f), /*trainable=*/false);
        }
        cin = out_ch;
    }
    if (spec.sd_at(block.scale))
        for (int l = 0; l < spec.sd_layers_per_block; ++l)
            register_sdn_params(ps, block.prefix + ".sd" + std::to_string(l), spec.sdn,
                                init_sdn_params(spec.sdn, out_ch, rng));
}

}  // namespace

Network build_network(const ArchitectureSpec& spec, uint64_t seed) {
    spec.validate();
    Network net;
    net.spec = spec;
    Rng rng(seed);
    for (const BlockInfo& block : enumerate_blocks(spec)) register_block(net.params, spec, block, rng);
    net.params.add("head.w", uniform_fan(rng, {spec.out_classes, spec.width(0), 1, 1}, spec.width(0)));
    net.params.add("head.b", Tensor::zeros({spec.out_classes}));
    return net;
}

ArchitectureSpec presets(const std::string& name, TaskSize task_size) {
    ArchitectureSpec spec;
    spec.depth = 4;
    spec.base_width = 16;
    spec.convs_per_block = 2;
    spec.batchnorm = true;
    spec.sdn.state_size = 150;
    spec.sdn.kernel_width = 3;
    spec.sdn.directions = {Direction::kLR, Direction::kUD};
    spec.sdn.residual = task_size == TaskSize::kLarge;
    spec.sd_layers_per_block = task_size == TaskSize::kSmall ? 2 : 1;

    if (name == "unet" || name == "sdu_net")
        spec.family = "unet";
    else if (name == "unetpp" || name == "sdnu_net")
        spec.family = "unetpp";
    else
        throw ConfigError("presets: unknown architecture '" + name +
                          "' (expected unet, unetpp, sdu_net or sdnu_net)");

    if (name == "sdu_net" || name == "sdnu_net")
        spec.sd_scales = {spec.depth - 2, spec.depth - 1};
    else
        spec.sd_scales.clear();
    return spec;
}

}  // namespace sdnet
