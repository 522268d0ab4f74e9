#include <set>

#include "doctest.h"
#include "sdnet/arch.hpp"
#include "sdnet/gradcheck.hpp"

using namespace sdnet;

namespace {

ArchitectureSpec mini_spec(bool with_sd) {
    ArchitectureSpec spec;
    spec.family = "unet";
    spec.depth = 2;
    spec.base_width = 2;
    spec.convs_per_block = 2;
    spec.in_channels = 1;
    spec.out_classes = 2;
    spec.batchnorm = true;
    if (with_sd) {
        spec.sd_scales = {1};
        spec.sd_layers_per_block = 1;
        spec.sdn.state_size = 3;
        spec.sdn.directions = {Direction::kLR, Direction::kUD};
        spec.sdn.residual = true;
    }
    return spec;
}

std::set<std::string> block_prefixes(const ParamStore& ps) {
    std::set<std::string> out;
    for (const auto& e : ps.entries()) {
        const size_t dot = e.name.find('.');
        if (e.name.rfind("head", 0) != 0) out.insert(e.name.substr(0, dot));
    }
    return out;
}

}  // namespace

TEST_CASE("vanilla unet builds and keeps the shape contract") {
    ArchitectureSpec spec = mini_spec(false);
    Network net = build_network(spec, 1);
    Tensor x = Rng(2).uniform_tensor<float>({1, 1, 8, 8}, 0.0f, 1.0f);
    Tensor y = network_forward(nullptr, net, x, false);
    CHECK(y.shape() == Shape{1, 2, 8, 8});
}

TEST_CASE("forward shape round-trip across families and depths") {
    for (const std::string family : {"unet", "unetpp"}) {
        for (int depth : {2, 3}) {
            ArchitectureSpec spec = mini_spec(false);
            spec.family = family;
            spec.depth = depth;
            Network net = build_network(spec, 3);
            Tensor x = Rng(4).uniform_tensor<float>({2, 1, 16, 16}, 0.0f, 1.0f);
            Tensor y = network_forward(nullptr, net, x, false);
            CHECK(y.shape() == Shape{2, 2, 16, 16});
        }
    }
}

TEST_CASE("unetpp node grid has D(D+1)/2 blocks") {
    for (int depth : {2, 3, 4}) {
        ArchitectureSpec spec = mini_spec(false);
        spec.family = "unetpp";
        spec.depth = depth;
        Network net = build_network(spec, 5);
        CHECK(static_cast<int>(block_prefixes(net.params).size()) == depth * (depth + 1) / 2);
    }
    ArchitectureSpec spec = mini_spec(false);
    spec.family = "unetpp";
    spec.depth = 3;
    Network net = build_network(spec, 6);
    CHECK(block_prefixes(net.params) ==
          std::set<std::string>{"x0_0", "x1_0", "x2_0", "x0_1", "x1_1", "x0_2"});
}

TEST_CASE("SD layer placement counts match parameter-name enumeration") {
    ArchitectureSpec spec = mini_spec(false);
    spec.depth = 4;
    spec.base_width = 2;
    spec.sd_scales = {2, 3};
    spec.sd_layers_per_block = 2;
    spec.sdn.state_size = 2;
    Network net = build_network(spec, 7);
    std::set<std::string> sd_layers;
    for (const auto& name : net.params.names()) {
        const size_t pos = name.find(".sd");
        if (pos != std::string::npos) sd_layers.insert(name.substr(0, name.find('.', pos + 1)));
    }
    // blocks at scale 2: enc2 and dec2; at scale 3: enc3 (the bottleneck has no
    // decoder twin), so 3 blocks x 2 layers each
    CHECK(sd_layers.size() == 6);
    CHECK(sd_layers.count("enc2.sd0") == 1);
    CHECK(sd_layers.count("enc3.sd1") == 1);
    CHECK(sd_layers.count("dec2.sd0") == 1);
    CHECK(sd_layers.count("dec3.sd0") == 0);
}

TEST_CASE("parameter enumeration is deterministic and counts are spec-pure") {
    ArchitectureSpec spec = mini_spec(true);
    Network a = build_network(spec, 11);
    Network b = build_network(spec, 99);
    CHECK(a.params.names() == b.params.names());
    CHECK(a.params.trainable_count() == b.params.trainable_count());
}

TEST_CASE("input divisibility is checked before any graph work") {
    ArchitectureSpec spec = mini_spec(false);
    spec.depth = 3;
    Network net = build_network(spec, 12);
    Tensor x({1, 1, 10, 12});  // 10 not divisible by 4
    Tape tape;
    CHECK_THROWS_AS(network_forward(&tape, net, x, false), ConfigError);
    CHECK(tape.size() == 0);
}

TEST_CASE("residual SD layers with zeroed project-out reproduce the baseline bit-exactly") {
    ArchitectureSpec sd_spec = mini_spec(true);
    ArchitectureSpec base_spec = mini_spec(false);
    Network sd_net = build_network(sd_spec, 21);
    Network base_net = build_network(base_spec, 22);
    for (auto& e : base_net.params.entries())
        e.tensor = Tensor(e.tensor.shape(), sd_net.params.at(e.name).data());
    for (auto& e : sd_net.params.entries()) {
        if (e.name.find(".Wout") != std::string::npos || e.name.find(".bout") != std::string::npos)
            e.tensor = Tensor::zeros(e.tensor.shape());
    }
    Tensor x = Rng(23).uniform_tensor<float>({2, 1, 8, 8}, 0.0f, 1.0f);
    Tensor ya = network_forward(nullptr, sd_net, x, false);
    Tensor yb = network_forward(nullptr, base_net, x, false);
    CHECK(ya.data() == yb.data());
}

TEST_CASE("full-network gradient check on a D=2 mini net") {
    ArchitectureSpec spec = mini_spec(true);
    Network net = build_network(spec, 31);
    std::vector<Tensor> inputs;
    inputs.push_back(Rng(32).uniform_tensor<float>({1, 1, 8, 8}, 0.0f, 1.0f));
    for (const auto& e : net.params.entries())
        if (e.trainable) inputs.push_back(e.tensor);
    auto fn = [&net](auto* tape, auto& ins) {
        using TT = std::decay_t<decltype(ins[0])>;
        using U = typename TT::value_type;
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
    };
    auto rep = grad_check(fn, inputs, {.max_coords_per_tensor = 12, .seed = 33});
    CHECK_MESSAGE(rep.pass, "max rel err ", rep.max_rel_err, " at ", rep.worst);
}

TEST_CASE("presets pin the published configuration values") {
    ArchitectureSpec sdu = presets("sdu_net");
    CHECK(sdu.family == "unet");
    CHECK(sdu.sdn.state_size == 150);
    CHECK(sdu.sdn.kernel_width == 3);
    CHECK(sdu.sdn.directions.size() == 2);
    CHECK(sdu.convs_per_block == 2);
    CHECK(sdu.batchnorm);
    CHECK(sdu.sd_scales == std::vector<int>{sdu.depth - 2, sdu.depth - 1});

    CHECK(presets("unet").sd_scales.empty());
    CHECK(presets("unetpp").sd_scales.empty());

    ArchitectureSpec sdnu = presets("sdnu_net", TaskSize::kLarge);
    CHECK(sdnu.family == "unetpp");
    CHECK(sdnu.sd_scales == std::vector<int>{sdnu.depth - 2, sdnu.depth - 1});
    CHECK(sdnu.sd_layers_per_block == 1);
    CHECK(sdnu.sdn.residual);
    CHECK(presets("sdu_net", TaskSize::kSmall).sd_layers_per_block == 2);

    CHECK_THROWS_AS(presets("resnet"), ConfigError);
}

TEST_CASE("spec validation rejects out-of-range SD scales") {
    ArchitectureSpec spec = mini_spec(true);
    spec.sd_scales = {5};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.sd_scales = {1, 1};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}
