#include <cmath>

#include "doctest.h"
#include "sdnet/gradcheck.hpp"
#include "sdnet/ops.hpp"

using namespace sdnet;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
    Rng rng(seed);
    return rng.uniform_tensor<float>(std::move(shape), lo, hi);
}

}  // namespace

TEST_CASE("affine_pointwise identity and hand-evaluated case") {
    Tensor x({2, 3, 3});
    for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 3; ++w) {
            x.mutable_data()[static_cast<size_t>(0 * 9 + h * 3 + w)] = 1.0f;
            x.mutable_data()[static_cast<size_t>(1 * 9 + h * 3 + w)] = 2.0f;
        }
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor zero_b({2});
    Tensor y = affine_pointwise<float>(nullptr, x, eye, zero_b);
    CHECK(y.data() == x.data());

    Tensor w({2, 2}, {1, 0, 0, 2});
    Tensor b({2}, {1, -1});
    Tensor y2 = affine_pointwise<float>(nullptr, x, w, b);
    for (int p = 0; p < 9; ++p) {
        CHECK(y2.data()[static_cast<size_t>(p)] == doctest::Approx(2.0));       // 1*1+2*0+1
        CHECK(y2.data()[static_cast<size_t>(9 + p)] == doctest::Approx(3.0));   // 1*0+2*2-1
    }
}

TEST_CASE("affine_pointwise shape errors name both shapes") {
    Tensor x({2, 3, 3});
    Tensor w({3, 2});
    Tensor b({2});
    CHECK_THROWS_WITH_AS(affine_pointwise<float>(nullptr, x, w, b),
                         doctest::Contains("[2,3,3]"), ShapeError);
}

TEST_CASE("affine_pointwise gradients match finite differences") {
    auto fn = [](auto* tape, auto& ins) {
        return sum(tape, affine_pointwise(tape, ins[0], ins[1], ins[2]));
    };
    for (uint64_t seed : {1, 2, 3, 4, 5}) {
        auto rep = grad_check(fn,
                              {random_tensor({2, 3, 3}, seed), random_tensor({2, 4}, seed + 50),
                               random_tensor({4}, seed + 100)},
                              {.seed = seed});
        CHECK_MESSAGE(rep.pass, "seed ", seed, " max rel err ", rep.max_rel_err);
    }
}

TEST_CASE("conv2d identity, all-ones window, and errors") {
    Tensor x({1, 2, 2}, {1, 2, 3, 4});
    Tensor k1({1, 1, 1, 1}, {1.0f});
    Tensor b0({1});
    Tensor y = conv2d<float>(nullptr, x, k1, b0, Padding::kSame);
    CHECK(y.data() == x.data());

    Tensor k3 = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor y2 = conv2d<float>(nullptr, x, k3, b0, Padding::kSame);
    for (float v : y2.data()) CHECK(v == doctest::Approx(10.0));

    Tensor keven({1, 1, 2, 2});
    CHECK_THROWS_AS(conv2d<float>(nullptr, x, keven, b0, Padding::kSame), ConfigError);
}

TEST_CASE("conv2d valid padding shrinks the output") {
    Tensor x = random_tensor({1, 5, 6}, 7);
    Tensor k = random_tensor({2, 1, 3, 3}, 8);
    Tensor b = random_tensor({2}, 9);
    Tensor y = conv2d<float>(nullptr, x, k, b, Padding::kValid);
    CHECK(y.shape() == Shape{2, 3, 4});
}

TEST_CASE("conv2d with a Dirac kernel is a spatial shift") {
    Tensor x = random_tensor({1, 6, 6}, 21, 0.1f, 1.0f);
    for (int dy : {-1, 0, 1})
        for (int dx : {-1, 0, 1}) {
            Tensor k({1, 1, 3, 3});
            k.mutable_data()[static_cast<size_t>((dy + 1) * 3 + (dx + 1))] = 1.0f;
            Tensor y = conv2d<float>(nullptr, x, k, Tensor({1}), Padding::kSame);
            for (int h = 0; h < 6; ++h)
                for (int w = 0; w < 6; ++w) {
                    const int sh = h + dy, sw = w + dx;
                    const float expected =
                        (sh >= 0 && sh < 6 && sw >= 0 && sw < 6) ? x.at({0, sh, sw}) : 0.0f;
                    CHECK(y.at({0, h, w}) == expected);
                }
        }
}

TEST_CASE("conv2d gradients match finite differences") {
    auto fn = [](auto* tape, auto& ins) {
        return sum(tape, conv2d(tape, ins[0], ins[1], ins[2], Padding::kSame));
    };
    for (uint64_t seed : {11, 12, 13, 14, 15}) {
        auto rep = grad_check(fn,
                              {random_tensor({2, 4, 5}, seed), random_tensor({3, 2, 3, 3}, seed + 1),
                               random_tensor({3}, seed + 2)},
                              {.seed = seed});
        CHECK_MESSAGE(rep.pass, "seed ", seed, " max rel err ", rep.max_rel_err);
    }
    auto fn_valid = [](auto* tape, auto& ins) {
        return sum(tape, conv2d(tape, ins[0], ins[1], ins[2], Padding::kValid));
    };
    auto rep = grad_check(fn_valid,
                          {random_tensor({2, 5, 5}, 31), random_tensor({2, 2, 3, 3}, 32),
                           random_tensor({2}, 33)},
                          {.seed = 31});
    CHECK_MESSAGE(rep.pass, "valid padding max rel err ", rep.max_rel_err);
}

TEST_CASE("conv1d_axis identity, direct evaluation, gradients") {
    Tensor x({1, 3}, {1, 2, 3});
    Tensor kid({1, 1, 1}, {1.0f});
    Tensor y = conv1d_axis<float>(nullptr, x, kid, Tensor());
    CHECK(y.data() == x.data());

    Tensor k({1, 1, 3}, {1, 1, 1});
    Tensor y2 = conv1d_axis<float>(nullptr, x, k, Tensor());
    CHECK(y2.data() == std::vector<float>{3, 6, 5});

    auto fn = [](auto* tape, auto& ins) {
        return sum(tape, conv1d_axis(tape, ins[0], ins[1], ins[2]));
    };
    for (uint64_t seed : {41, 42, 43, 44, 45}) {
        auto rep = grad_check(fn,
                              {random_tensor({3, 7}, seed), random_tensor({2, 3, 3}, seed + 1),
                               random_tensor({2}, seed + 2)},
                              {.seed = seed});
        CHECK_MESSAGE(rep.pass, "seed ", seed, " max rel err ", rep.max_rel_err);
    }
}

TEST_CASE("maxpool2, upsample_nearest2, concat_channels basics") {
    Tensor x({1, 2, 2}, {1, 2, 3, 4});
    Tensor p = maxpool2<float>(nullptr, x);
    CHECK(p.shape() == Shape{1, 1, 1});
    CHECK(p.data()[0] == 4.0f);

    Tensor odd({1, 3, 2});
    CHECK_THROWS_AS(maxpool2<float>(nullptr, odd), ShapeError);

    Tensor s({1, 1, 1}, {5.0f});
    Tensor up = upsample_nearest2<float>(nullptr, s);
    CHECK(up.shape() == Shape{1, 2, 2});
    for (float v : up.data()) CHECK(v == 5.0f);

    Tensor a = random_tensor({2, 4, 4}, 51);
    Tensor b = random_tensor({3, 4, 4}, 52);
    Tensor cat = concat_channels<float>(nullptr, {a, b});
    CHECK(cat.shape() == Shape{5, 4, 4});
}

TEST_CASE("concat then channel slice is the identity, bit-exact") {
    Tensor a = random_tensor({2, 4, 4}, 61);
    Tensor b = random_tensor({3, 4, 4}, 62);
    Tensor cat = concat_channels<float>(nullptr, {a, b});
    CHECK(slice_channels(cat, 0, 2).data() == a.data());
    CHECK(slice_channels(cat, 2, 5).data() == b.data());

    Tensor a4 = random_tensor({2, 3, 4, 4}, 63);
    Tensor b4 = random_tensor({2, 1, 4, 4}, 64);
    Tensor cat4 = concat_channels<float>(nullptr, {a4, b4});
    CHECK(slice_channels(cat4, 0, 3).data() == a4.data());
    CHECK(slice_channels(cat4, 3, 4).data() == b4.data());
}

TEST_CASE("pool/upsample/concat/activation gradients match finite differences") {
    auto pool_fn = [](auto* tape, auto& ins) { return sum(tape, maxpool2(tape, ins[0])); };
    auto up_fn = [](auto* tape, auto& ins) { return sum(tape, upsample_nearest2(tape, ins[0])); };
    auto cat_fn = [](auto* tape, auto& ins) {
        using TT = std::decay_t<decltype(ins[0])>;
        return sum(tape, mul(tape, concat_channels(tape, {ins[0], ins[1]}),
                             concat_channels(tape, {ins[1], ins[0]})));
        (void)sizeof(TT);
    };
    auto act_fn = [](auto* tape, auto& ins) {
        auto mid = tanh_op(tape, sigmoid(tape, relu(tape, ins[0])));
        return sum(tape, mul(tape, mid, mid));
    };
    for (uint64_t seed : {71, 72, 73, 74, 75}) {
        CHECK(grad_check(pool_fn, {random_tensor({2, 4, 6}, seed)}, {.seed = seed}).pass);
        CHECK(grad_check(up_fn, {random_tensor({2, 3, 3}, seed)}, {.seed = seed}).pass);
        CHECK(grad_check(cat_fn,
                         {random_tensor({2, 3, 3}, seed), random_tensor({2, 3, 3}, seed + 7)},
                         {.seed = seed})
                  .pass);
        CHECK(grad_check(act_fn, {random_tensor({2, 3, 3}, seed)}, {.seed = seed}).pass);
    }
}

TEST_CASE("elementwise arithmetic gradients") {
    auto fn = [](auto* tape, auto& ins) {
        auto q = div(tape, ins[0], add_scalar(tape, sigmoid(tape, ins[1]), decltype(ins[0].data()[0])(1)));
        return sum(tape, mul(tape, sub(tape, q, one_minus(tape, ins[1])), q));
    };
    for (uint64_t seed : {81, 82, 83}) {
        auto rep = grad_check(
            fn, {random_tensor({3, 4}, seed), random_tensor({3, 4}, seed + 1)}, {.seed = seed});
        CHECK_MESSAGE(rep.pass, "seed ", seed, " max rel err ", rep.max_rel_err);
    }
}

TEST_CASE("batchnorm: constant channels give beta, batch stats normalize") {
    Tensor x({2, 2, 3, 3});
    for (int n = 0; n < 2; ++n)
        for (int p = 0; p < 9; ++p) {
            x.mutable_data()[static_cast<size_t>(n * 18 + p)] = 3.5f;
            x.mutable_data()[static_cast<size_t>(n * 18 + 9 + p)] = -1.25f;
        }
    Tensor gamma = Tensor::full({2}, 2.0f);
    Tensor beta({2}, {0.5f, -4.0f});
    Tensor rm({2}), rv = Tensor::full({2}, 1.0f);
    Tensor y = batchnorm<float>(nullptr, x, gamma, beta, rm, rv, true);
    for (int n = 0; n < 2; ++n)
        for (int p = 0; p < 9; ++p) {
            CHECK(y.data()[static_cast<size_t>(n * 18 + p)] == doctest::Approx(0.5));
            CHECK(y.data()[static_cast<size_t>(n * 18 + 9 + p)] == doctest::Approx(-4.0));
        }
    CHECK(rm.data()[0] == doctest::Approx(0.9f * 0.0f + 0.1f * 3.5f));

    Tensor xr = random_tensor({2, 3, 4, 4}, 91);
    Tensor g1 = Tensor::full({3}, 1.0f), b0({3});
    Tensor rm2({3}), rv2 = Tensor::full({3}, 1.0f);
    Tensor yn = batchnorm<float>(nullptr, xr, g1, b0, rm2, rv2, true);
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (int n = 0; n < 2; ++n)
            for (int p = 0; p < 16; ++p) mean += yn.at({n, c, p / 4, p % 4});
        mean /= 32.0;
        for (int n = 0; n < 2; ++n)
            for (int p = 0; p < 16; ++p) {
                const double d = yn.at({n, c, p / 4, p % 4}) - mean;
                var += d * d;
            }
        var /= 32.0;
        CHECK(std::fabs(mean) < 1e-4);
        CHECK(std::fabs(var - 1.0) < 1e-3);
    }
}

TEST_CASE("batchnorm gradients match finite differences (train and eval)") {
    for (bool training : {true, false}) {
        auto fn = [training](auto* tape, auto& ins) {
            using TT = std::decay_t<decltype(ins[0])>;
            TT rm(Shape{3}), rv = TT::full(Shape{3}, typename TT::value_type(1));
            auto y = batchnorm(tape, ins[0], ins[1], ins[2], rm, rv, training);
            return sum(tape, mul(tape, y, y));
        };
        for (uint64_t seed : {101, 102, 103, 104, 105}) {
            auto rep = grad_check(fn,
                                  {random_tensor({2, 3, 4, 4}, seed),
                                   random_tensor({3}, seed + 1, 0.5f, 1.5f),
                                   random_tensor({3}, seed + 2)},
                                  {.seed = seed});
            CHECK_MESSAGE(rep.pass, "training=", training, " seed ", seed, " max rel err ",
                          rep.max_rel_err);
        }
    }
}

TEST_CASE("backward: identity chain, analytic derivative, diamond accumulation") {
    Tape tape;
    Tensor x({3}, {1, 2, 3});
    tape.watch(x);
    Tensor y = sum(&tape, x);
    tape.backward(y.node());
    const Tensor gx = tape.grad(x.node());
    for (float g : gx.data()) CHECK(g == 1.0f);

    tape.reset();
    Tensor x2({3}, {1, 2, 3});
    tape.watch(x2);
    Tensor y2 = sum(&tape, mul(&tape, x2, x2));
    CHECK(y2.data()[0] == doctest::Approx(14.0));
    tape.backward(y2.node());
    CHECK(tape.grad(x2.node()).data() == std::vector<float>{2, 4, 6});

    tape.reset();
    Tensor a({1}, {5.0f});
    tape.watch(a);
    Tensor d = add(&tape, a, a);
    tape.backward(d.node());
    CHECK(tape.grad(a.node()).data()[0] == 2.0f);
}

TEST_CASE("backward rejects non-scalar roots") {
    Tape tape;
    Tensor x({2, 2}, {1, 2, 3, 4});
    tape.watch(x);
    Tensor y = relu(&tape, x);
    CHECK_THROWS_AS(tape.backward(y.node()), ContractError);
}

TEST_CASE("tape nodes are topologically ordered") {
    Tape tape;
    Tensor x = random_tensor({2, 4, 4}, 111);
    tape.watch(x);
    Tensor y = relu(&tape, conv2d(&tape, x, random_tensor({2, 2, 3, 3}, 112),
                                  random_tensor({2}, 113), Padding::kSame));
    Tensor s = sum(&tape, y);
    for (size_t i = 0; i < tape.size(); ++i)
        for (int p : tape.node_parents(static_cast<int>(i)))
            CHECK(p < static_cast<int>(i));
    CHECK(s.node() == static_cast<int>(tape.size()) - 1);
}

TEST_CASE("forward passes are deterministic, bit-identical") {
    auto run = []() {
        Tensor x = random_tensor({2, 6, 6}, 121);
        Tensor k = random_tensor({3, 2, 3, 3}, 122);
        Tensor b = random_tensor({3}, 123);
        Tensor y = relu<float>(nullptr, conv2d<float>(nullptr, x, k, b, Padding::kSame));
        return maxpool2<float>(nullptr, y).data();
    };
    CHECK(run() == run());
}

TEST_CASE("softmax_channels sums to one and has correct gradients") {
    Tensor x = random_tensor({1, 3, 2, 2}, 131, -2.0f, 2.0f);
    Tensor p = softmax_channels<float>(nullptr, x);
    for (int j = 0; j < 4; ++j) {
        float s = 0.0f;
        for (int k = 0; k < 3; ++k) s += p.data()[static_cast<size_t>(k * 4 + j)];
        CHECK(s == doctest::Approx(1.0));
    }
    auto fn = [](auto* tape, auto& ins) {
        auto sm = softmax_channels(tape, ins[0]);
        return sum(tape, mul(tape, sm, sm));
    };
    for (uint64_t seed : {141, 142, 143, 144, 145}) {
        auto rep = grad_check(fn, {random_tensor({2, 3, 2, 2}, seed, -2.0f, 2.0f)}, {.seed = seed});
        CHECK_MESSAGE(rep.pass, "seed ", seed, " max rel err ", rep.max_rel_err);
    }
}
