#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "sdnet/data.hpp"
#include "sdnet/train.hpp"

using namespace sdnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("sdnet_test_" + std::to_string(Rng(std::random_device{}()).next()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("stripe task: mask is exactly one full row containing the cue") {
    const Dataset data = gen_stripe_task(20, 32, 48, 11);
    REQUIRE(data.size() == 20);
    for (const auto& s : data) {
        CHECK(s.image.shape() == Shape{1, 32, 48});
        CHECK(s.mask.shape() == Shape{32, 48});
        int full_rows = 0, cue_row = -1;
        for (int h = 0; h < 32; ++h) {
            int rs = 0;
            for (int w = 0; w < 48; ++w) rs += s.mask.at({h, w});
            if (rs == 48) {
                ++full_rows;
                cue_row = h;
            } else {
                CHECK(rs == 0);
            }
        }
        CHECK(full_rows == 1);
        for (float v : s.image.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        // all cue pixels (value 1.0) lie inside the mask row
        for (int h = 0; h < 32; ++h)
            for (int w = 0; w < 48; ++w)
                if (s.image.at({0, h, w}) == 1.0f) CHECK(h == cue_row);
    }
}

TEST_CASE("stripe task is deterministic and solvable by the cue-row rule") {
    const Dataset a = gen_stripe_task(8, 24, 24, 77);
    const Dataset b = gen_stripe_task(8, 24, 24, 77);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].image.data() == b[i].image.data());
        CHECK(a[i].mask.data() == b[i].mask.data());
    }
    // oracle segmenter: label the row holding the brightest pixel
    for (const auto& s : a) {
        int best_row = 0;
        float best = -1.0f;
        for (int h = 0; h < 24; ++h)
            for (int w = 0; w < 24; ++w)
                if (s.image.at({0, h, w}) > best) {
                    best = s.image.at({0, h, w});
                    best_row = h;
                }
        IntTensor pred({24, 24});
        for (int w = 0; w < 24; ++w) pred.mutable_data()[static_cast<size_t>(best_row * 24 + w)] = 1;
        CHECK(dice_score(pred, s.mask) == 1.0);
    }
    CHECK_THROWS_AS(gen_stripe_task(4, 8, 32, 1), ConfigError);
}

TEST_CASE("blob task produces valid images and masks") {
    const Dataset data = gen_blob_task(10, 24, 24, 5);
    for (const auto& s : data) {
        for (float v : s.image.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        int64_t fg = 0;
        for (int32_t m : s.mask.data()) {
            CHECK((m == 0 || m == 1));
            fg += m;
        }
        CHECK(fg > 0);
    }
}

TEST_CASE("PGM loader: 8-bit scaling, maxval restriction, byte-offset errors") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("a.pgm"), std::ios::binary);
        out << "P5\n2 2\n255\n";
        const unsigned char bytes[4] = {0, 255, 128, 64};
        out.write(reinterpret_cast<const char*>(bytes), 4);
    }
    const Tensor t = load_pgm(tmp.file("a.pgm"));
    CHECK(t.shape() == Shape{1, 2, 2});
    CHECK(t.data()[0] == doctest::Approx(0.0));
    CHECK(t.data()[1] == doctest::Approx(1.0));
    CHECK(t.data()[2] == doctest::Approx(128.0 / 255.0).epsilon(1e-6));
    CHECK(t.data()[3] == doctest::Approx(64.0 / 255.0).epsilon(1e-6));

    {
        std::ofstream out(tmp.file("bad_maxval.pgm"), std::ios::binary);
        out << "P5\n2 2\n65535\n";
        out.write("\0\0\0\0\0\0\0\0", 8);
    }
    CHECK_THROWS_AS(load_pgm(tmp.file("bad_maxval.pgm")), DataError);

    {
        std::ofstream out(tmp.file("trunc.pgm"), std::ios::binary);
        out << "P5\n4 4\n255\n";
        out.write("\0\0", 2);
    }
    CHECK_THROWS_WITH_AS(load_pgm(tmp.file("trunc.pgm")), doctest::Contains("byte offset"),
                         DataError);

    {
        std::ofstream out(tmp.file("not_pgm.pgm"), std::ios::binary);
        out << "P6\n2 2\n255\n";
        out.write("\0\0\0\0", 4);
    }
    CHECK_THROWS_AS(load_pgm(tmp.file("not_pgm.pgm")), DataError);
}

TEST_CASE("PGM round trip is bit-exact on 8-bit data") {
    TempDir tmp;
    Rng rng(9);
    Tensor img({1, 6, 5});
    for (float& v : img.mutable_data())
        v = static_cast<float>(rng.index(256)) / 255.0f;  // representable 8-bit values
    save_pgm(tmp.file("rt.pgm"), img);
    const Tensor back = load_pgm(tmp.file("rt.pgm"));
    CHECK(back.data() == img.data());

    save_pgm(tmp.file("rt2.pgm"), back);
    std::ifstream f1(tmp.file("rt.pgm"), std::ios::binary), f2(tmp.file("rt2.pgm"), std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
}

TEST_CASE("mask PGM buckets distinct values in order") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("m.pgm"), std::ios::binary);
        out << "P5\n3 1\n255\n";
        const unsigned char bytes[3] = {0, 200, 90};
        out.write(reinterpret_cast<const char*>(bytes), 3);
    }
    const IntTensor m = load_mask_pgm(tmp.file("m.pgm"));
    CHECK(m.data() == std::vector<int32_t>{0, 2, 1});

    IntTensor binary({2, 2}, {0, 1, 1, 0});
    save_mask_pgm(tmp.file("b.pgm"), binary, 2);
    CHECK(load_mask_pgm(tmp.file("b.pgm")).data() == binary.data());
}

TEST_CASE("clip_rescale worked examples") {
    Tensor x({3}, {-2000.0f, 0.0f, 2000.0f});
    const Tensor y = clip_rescale(x, -1000.0f, 1000.0f);
    CHECK(y.data() == std::vector<float>{0.0f, 0.5f, 1.0f});

    Tensor z({3}, {0.0f, 0.5f, 1.0f});
    CHECK(clip_rescale(z, 0.0f, 1.0f).data() == z.data());

    Tensor c = Tensor::full({4}, 3.0f);
    const Tensor degenerate = clip_rescale(c, 3.0f, 3.0f);
    for (float v : degenerate.data()) CHECK(v == 0.0f);
}

TEST_CASE("split: quotas, group atomicity, determinism") {
    Dataset data;
    for (int g = 0; g < 10; ++g)
        for (int i = 0; i < 3; ++i) {
            Sample s;
            s.image = Tensor({1, 2, 2});
            s.mask = IntTensor({2, 2});
            s.group_id = "g" + std::to_string(g);
            data.push_back(std::move(s));
        }
    SplitSpec spec;
    spec.group_aware = true;
    auto parts = split(data, spec, 3);
    CHECK(parts[0].size() == 24);  // 8 groups
    CHECK(parts[1].size() == 3);   // 1 group
    CHECK(parts[2].size() == 3);
    CHECK(parts[0].size() + parts[1].size() + parts[2].size() == data.size());

    for (int p = 0; p < 3; ++p)
        for (int q = p + 1; q < 3; ++q)
            for (const auto& a : parts[static_cast<size_t>(p)])
                for (const auto& b : parts[static_cast<size_t>(q)]) CHECK(a.group_id != b.group_id);

    auto again = split(data, spec, 3);
    for (int p = 0; p < 3; ++p) {
        REQUIRE(parts[static_cast<size_t>(p)].size() == again[static_cast<size_t>(p)].size());
        for (size_t i = 0; i < parts[static_cast<size_t>(p)].size(); ++i)
            CHECK(parts[static_cast<size_t>(p)][i].group_id == again[static_cast<size_t>(p)][i].group_id);
    }

    Dataset tiny(data.begin(), data.begin() + 3);  // a single group
    CHECK_THROWS_AS(split(tiny, spec, 1), ConfigError);

    SplitSpec bad;
    bad.train = 0.5;
    bad.val = 0.2;
    bad.test = 0.2;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("manifest round trip preserves quantized images and masks") {
    TempDir tmp;
    const Dataset data = gen_blob_task(3, 16, 16, 21);
    std::vector<ManifestEntry> entries;
    for (size_t i = 0; i < data.size(); ++i) {
        const std::string img = "img" + std::to_string(i) + ".pgm";
        const std::string msk = "mask" + std::to_string(i) + ".pgm";
        save_pgm(tmp.file(img), data[i].image);
        save_mask_pgm(tmp.file(msk), data[i].mask, 2);
        entries.push_back({img, msk, data[i].group_id});
    }
    write_manifest(tmp.file("manifest.json"), entries);
    const Dataset back = load_manifest(tmp.file("manifest.json"));
    REQUIRE(back.size() == data.size());
    for (size_t i = 0; i < data.size(); ++i) {
        CHECK(back[i].group_id == data[i].group_id);
        CHECK(back[i].mask.data() == data[i].mask.data());
        for (size_t j = 0; j < data[i].image.size(); ++j) {
            const float q = static_cast<float>(std::lround(data[i].image.data()[j] * 255.0f)) / 255.0f;
            CHECK(back[i].image.data()[j] == doctest::Approx(q).epsilon(1e-7));
        }
    }
    CHECK_THROWS_AS(load_manifest(tmp.file("missing.json")), DataError);
}
