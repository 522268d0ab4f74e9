#include "sdnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"

namespace sdnet {

Dataset gen_stripe_task(int n, int height, int width, uint64_t seed) {
    if (height < 16 || width < 16)
        throw ConfigError("gen_stripe_task: H and W must be >= 16, got " + std::to_string(height) +
                          "x" + std::to_string(width));
    Rng rng(seed ^ 0x5741759eULL);
    Dataset out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Tensor image({1, height, width});
        IntTensor mask({height, width});
        auto& img = image.mutable_data();
        for (float& v : img) v = 0.3f * rng.unit();
        const int row = static_cast<int>(rng.index(static_cast<size_t>(height)));
        const int cue_span = std::min(4, width - 5);
        const int cue_start = static_cast<int>(rng.index(static_cast<size_t>(cue_span + 1)));
        for (int c = 0; c < 5; ++c)
            img[static_cast<size_t>(row) * width + cue_start + c] = 1.0f;
        auto& m = mask.mutable_data();
        for (int w = 0; w < width; ++w) m[static_cast<size_t>(row) * width + w] = 1;
        out.push_back({std::move(image), std::move(mask), "stripe" + std::to_string(i)});
    }
    return out;
}

Dataset gen_blob_task(int n, int height, int width, uint64_t seed) {
    if (height < 16 || width < 16)
        throw ConfigError("gen_blob_task: H and W must be >= 16, got " + std::to_string(height) +
                          "x" + std::to_string(width));
    Rng rng(seed ^ 0xb10bULL);
    Dataset out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Tensor image({1, height, width});
        IntTensor mask({height, width});
        const float cx = (0.25f + 0.5f * rng.unit()) * static_cast<float>(width);
        const float cy = (0.25f + 0.5f * rng.unit()) * static_cast<float>(height);
        const float rx = (0.10f + 0.15f * rng.unit()) * static_cast<float>(width);
        const float ry = (0.10f + 0.15f * rng.unit()) * static_cast<float>(height);
        auto& img = image.mutable_data();
        auto& m = mask.mutable_data();
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const float dx = (static_cast<float>(x) - cx) / rx;
                const float dy = (static_cast<float>(y) - cy) / ry;
                const float d = dx * dx + dy * dy;
                const float edge = 1.0f / (1.0f + std::exp(6.0f * (d - 1.0f)));
                const float v = 0.3f * rng.unit() * (1.0f - edge) + edge;
                img[static_cast<size_t>(y) * width + x] = std::min(1.0f, std::max(0.0f, v));
                m[static_cast<size_t>(y) * width + x] = d <= 1.0f ? 1 : 0;
            }
        out.push_back({std::move(image), std::move(mask), "blob" + std::to_string(i)});
    }
    return out;
}

namespace {

struct PgmHeader {
    int width, height;
    size_t payload_offset;
};

PgmHeader parse_pgm_header(const std::vector<unsigned char>& buf, const std::string& path) {
    size_t pos = 0;
    auto fail = [&](const std::string& what) {
        throw DataError(path + ": " + what + " at byte offset " + std::to_string(pos));
    };
    auto skip_space = [&]() {
        while (pos < buf.size()) {
            if (std::isspace(buf[pos])) {
                ++pos;
            } else if (buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() {
        skip_space();
        if (pos >= buf.size() || !std::isdigit(buf[pos])) fail("expected integer");
        long v = 0;
        while (pos < buf.size() && std::isdigit(buf[pos])) {
            v = v * 10 + (buf[pos] - '0');
            if (v > 1 << 20) fail("integer out of range");
            ++pos;
        }
        return static_cast<int>(v);
    };

    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5') fail("not a binary P5 PGM");
    pos = 2;
    PgmHeader h{};
    h.width = read_int();
    h.height = read_int();
    const int maxval = read_int();
    if (h.width <= 0 || h.height <= 0) fail("non-positive dimensions");
    if (maxval != 255) fail("unsupported maxval " + std::to_string(maxval) + " (must be 255)");
    if (pos >= buf.size() || !std::isspace(buf[pos])) fail("expected single whitespace after maxval");
    ++pos;
    const size_t need = static_cast<size_t>(h.width) * static_cast<size_t>(h.height);
    if (buf.size() - pos < need) {
        pos = buf.size();
        fail("truncated payload, need " + std::to_string(need) + " bytes");
    }
    h.payload_offset = pos;
    return h;
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                      std::istreambuf_iterator<char>());
}

}  // namespace

Tensor load_pgm(const std::string& path) {
    const auto buf = read_file(path);
    const PgmHeader h = parse_pgm_header(buf, path);
    Tensor out({1, h.height, h.width});
    auto& d = out.mutable_data();
    for (size_t i = 0; i < d.size(); ++i)
        d[i] = static_cast<float>(buf[h.payload_offset + i]) / 255.0f;
    return out;
}

void save_pgm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 1)
        throw ShapeError("save_pgm: expected [1,H,W], got " + shape_str(image.shape()));
    const int H = image.dim(1), W = image.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "P5\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<size_t>(H) * W);
    for (size_t i = 0; i < bytes.size(); ++i) {
        const float v = std::min(1.0f, std::max(0.0f, image.data()[i]));
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

IntTensor load_mask_pgm(const std::string& path) {
    const auto buf = read_file(path);
    const PgmHeader h = parse_pgm_header(buf, path);
    const size_t n = static_cast<size_t>(h.width) * h.height;
    // 0 stays class 0; distinct nonzero values become classes 1.. in value order
    std::map<unsigned char, int32_t> classes;
    for (size_t i = 0; i < n; ++i) {
        const unsigned char v = buf[h.payload_offset + i];
        if (v != 0) classes.emplace(v, 0);
    }
    int32_t next = 1;
    for (auto& kv : classes) kv.second = next++;
    IntTensor out({h.height, h.width});
    auto& d = out.mutable_data();
    for (size_t i = 0; i < n; ++i) {
        const unsigned char v = buf[h.payload_offset + i];
        d[i] = v == 0 ? 0 : classes[v];
    }
    return out;
}

void save_mask_pgm(const std::string& path, const IntTensor& mask, int num_classes) {
    if (mask.rank() != 2) throw ShapeError("save_mask_pgm: expected [H,W], got " + shape_str(mask.shape()));
    if (num_classes < 2) throw ConfigError("save_mask_pgm: need at least 2 classes");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "P5\n" << mask.dim(1) << " " << mask.dim(0) << "\n255\n";
    std::vector<unsigned char> bytes(mask.size());
    for (size_t i = 0; i < bytes.size(); ++i) {
        const int32_t c = mask.data()[i];
        if (c < 0 || c >= num_classes)
            throw DataError("save_mask_pgm: label " + std::to_string(c) + " outside 0.." +
                            std::to_string(num_classes - 1));
        bytes[i] = static_cast<unsigned char>(c * 255 / (num_classes - 1));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor clip_rescale(const Tensor& x, float lo, float hi) {
    if (lo > hi) throw ConfigError("clip_rescale: lo > hi");
    Tensor out(x.shape());
    auto& d = out.mutable_data();
    if (lo == hi) return out;  // all zeros by the degenerate-range rule
    const float span = hi - lo;
    for (size_t i = 0; i < d.size(); ++i) {
        const float v = std::min(hi, std::max(lo, x.data()[i]));
        d[i] = (v - lo) / span;
    }
    return out;
}

void SplitSpec::validate() const {
    if (train < 0 || val < 0 || test < 0) throw ConfigError("split: fractions must be nonnegative");
    if (std::fabs(train + val + test - 1.0) > 1e-9)
        throw ConfigError("split: fractions must sum to 1");
}

std::array<Dataset, 3> split(const Dataset& dataset, const SplitSpec& spec, uint64_t seed) {
    spec.validate();
    // Unit of assignment: groups when group_aware, individual samples otherwise.
    std::vector<std::string> groups;
    std::map<std::string, size_t> group_index;
    std::vector<size_t> sample_group(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
        const std::string key = spec.group_aware ? dataset[i].group_id : std::to_string(i);
        auto it = group_index.find(key);
        if (it == group_index.end()) {
            it = group_index.emplace(key, groups.size()).first;
            groups.push_back(key);
        }
        sample_group[i] = it->second;
    }
    const size_t G = groups.size();
    const std::array<double, 3> fractions{spec.train, spec.val, spec.test};
    size_t nonzero = 0;
    for (double f : fractions)
        if (f > 0) ++nonzero;
    if (G < nonzero)
        throw ConfigError("split: only " + std::to_string(G) + " groups for " +
                          std::to_string(nonzero) + " partitions");

    // Largest-remainder quotas over groups.
    std::array<size_t, 3> quota{};
    std::array<double, 3> remainder{};
    size_t assigned = 0;
    for (int p = 0; p < 3; ++p) {
        const double ideal = fractions[static_cast<size_t>(p)] * static_cast<double>(G);
        quota[static_cast<size_t>(p)] = static_cast<size_t>(std::floor(ideal));
        remainder[static_cast<size_t>(p)] = ideal - std::floor(ideal);
        assigned += quota[static_cast<size_t>(p)];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return remainder[static_cast<size_t>(a)] > remainder[static_cast<size_t>(b)]; });
    for (size_t extra = 0; extra < G - assigned; ++extra)
        ++quota[static_cast<size_t>(order[extra % 3])];

    std::vector<size_t> perm(G);
    for (size_t i = 0; i < G; ++i) perm[i] = i;
    Rng rng(seed ^ 0x5b17ULL);
    rng.shuffle(perm.begin(), perm.end());

    std::vector<int> group_part(G);
    size_t cursor = 0;
    for (int p = 0; p < 3; ++p)
        for (size_t q = 0; q < quota[static_cast<size_t>(p)]; ++q) group_part[perm[cursor++]] = p;

    std::array<Dataset, 3> out;
    for (size_t i = 0; i < dataset.size(); ++i)
        out[static_cast<size_t>(group_part[sample_group[i]])].push_back(dataset[i]);
    return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& e : entries)
        j.push_back({{"image_path", e.image_path}, {"mask_path", e.mask_path}, {"group_id", e.group_id}});
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest '" + path + "'");
    out << j.dump(2) << "\n";
}

Dataset load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest '" + path + "': " + e.what());
    }
    if (!j.is_array()) throw DataError("manifest '" + path + "': expected a JSON array");
    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    Dataset out;
    for (const auto& e : j) {
        for (const auto& key : {"image_path", "mask_path", "group_id"})
            if (!e.contains(key))
                throw DataError("manifest '" + path + "': entry missing '" + key + "'");
        Sample s;
        s.image = load_pgm(resolve(e.at("image_path").get<std::string>()));
        s.mask = load_mask_pgm(resolve(e.at("mask_path").get<std::string>()));
        s.group_id = e.at("group_id").get<std::string>();
        if (s.image.dim(1) != s.mask.dim(0) || s.image.dim(2) != s.mask.dim(1))
            throw DataError("manifest '" + path + "': image/mask size mismatch for group " +
                            s.group_id);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace sdnet
