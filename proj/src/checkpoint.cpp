#include "sdnet/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <map>

namespace sdnet {

uint32_t crc32(const uint8_t* data, size_t n) {
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int b = 0; b < 8; ++b) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t crc = 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

namespace {

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
    buf.push_back(static_cast<uint8_t>(v & 0xFF));
    buf.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
    buf.push_back(static_cast<uint8_t>((v >> 16) & 0xFF));
    buf.push_back(static_cast<uint8_t>((v >> 24) & 0xFF));
}

struct Reader {
    const std::vector<uint8_t>& buf;
    const std::string& path;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw DataError(path + ": truncated checkpoint reading " + what + " at byte " +
                            std::to_string(pos));
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = static_cast<uint32_t>(buf[pos]) | (static_cast<uint32_t>(buf[pos + 1]) << 8) |
                     (static_cast<uint32_t>(buf[pos + 2]) << 16) |
                     (static_cast<uint32_t>(buf[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return buf[pos++];
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
    std::vector<uint8_t> buf;
    buf.insert(buf.end(), {'S', 'D', 'N', 'T'});
    put_u32(buf, kCheckpointVersion);
    put_u32(buf, static_cast<uint32_t>(params.size()));
    for (const auto& e : params.entries()) {
        put_u32(buf, static_cast<uint32_t>(e.name.size()));
        buf.insert(buf.end(), e.name.begin(), e.name.end());
        buf.push_back(0);  // dtype f32
        buf.push_back(static_cast<uint8_t>(e.tensor.rank()));
        for (int d : e.tensor.shape()) put_u32(buf, static_cast<uint32_t>(d));
        const size_t off = buf.size();
        buf.resize(off + e.tensor.size() * 4);
        std::memcpy(buf.data() + off, e.tensor.ptr(), e.tensor.size() * 4);
    }
    put_u32(buf, crc32(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("short write to checkpoint '" + path + "'");
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 16) throw DataError(path + ": too short for a checkpoint");
    const uint32_t stored_crc = static_cast<uint32_t>(buf[buf.size() - 4]) |
                                (static_cast<uint32_t>(buf[buf.size() - 3]) << 8) |
                                (static_cast<uint32_t>(buf[buf.size() - 2]) << 16) |
                                (static_cast<uint32_t>(buf[buf.size() - 1]) << 24);
    if (crc32(buf.data(), buf.size() - 4) != stored_crc)
        throw DataError(path + ": CRC mismatch, checkpoint is corrupt");

    Reader r{buf, path};
    r.need(4, "magic");
    if (std::memcmp(buf.data(), "SDNT", 4) != 0) throw DataError(path + ": bad magic, not a checkpoint");
    r.pos = 4;
    const uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = r.u32("entry count");

    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = r.u32("name length");
        r.need(name_len, "name");
        std::string name(reinterpret_cast<const char*>(buf.data() + r.pos), name_len);
        r.pos += name_len;
        const uint8_t dtype = r.u8("dtype");
        if (dtype != 0) throw DataError(path + ": unsupported dtype code " + std::to_string(dtype));
        const uint8_t ndim = r.u8("ndim");
        Shape shape(ndim);
        for (uint8_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(r.u32("dimension"));
        const size_t numel = static_cast<size_t>(shape_numel(shape));
        r.need(numel * 4, "payload");
        std::vector<float> data(numel);
        std::memcpy(data.data(), buf.data() + r.pos, numel * 4);
        r.pos += numel * 4;
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    if (r.pos != buf.size() - 4)
        throw DataError(path + ": trailing bytes after last entry at offset " + std::to_string(r.pos));
    return out;
}

void apply_checkpoint(ParamStore& params, const std::string& path) {
    auto entries = load_checkpoint(path);
    std::map<std::string, Tensor*> by_name;
    for (auto& e : entries) by_name.emplace(e.first, &e.second);
    for (auto& e : params.entries()) {
        auto it = by_name.find(e.name);
        if (it == by_name.end())
            throw DataError(path + ": checkpoint is missing parameter '" + e.name + "'");
        if (it->second->shape() != e.tensor.shape())
            throw DataError(path + ": shape mismatch for '" + e.name + "': checkpoint " +
                            shape_str(it->second->shape()) + " vs model " +
                            shape_str(e.tensor.shape()));
        e.tensor = *it->second;
    }
}

}  // namespace sdnet
