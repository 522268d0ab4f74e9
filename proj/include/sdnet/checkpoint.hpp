#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sdnet/params.hpp"

namespace sdnet {

// Checkpoint archive: magic "SDNT", format version u32 LE, entry count u32 LE,
// then per entry: name_len u32, UTF-8 name, dtype u8 (0 = f32), ndim u8,
// dims u32 x ndim, little-endian f32 payload; a CRC32 of all preceding bytes
// trails the file. Round trips are bit-exact.

constexpr uint32_t kCheckpointVersion = 1;

uint32_t crc32(const uint8_t* data, size_t n);

void save_checkpoint(const std::string& path, const ParamStore& params);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

// Loads a checkpoint into an existing store; every store entry must be
// present with a matching shape.
void apply_checkpoint(ParamStore& params, const std::string& path);

}  // namespace sdnet
