#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "vidiff/denoiser.hpp"

namespace vidiff {

struct CheckpointManifest {
    std::string config_hash;
    long step = 0;
    std::uint64_t seed = 0;
};

struct Checkpoint {
    DenoiserConfig config;
    DenoiserParams params;
    CheckpointManifest manifest;
};

/// Single-file archive: an 8-byte magic, a little-endian u64 length, a JSON
/// manifest (config, hash, step, seed, array table) and the float32 arrays
/// in table order. Loading reproduces every array bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws IoError when the file is missing or malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vidiff
