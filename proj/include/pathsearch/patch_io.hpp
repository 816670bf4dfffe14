#pragma once

// Patch-embedding files. Binary layout ("PEMB"), little-endian:
//   magic "PEMB" | u32 version = 1 | u32 N | u32 C | N*C f32 row-major
// The CSV fallback holds one patch per line, comma-separated reals.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pathsearch/core.hpp"

namespace pathsearch {

std::vector<std::uint8_t> encode_pemb(const PatchEmbeddingMatrix& patches);
PatchEmbeddingMatrix decode_pemb(std::span<const std::uint8_t> bytes);

void write_pemb(const std::filesystem::path& path, const PatchEmbeddingMatrix& patches);
PatchEmbeddingMatrix read_pemb(const std::filesystem::path& path);

PatchEmbeddingMatrix read_patch_csv(const std::filesystem::path& path);

/// Sniffs the PEMB magic and falls back to CSV otherwise.
PatchEmbeddingMatrix read_patches(const std::filesystem::path& path);

}  // namespace pathsearch
