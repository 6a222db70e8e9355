#pragma once

#include <filesystem>

#include "fbn/search_space.hpp"

namespace fbn {

// Supernet checkpoint: one binary file plus a JSON manifest sidecar
// (<path>.manifest.json) listing entry names and shapes.
//
// Binary layout, little-endian:
//   magic "FBNS" | u32 version | u64 config_digest | u32 entry_count
//   per entry: u32 name_len | name bytes | u8 kind | u32 ndim | u64 dims...
//              | f64 payload
// kind 0 = parameter tensor, kind 1 = BN statistics block
// (running mean, running var, then the stats log as [entries][2][channels]).
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(Supernet& net, const std::filesystem::path& path);

// Loads into an already-built supernet; throws on digest or shape mismatch.
void load_checkpoint(Supernet& net, const std::filesystem::path& path);

uint64_t checkpoint_digest(const std::filesystem::path& path);

} // namespace fbn
