#pragma once

// Checkpoint container: 8-byte magic "CATFLOW1", little-endian uint64 header
// length, a JSON header (format_version, dtype, endianness, step, config,
// rng state, tensor table of name/shape/offset/count), then raw little-endian
// float64 payloads in header order.

#include "catflow/trainer.hpp"

#include <string>

namespace catflow {

inline constexpr int kCheckpointVersion = 1;

// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const std::string& path, const ModelState& state);

// Throws CheckpointError on bad magic, version or shape mismatch, and
// truncated or trailing data.
ModelState load_checkpoint(const std::string& path);

// Field-for-field equality, including RNG and optimizer state.
bool same_state(const ModelState& a, const ModelState& b);

}  // namespace catflow
