#pragma once

// Binary checkpoint: magic, version, model config, array manifest (name,
// group, trainable flag, element type, shape), little-endian float64
// payloads, frozen-group table, FNV-1a trailer over everything before it.

#include <filesystem>

#include "maskrec/model.hpp"

namespace maskrec::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Throws IoError if the file cannot be written.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);

/// Throws IoError for a missing/unreadable file and FormatError for a
/// truncated, corrupt or self-inconsistent one. Never returns partial params.
ModelParams load_checkpoint(const std::filesystem::path& path);

/// As above, and additionally requires every array to match `expected` in
/// name and shape; the FormatError names the first mismatching array.
ModelParams load_checkpoint(const std::filesystem::path& path, const ModelParams& expected);

/// Throws FormatError naming the first array whose shape differs.
void check_compatible(const ModelParams& loaded, const ModelParams& expected);

}  // namespace maskrec::model
