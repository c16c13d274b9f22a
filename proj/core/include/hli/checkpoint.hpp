#ifndef HLI_CHECKPOINT_HPP_
#define HLI_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <string>

#include "hli/model.hpp"

namespace hli {

struct CheckpointMeta {
  std::string role = "student";  // "student" | "teacher"
  std::int64_t step = 0;
  std::string config_hash;
  ArchConfig arch;
};

// Writes <path>.json (manifest: name, shape, dtype, byte offset per tensor,
// role, step, config hash, architecture) and <path>.bin (raw little-endian
// float64 payload, tensors back to back in manifest order).
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  ModelParams params;
  CheckpointMeta meta;
};

// Accepts either the stem or the .json path. Verifies that the payload size
// matches the manifest and that every tensor shape agrees with its record.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// As above, additionally requiring the schema of `expected`.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelParams& expected);

}  // namespace hli

#endif  // HLI_CHECKPOINT_HPP_
