#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "bdh/model.hpp"

namespace bdh {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedVersion : CheckpointError {
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian):
//   "BDHC" | u32 version | u64 meta_len | meta (UTF-8 JSON: config, step)
//   u64 tensor_count | per tensor: u64 name_len | name | u64 rank | u64 extents[rank] | f32 payload
// Written to a temporary file in the same directory, then renamed into place.
void save_checkpoint(const ModelParams& params, std::uint64_t step, const std::string& path);

struct LoadedCheckpoint {
  ModelParams params;
  std::uint64_t step = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace bdh
