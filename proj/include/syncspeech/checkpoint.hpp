#pragma once

// Binary checkpoint, all values little-endian:
//   magic "TMTCKPT\0", u32 version,
//   vocab (3 x i32), model config (8 x u64, 2 x f64), u64 training step,
//   u32 tensor count, per tensor: u32 name length, name, u32 rank, u64 dims, f64 values,
//   u8 optimizer flag, then (flag = 1) u64 optimizer step and per tensor its
//   first-moment and second-moment values.

#include "syncspeech/corpus.hpp"
#include "syncspeech/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

namespace syncspeech {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct Checkpoint {
  VocabLayout vocab;
  ModelParams params;
  std::optional<AdamState> optimizer;
  std::uint64_t step = 0;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes to a sibling temp file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace syncspeech
