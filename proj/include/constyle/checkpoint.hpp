#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "constyle/trainer.hpp"

namespace constyle {

inline constexpr char kCheckpointMagic[8] = {'C', 'S', 'T', 'Y', 'L', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Decoded checkpoint file. Tensor names carry a prefix: encoder., momentum.,
/// net., adam.m.<group>. or adam.v.<group>.
struct CheckpointData {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::uint64_t iteration = 0;
  std::uint64_t optimizer_steps = 0;
  std::uint64_t queue_capacity = 0;
  std::uint64_t queue_dim = 0;
  std::uint64_t queue_total_pushed = 0;
  std::vector<double> queue_codes;  // oldest first
  nlohmann::json config;
};

/// Little-endian binary: magic, u32 version, u64 tensor count, tensors
/// (u32 name length, name, u8 rank, u64 dims, f32 values), the trainer/queue
/// block and the config as a length-prefixed JSON string. Written atomically.
void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer);

/// IoError if unreadable, CheckpointVersionError on a version mismatch,
/// CheckpointError for anything malformed.
CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Trainer rebuilt from the config echo with every piece of state restored.
Trainer load_trainer(const std::filesystem::path& path);

/// Copies the checkpointed state into an existing trainer with the same architecture.
void restore_trainer(Trainer& trainer, const CheckpointData& data);

}  // namespace constyle
