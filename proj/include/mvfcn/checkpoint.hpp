#pragma once

// Binary checkpoint container, little-endian throughout:
//
//   "MVFC" | u32 version | u64 graph fingerprint | u32 entry count
//   entry: u16 layer id | u8 role | u8 rank | u32 dims[rank] | 32-bit words[prod(dims)]
//   u64 FNV-1a checksum of every preceding byte
//
// Parameter payloads are IEEE-754 binary32. Roles 0-5 are model tensors
// (see ParamRole); the training loop adds optimizer moments (16+r, 32+r),
// the best-so-far snapshot (48+r) and raw state words (64+).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mvfcn/graph.hpp"

namespace mvfcn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace checkpoint_role {
inline constexpr std::uint8_t kAdamM = 16;
inline constexpr std::uint8_t kAdamV = 32;
inline constexpr std::uint8_t kBest = 48;
inline constexpr std::uint8_t kTrainState = 64;
inline constexpr std::uint8_t kRngState = 65;
inline constexpr std::uint8_t kHistory = 66;
}  // namespace checkpoint_role

struct CheckpointEntry {
  std::uint16_t layer = 0;
  std::uint8_t role = 0;
  std::vector<std::uint32_t> dims;
  /// Raw 32-bit words; float payloads are stored by bit pattern.
  std::vector<std::uint32_t> words;

  std::vector<float> floats() const;
  static CheckpointEntry from_floats(std::uint16_t layer, std::uint8_t role,
                                     std::vector<std::uint32_t> dims, std::span<const float> v);
  bool operator==(const CheckpointEntry&) const = default;
};

struct Checkpoint {
  std::uint64_t fingerprint = 0;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(std::uint16_t layer, std::uint8_t role) const;
  CheckpointEntry* find(std::uint16_t layer, std::uint8_t role);
  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic, unknown version, truncation or a
/// checksum mismatch.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Model tensors (including batch-norm running statistics) and, optionally,
/// the generator position.
Checkpoint make_checkpoint(const ModelGraph& graph, const ModelParams<float>& params,
                           std::optional<std::uint64_t> rng_state = std::nullopt);

/// Appends the tensors of `params` under role offset `role_base`.
void append_params(Checkpoint& ckpt, const ModelParams<float>& params, std::uint8_t role_base);

/// Extracts model tensors stored under `role_base`. Every tensor the graph
/// needs must be present with the exact shape; anything else refuses with an
/// error naming the offending layer. Batch-norm statistics count as loaded.
ModelParams<float> params_from_checkpoint(const Checkpoint& ckpt, const ModelGraph& graph,
                                          std::uint8_t role_base = 0);

std::optional<std::uint64_t> rng_state_of(const Checkpoint& ckpt);

void save_checkpoint(const ModelGraph& graph, const ModelParams<float>& params,
                     std::optional<std::uint64_t> rng_state, const std::filesystem::path& path);

/// Reads, verifies the graph fingerprint, and extracts the parameters.
ModelParams<float> load_checkpoint(const std::filesystem::path& path, const ModelGraph& graph);

}  // namespace mvfcn
