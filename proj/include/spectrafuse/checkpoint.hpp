// SPDX-License-Identifier: Apache-2.0
//
// "TVLB" checkpoint bundles: parameters keyed by path name, optimizer
// moments, RNG state, step counter and the configuration fingerprint.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spectrafuse/pipeline.hpp"

namespace spectrafuse {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBundle {
  struct Record {
    std::string name;
    Tensor value;
  };
  struct MomentSlot {
    std::string name;
    Tensor m;
    Tensor v;
  };
  struct GroupState {
    std::string name;
    std::uint64_t step = 0;
    std::vector<MomentSlot> slots;
  };

  std::uint32_t version = kCheckpointVersion;
  std::uint64_t fingerprint = 0;
  std::string config_text;
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<Record> params;
  std::vector<GroupState> groups;  // empty for model-only bundles
};

/// Snapshot of every model parameter (no optimizer state).
CheckpointBundle capture_model(const TrainConfig& cfg, Model& model);
/// Snapshot of parameters, optimizer moments, RNG and step counter.
CheckpointBundle capture_state(TrainingState& state);

std::vector<std::uint8_t> encode_checkpoint(const CheckpointBundle& bundle);
/// ParseError (with byte offset) on malformed or truncated input,
/// VersionError on an unknown format version.
CheckpointBundle decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const CheckpointBundle& bundle);
CheckpointBundle load_checkpoint(const std::string& path);

/// Copies the bundle into `model`. Every check (fingerprint, names, shapes)
/// runs before any tensor is touched. VersionError on a fingerprint
/// mismatch, reporting both values.
void restore_model(const CheckpointBundle& bundle, const TrainConfig& cfg, Model& model);
/// As restore_model, plus optimizer moments, group steps, RNG and step.
/// ContractError if the bundle carries no optimizer state.
void restore_state(const CheckpointBundle& bundle, TrainingState& state);

}  // namespace spectrafuse
