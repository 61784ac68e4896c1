#pragma once

#include "hsiucd/training.hpp"

#include "json.hpp"

#include <filesystem>

namespace hsiucd {

inline constexpr int kCheckpointVersion = 1;

/// Writes extractor.bin, anchors.bin, prototypes.bin, partition.json,
/// optimizer.bin and manifest.json into `dir` (created if needed).
/// `extra` is merged into the manifest.
void save_checkpoint(const TrainState& state, const std::filesystem::path& dir,
                     const nlohmann::json& extra = nlohmann::json::object());

struct LoadedCheckpoint {
  TrainState state;
  nlohmann::json manifest;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace hsiucd
