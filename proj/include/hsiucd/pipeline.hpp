#pragma once

#include "hsiucd/config.hpp"
#include "hsiucd/cube.hpp"
#include "hsiucd/episode.hpp"
#include "hsiucd/evaluation.hpp"
#include "hsiucd/training.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

namespace hsiucd {

using Coords = std::vector<std::pair<int, int>>;

/// Loaded, imputed and normalized cube plus the resolved class split.
struct PreparedData {
  HsiCube cube;
  ClassSplit split;
};
PreparedData prepare_data(const RunConfig& config);
ClassSplit resolve_split(const RunConfig& config, const HsiCube& cube);

/// Disjoint train / validation / test pixels.  Each class keeps at least
/// the pixels an episode needs in train (k + d for known, d for unknown).
struct PixelSplit {
  PixelPool train;
  Coords val;
  Coords test;
};
PixelSplit split_pixels(const HsiCube& cube, const ClassSplit& split, const RunConfig& config);

/// Eval-mode embeddings of the pixels at `coords`, built in batches.
EmbeddingBatch embed_pixels(TrainState& state, const HsiCube& cube, const Coords& coords, int batch_size);
Truth truth_for(const HsiCube& cube, const ClassSplit& split, const Coords& coords);
EvalReport evaluate_pixels(TrainState& state, const HsiCube& cube, const Coords& coords);

struct FitOptions {
  bool resume = false;          // continue from <output>/checkpoint when present
  bool pretrain_only = false;   // stop after pre-training (checkpoint at episode 0)
  std::ostream* progress = nullptr;
  std::function<void(const TrainState&, const EpisodeStats&)> on_episode;
};

struct FitResult {
  TrainState state;
  std::vector<nlohmann::json> history;  // eval records written during this call
  std::optional<EvalReport> test_report;
};

/// Pre-training then episodic training, writing under config.output:
/// config.json, metrics.jsonl, checkpoint/ (latest), best/ (best
/// validation ALL ACC) and report.json (test split, final state).
FitResult fit(const RunConfig& config, const FitOptions& options = {});

}  // namespace hsiucd
