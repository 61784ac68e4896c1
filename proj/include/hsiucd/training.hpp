#pragma once

#include "hsiucd/anchor.hpp"
#include "hsiucd/config.hpp"
#include "hsiucd/cube.hpp"
#include "hsiucd/episode.hpp"
#include "hsiucd/extractor.hpp"
#include "hsiucd/optimizer.hpp"
#include "hsiucd/prototypes.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace hsiucd {

/// Everything needed to continue training or to run inference.
struct TrainState {
  RunConfig config;
  ClassSplit split;
  FeatureExtractor extractor;
  AnchorSet anchors;
  PrototypeSet prototypes;
  PrototypeGroups groups;
  Adam optimizer;  // episodic phase: extractor parameters, then prototypes
  int pretrain_epochs = 0;
  long episode = 0;

  int known_count() const { return static_cast<int>(split.known_ids.size()); }
  /// Features the prototypes live on, as selected by config.prototypes.
  Mat prototype_features(const EmbeddingBatch& batch) const;
};

/// Builds a fresh state for a cube with `bands` bands.  Extractor
/// input_bands / logit_dim and the prototype count are resolved here.
TrainState init_state(const RunConfig& config, const ClassSplit& split, int bands,
                      const std::string& dataset_name, int class_count);

struct LossBreakdown {
  double osc = 0.0, ca = 0.0, ps = 0.0, pgs = 0.0, reg = 0.0, kcd = 0.0;
  double class_loss = 0.0;  // osc + ca
  double disc = 0.0;        // ps + pgs + reg + kcd
  double total = 0.0;       // class_loss + disc
  double objective = 0.0;   // weighted sum that is actually minimized

  nlohmann::json to_json() const;
};

struct PretrainEpoch {
  int epoch = 0;
  double osc = 0.0;
  double ca = 0.0;
  double class_loss = 0.0;
};

/// Open-set pre-training: each epoch minimizes osc + ca over the pool in
/// shuffled mini-batches, then moves each known anchor to the softmin
/// estimate of that epoch's distances.  Pool labels are class ids.
std::vector<PretrainEpoch> pretrain(TrainState& state, const std::vector<Patch>& pool, int epochs,
                                    const std::function<void(const PretrainEpoch&)>& on_epoch = {});

struct EpisodeStats {
  LossBreakdown losses;
  int support = 0;
  int queries = 0;
  int groups = 0;   // Louvain communities
  int classes = 0;  // estimate_class_count
  int kcd_skipped = 0;
  bool regrouped = false;
};

/// One episodic step: weak/strong views, anchor losses over all views,
/// prototype assignment and pair losses, group losses, Louvain regrouping,
/// then a single optimizer step on the weighted total.
EpisodeStats train_episode(TrainState& state, const Episode& episode, std::uint64_t seed);

}  // namespace hsiucd
