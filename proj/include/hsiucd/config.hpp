#pragma once

#include "hsiucd/episode.hpp"
#include "hsiucd/extractor.hpp"
#include "hsiucd/louvain.hpp"
#include "hsiucd/optimizer.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hsiucd {

struct SplitConfig {
  std::vector<int> known;    // empty: dataset default split
  std::vector<int> unknown;
  double test_fraction = 0.3;
  double val_fraction = 0.1;
};

struct PrototypeConfig {
  int count = 0;              // 0: dataset default
  double tau = 0.1;
  double resolution = 1.0;
  int top_k = 3;
  int regroup_every = 1;
  int louvain_restarts = kDefaultLouvainRestarts;
  std::string space = "penultimate";  // or "logit"
  bool normalize = true;      // L2-normalize features and prototype rows
};

struct LossWeights {
  double osc = 1.0;
  double ca = 1.0;
  double ps = 1.0;
  double pgs = 1.0;
  double reg = 1.0;
  double kcd = 1.0;
};

struct PretrainConfig {
  int epochs = 50;
  int copies = 20;
  double sigma = 0.01;
  int batch = 64;
  std::string anchor_update = "none";   // "epoch", "final" or "none"
  bool anchor_rescale = true;           // keep each updated anchor at norm phi
  AdamConfig optimizer;
};

/// Every tunable of a run.  Serialized next to each checkpoint and report.
struct RunConfig {
  std::string data;
  std::string output = "run";
  bool normalize_bands = true;
  bool impute_nan = false;
  SplitConfig split;
  int k = 5;
  int d = 0;  // 0: 3k
  ExtractorConfig extractor;  // input_bands / logit_dim 0: derived from the data
  double phi = 10.0;
  double gamma = 0.8;
  PrototypeConfig prototypes;
  LossWeights weights;
  AdamConfig optimizer;
  PretrainConfig pretrain;
  AugmentConfig augment;
  int episodes = 2000;
  int eval_every = 100;
  int checkpoint_every = 0;  // 0: only at the end
  int eval_batch = 256;
  std::uint64_t seed = 0;

  int queries() const { return d > 0 ? d : 3 * k; }
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Strict: unknown keys and wrong types raise std::invalid_argument.
/// Missing keys keep their defaults.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& config, const std::filesystem::path& path);
/// Applies `overrides` (a partial config object) on top of `base`.
RunConfig merge_config(const RunConfig& base, const nlohmann::json& overrides);

/// Dataset default prototype count: 35 (IP, SA), 25 (PU), 40 (WHU), else
/// ceil(2.5 * classes).
int default_prototype_count(const std::string& dataset_name, int class_count);

}  // namespace hsiucd
