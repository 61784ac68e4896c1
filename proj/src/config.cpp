#include "hsiucd/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace hsiucd {

using nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SplitConfig, known, unknown,
                                                test_fraction, val_fraction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PrototypeConfig, count, tau, resolution, top_k,
                                                regroup_every, louvain_restarts, space, normalize)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, osc, ca, ps, pgs, reg, kcd)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamConfig, lr, beta1, beta2, eps, weight_decay, cosine,
                                                min_lr)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PretrainConfig, epochs, copies, sigma, batch,
                                                anchor_update, anchor_rescale, optimizer)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentConfig, weak_sigma, strong_sigma, flips, crop_min,
                                                crop_max, jitter_low, jitter_high)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExtractorConfig, patch_size, input_bands, reduced_bands,
                                                block1_channels, block2_channels, final_channels,
                                                logit_dim)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, data, output, normalize_bands, impute_nan,
                                                split, k, d, extractor, phi, gamma, prototypes, weights,
                                                optimizer, pretrain, augment, episodes, eval_every,
                                                checkpoint_every, eval_batch, seed)

namespace {

// Every key of `given` must exist in `schema`, recursively through objects.
void check_keys(const json& given, const json& schema, const std::string& prefix) {
  if (!given.is_object()) throw std::invalid_argument("config" + prefix + " must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key())) throw std::invalid_argument("unknown config key '" + key + "'");
    if (schema[it.key()].is_object()) check_keys(it.value(), schema[it.key()], key);
  }
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid config: " + m); };
  if (k < 1) fail("k must be at least 1");
  if (d < 0) fail("d must be non-negative");
  if (!(phi > 0.0)) fail("phi must be positive");
  if (!(gamma >= 0.0)) fail("gamma must be non-negative");
  if (!(prototypes.tau > 0.0)) fail("prototypes.tau must be positive");
  if (prototypes.count < 0) fail("prototypes.count must be non-negative");
  if (prototypes.top_k < 1) fail("prototypes.top_k must be positive");
  if (prototypes.regroup_every < 1) fail("prototypes.regroup_every must be positive");
  if (prototypes.louvain_restarts < 1) fail("prototypes.louvain_restarts must be positive");
  if (prototypes.space != "penultimate" && prototypes.space != "logit") {
    fail("prototypes.space must be 'penultimate' or 'logit'");
  }
  if (episodes < 0) fail("episodes must be non-negative");
  if (eval_every < 1) fail("eval_every must be positive");
  if (checkpoint_every < 0) fail("checkpoint_every must be non-negative");
  if (eval_batch < 1) fail("eval_batch must be positive");
  if (pretrain.epochs < 0 || pretrain.copies < 1 || pretrain.batch < 1) fail("pretrain settings");
  if (pretrain.anchor_update != "epoch" && pretrain.anchor_update != "final" && pretrain.anchor_update != "none") {
    fail("pretrain.anchor_update must be 'epoch', 'final' or 'none'");
  }
  if (split.test_fraction < 0.0 || split.val_fraction < 0.0 ||
      split.test_fraction + split.val_fraction >= 1.0) {
    fail("split fractions must be non-negative and sum below 1");
  }
  if (extractor.patch_size < 1 || extractor.patch_size % 2 == 0) fail("extractor.patch_size must be odd");
  for (double w : {weights.osc, weights.ca, weights.ps, weights.pgs, weights.reg, weights.kcd}) {
    if (!(w >= 0.0)) fail("loss weights must be non-negative");
  }
}

json to_json(const RunConfig& config) {
  json j = config;
  return j;
}

RunConfig config_from_json(const json& j) {
  check_keys(j, to_json(RunConfig{}), "");
  RunConfig c;
  try {
    c = j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(config).dump(2) << "\n";
}

RunConfig merge_config(const RunConfig& base, const json& overrides) {
  check_keys(overrides, to_json(RunConfig{}), "");
  json j = to_json(base);
  j.merge_patch(overrides);
  return config_from_json(j);
}

int default_prototype_count(const std::string& dataset_name, int class_count) {
  std::string n = dataset_name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (n == "ip" || n == "sa" || n.find("indian") != std::string::npos || n.find("salinas") != std::string::npos) {
    return 35;
  }
  if (n == "pu" || n.find("pavia") != std::string::npos) return 25;
  if (n.find("whu") != std::string::npos || n.find("hanchuan") != std::string::npos) return 40;
  return static_cast<int>(std::ceil(2.5 * class_count));
}

}  // namespace hsiucd
