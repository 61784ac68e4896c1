#pragma once

#include "hsiucd/cube.hpp"
#include "hsiucd/training.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hsiucd {

/// Per-sample inference results.  For every row exactly one of
/// known_class / cluster is set (>= 0), selected by `rejected`.
struct Predictions {
  std::vector<int> known_class;  // known index, -1 when rejected
  std::vector<int> cluster;      // discovered group id, -1 when accepted
  std::vector<char> rejected;
  Mat distances;                 // (n, N) anchor distances
  Mat group_probs;               // (n, groups)
  bool fallback = false;         // rejected rows existed but no unknown group

  std::size_t size() const { return rejected.size(); }
};

/// Nearest-anchor classification; rows closest to the unknown anchor are
/// clustered over the unknown prototype groups.
Predictions predict(TrainState& state, std::span<const Patch> patches, int batch_size = 256);
/// Same from precomputed embeddings (eval-mode network output).
Predictions predict_from_embeddings(const TrainState& state, const EmbeddingBatch& emb);

/// Truth labels use one space: 0..known-1 are known indices, known + u is
/// unknown class u.
struct Truth {
  std::vector<int> label;
  int known_count = 0;
  int unknown_count = 0;
};

/// Fraction of known-class samples classified correctly; rejections are
/// wrong.  Absent without known samples.
std::optional<double> known_accuracy(const Predictions& preds, const Truth& truth);
/// Hungarian-matched clustering accuracy over unknown-class samples;
/// samples accepted as known count as unmatched.  Absent without unknown
/// samples.
std::optional<double> unknown_accuracy(const Predictions& preds, const Truth& truth);
/// Known labels pinned, discovered clusters optimally matched to the
/// unknown classes, accuracy over every sample.
double all_accuracy(const Predictions& preds, const Truth& truth);

/// One-to-one cluster -> class matching maximizing the matched count in a
/// (clusters x classes) contingency table.  -1 for unmatched clusters.
std::vector<int> match_clusters(const Mat& contingency);

struct EvalReport {
  std::optional<double> known_acc;
  std::optional<double> unknown_acc;
  double all_acc = 0.0;
  int predicted_class_count = 0;
  int group_count = 0;  // all Louvain communities, including unsupported ones
  int true_class_count = 0;
  std::size_t known_samples = 0;
  std::size_t unknown_samples = 0;
  double known_rejected = 0.0;    // fraction of known samples rejected
  double unknown_rejected = 0.0;  // fraction of unknown samples rejected
  Mat known_confusion;            // (known, known + 1); last column = rejected
  Mat unknown_contingency;        // (clusters, unknown classes)
  std::vector<int> cluster_ids;   // row labels of unknown_contingency
  std::vector<int> cluster_match; // matched unknown class per cluster row, -1 if none
  std::vector<double> known_class_acc;
  std::vector<double> unknown_class_acc;
  bool fallback = false;

  nlohmann::json to_json() const;
};

EvalReport evaluate(const TrainState& state, const Predictions& preds, const Truth& truth);

/// Truth labels for patches carrying class ids.  Classes outside the
/// split throw.
Truth make_truth(const ClassSplit& split, std::span<const Patch> patches);

/// Palette image: index 0 is background (black), 1..known are the known
/// classes, then one reserved color per discovered cluster.
struct IndexedImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> index;            // row-major
  std::vector<std::array<std::uint8_t, 3>> palette;
};

/// Color of a class slot / cluster slot.  Cluster colors never coincide
/// with class colors or black.
std::array<std::uint8_t, 3> class_color(int known_index);
std::array<std::uint8_t, 3> cluster_color(int rank);

/// Predicts every labeled pixel and paints it; unlabeled pixels stay black.
IndexedImage render_map(TrainState& state, const HsiCube& cube, int batch_size = 256);
void write_png(const IndexedImage& image, const std::filesystem::path& path);
IndexedImage read_png(const std::filesystem::path& path);

/// Embedding export: header (magic, version, rows, penultimate dim, logit
/// dim) then per row penultimate, logits and label as float64.
struct EmbeddingTable {
  Mat penultimate;
  Mat logits;
  std::vector<int> labels;
};
EmbeddingTable compute_embeddings(TrainState& state, std::span<const Patch> patches, int batch_size = 256);
void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable read_embeddings(const std::filesystem::path& path);

}  // namespace hsiucd
