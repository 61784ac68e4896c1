#pragma once

#include "hsiucd/cube.hpp"
#include "hsiucd/tensor.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <utility>
#include <vector>

namespace hsiucd {

/// Candidate pixel coordinates per class id.
using PixelPool = std::map<int, std::vector<std::pair<int, int>>>;

/// Every labeled pixel of the cube, grouped by class, row-major order.
PixelPool index_pixels(const HsiCube& cube);

/// One few-shot task.  Patch labels carry the true class ids; the unknown
/// query labels are for evaluation only.
struct Episode {
  std::vector<Patch> support;        // known_count * k
  std::vector<Patch> query_known;    // known_count * d
  std::vector<Patch> query_unknown;  // unknown_count * d
  int k = 0;
  int d = 0;

  std::size_t size() const { return support.size() + query_known.size() + query_unknown.size(); }
  /// support, then known queries, then unknown queries.
  std::vector<const Patch*> all() const;
};

/// Draws k + d distinct pixels per known class and d per unknown class from
/// `pool`.  Deterministic in `seed`.  Throws naming the first class that
/// lacks pixels.
Episode sample_episode(const HsiCube& cube, const PixelPool& pool, const ClassSplit& split, int k,
                       int d, std::uint64_t seed, int patch_size = 9);
Episode sample_episode(const HsiCube& cube, const ClassSplit& split, int k, int d,
                       std::uint64_t seed, int patch_size = 9);

struct AugmentConfig {
  double weak_sigma = 0.01;
  double strong_sigma = 0.05;
  bool flips = true;
  int crop_min = 5;
  int crop_max = 9;
  double jitter_low = 0.9;
  double jitter_high = 1.1;
};

/// Random horizontal/vertical flips plus Gaussian noise.
Patch augment_weak(const Patch& p, const AugmentConfig& config, std::mt19937_64& rng);
/// Random square crop re-sized to the patch size (nearest neighbour),
/// per-band multiplicative jitter, and Gaussian noise.
Patch augment_strong(const Patch& p, const AugmentConfig& config, std::mt19937_64& rng);

/// Index of the positive strong view for every weak view.  Rows with
/// label >= 0 pair with a uniformly drawn strong view of the same label
/// (possibly their own).  Rows with label < 0 pair with the most
/// cosine-similar other unlabeled strong view (lowest index on ties), or
/// their own when they are the only unlabeled row.
struct PositivePairs {
  std::vector<int> positive;
  int self_paired_labeled = 0;  // labeled rows whose class had a single sample
};
PositivePairs build_positive_pairs(const Mat& weak, const Mat& strong, const std::vector<int>& labels,
                                   std::mt19937_64& rng);

/// Draws k labeled pixels per known class (deterministic in seed) and
/// returns `copies` noisy replicas of each, labels preserved.
std::vector<Patch> build_pretrain_pool(const HsiCube& cube, const PixelPool& pool,
                                       const ClassSplit& split, int k, int copies, double sigma,
                                       std::uint64_t seed, int patch_size = 9);

/// Replicates the given patches `copies` times with i.i.d. noise.
std::vector<Patch> replicate_with_noise(const std::vector<Patch>& patches, int copies, double sigma,
                                        std::mt19937_64& rng);

}  // namespace hsiucd
