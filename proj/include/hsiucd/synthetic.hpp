#pragma once

#include "hsiucd/cube.hpp"
#include "hsiucd/tensor.hpp"

#include <cstdint>

namespace hsiucd {

/// Parameters of a synthetic scene: smooth class spectra plus Gaussian
/// noise, laid out as Voronoi blobs separated by thin unlabeled borders.
struct SyntheticSpec {
  int height = 64;
  int width = 64;
  int bands = 20;
  int class_count = 8;
  int known_count = 5;
  double noise_sigma = 0.05;   // per-band within-class std
  int blobs_per_class = 2;
  double border = 1.0;         // pixels within this margin of a blob edge stay unlabeled
  std::uint64_t seed = 7;

  void validate() const;
  /// Guaranteed minimum L2 distance between class mean spectra.
  double min_separation() const { return 4.0 * noise_sigma; }
};

/// Class mean spectra, one row per class, deterministic per seed.  Throws
/// std::invalid_argument when the separation cannot be met for `bands`.
Mat synthetic_means(const SyntheticSpec& spec);

/// Full cube; deterministic per seed.
HsiCube generate(const SyntheticSpec& spec);

}  // namespace hsiucd
