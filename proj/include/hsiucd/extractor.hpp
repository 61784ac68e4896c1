#pragma once

#include "hsiucd/cube.hpp"
#include "hsiucd/layers.hpp"
#include "hsiucd/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hsiucd {

struct ExtractorConfig {
  int patch_size = 9;
  int input_bands = 0;
  int reduced_bands = 100;
  int block1_channels = 8;
  int block2_channels = 16;
  int final_channels = 32;
  int logit_dim = 0;  // known classes + 1

  void validate() const;
};

/// Penultimate (flattened) features and anchor-space logits, one row per sample.
struct EmbeddingBatch {
  Mat penultimate;
  Mat logits;
};

/// Spectral-spatial 3-D residual network.
///
/// Pipeline: pointwise conv (B -> reduced_bands) + BN + ReLU, reinterpretation
/// of the reduced bands as the depth axis of a one-channel volume, residual
/// block, max-pool (4,2,2), residual block, max-pool (4,2,2), valid 3x3x3
/// conv, flatten, fully connected layer to the logit space.  With the
/// default geometry (P = 9, 100 reduced bands) the flattened size is 160.
class FeatureExtractor {
public:
  FeatureExtractor() = default;
  explicit FeatureExtractor(const ExtractorConfig& config, std::uint64_t seed = 0);

  const ExtractorConfig& config() const { return config_; }
  int penultimate_dim() const { return penultimate_dim_; }
  int logit_dim() const { return config_.logit_dim; }

  /// Packs patches into a (n, B, 1, P, P) tensor.
  Tensor pack(std::span<const Patch> patches) const;
  Tensor pack(std::span<const Patch* const> patches) const;

  EmbeddingBatch forward(const Tensor& input, bool training);
  EmbeddingBatch forward(std::span<const Patch> patches, bool training);

  /// Backpropagates gradients w.r.t. both outputs of the last forward call and
  /// accumulates parameter gradients.  Either argument may be empty.
  void backward(const Mat& grad_penultimate, const Mat& grad_logits);

  std::vector<Param*> parameters();
  std::vector<Buffer*> buffers();
  void zero_grad();
  std::size_t count_parameters();

  ResidualBlock& block1() { return block1_; }
  ResidualBlock& block2() { return block2_; }

private:
  ExtractorConfig config_;
  int penultimate_dim_ = 0;
  std::array<int, 5> final_shape_{};

  Conv3d stem_;
  BatchNorm stem_norm_;
  Relu stem_relu_;
  ResidualBlock block1_;
  MaxPool3d pool1_;
  ResidualBlock block2_;
  MaxPool3d pool2_;
  Conv3d head_conv_;
  Linear fc_;
};

}  // namespace hsiucd
