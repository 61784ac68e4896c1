#include "hsiucd/extractor.hpp"

#include <random>
#include <stdexcept>

namespace hsiucd {

void ExtractorConfig::validate() const {
  if (patch_size <= 0 || patch_size % 2 == 0) throw std::invalid_argument("patch_size must be odd");
  if (input_bands <= 0) throw std::invalid_argument("input_bands must be positive");
  if (reduced_bands <= 0 || block1_channels <= 0 || block2_channels <= 0 || final_channels <= 0) {
    throw std::invalid_argument("extractor widths must be positive");
  }
  if (logit_dim < 2) throw std::invalid_argument("logit_dim must be at least 2");
}

FeatureExtractor::FeatureExtractor(const ExtractorConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  const int bands = config_.input_bands;
  const int reduced = config_.reduced_bands;
  stem_ = Conv3d("stem.conv", bands, reduced, {1, 1, 1}, {0, 0, 0}, false);
  stem_norm_ = BatchNorm("stem.bn", reduced);
  block1_ = ResidualBlock("block1", 1, config_.block1_channels);
  pool1_ = MaxPool3d({4, 2, 2}, {0, 1, 1});
  block2_ = ResidualBlock("block2", config_.block1_channels, config_.block2_channels);
  pool2_ = MaxPool3d({4, 2, 2}, {2, 1, 1});
  head_conv_ = Conv3d("head.conv", config_.block2_channels, config_.final_channels, {3, 3, 3},
                      {0, 0, 0}, true);

  // Dry-run the geometry to size the fully connected layer.
  const int p = config_.patch_size;
  Dims3 dims{reduced, p, p};
  dims = pool1_.output_dims(dims);
  if (dims[0] < 1 || dims[1] < 1) throw std::invalid_argument("extractor: volume collapses at pool1");
  dims = pool2_.output_dims(dims);
  if (dims[0] < 1 || dims[1] < 1) throw std::invalid_argument("extractor: volume collapses at pool2");
  dims = head_conv_.output_dims(dims);
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1) {
    throw std::invalid_argument("extractor: reduced_bands=" + std::to_string(reduced) +
                                ", patch_size=" + std::to_string(p) +
                                " leaves no volume for the final 3x3x3 convolution");
  }
  penultimate_dim_ = config_.final_channels * dims[0] * dims[1] * dims[2];
  fc_ = Linear("fc", penultimate_dim_, config_.logit_dim);

  std::mt19937_64 rng(seed);
  stem_.init(rng);
  block1_.init(rng);
  block2_.init(rng);
  head_conv_.init(rng);
  fc_.init(rng);
}

Tensor FeatureExtractor::pack(std::span<const Patch> patches) const {
  std::vector<const Patch*> ptrs;
  ptrs.reserve(patches.size());
  for (const auto& p : patches) ptrs.push_back(&p);
  return pack(std::span<const Patch* const>(ptrs));
}

Tensor FeatureExtractor::pack(std::span<const Patch* const> patches) const {
  const int p = config_.patch_size;
  const int bands = config_.input_bands;
  Tensor x(static_cast<int>(patches.size()), bands, 1, p, p);
  for (std::size_t s = 0; s < patches.size(); ++s) {
    const Patch& patch = *patches[s];
    if (patch.size != p || patch.bands != bands) {
      throw std::invalid_argument("patch shape " + std::to_string(patch.size) + "x" +
                                  std::to_string(patch.size) + "x" + std::to_string(patch.bands) +
                                  " does not match extractor input " + std::to_string(p) + "x" +
                                  std::to_string(p) + "x" + std::to_string(bands));
    }
    for (int r = 0; r < p; ++r) {
      for (int c = 0; c < p; ++c) {
        for (int b = 0; b < bands; ++b) x.at(static_cast<int>(s), b, 0, r, c) = patch.at(r, c, b);
      }
    }
  }
  return x;
}

EmbeddingBatch FeatureExtractor::forward(std::span<const Patch> patches, bool training) {
  return forward(pack(patches), training);
}

EmbeddingBatch FeatureExtractor::forward(const Tensor& input, bool training) {
  const int n = input.n();
  if (input.c() != config_.input_bands || input.h() != config_.patch_size ||
      input.w() != config_.patch_size || input.d() != 1) {
    throw std::invalid_argument("extractor input shape " + input.shape_string() +
                                " does not match configuration");
  }
  EmbeddingBatch out;
  if (n == 0) {
    out.penultimate = Mat(0, penultimate_dim_);
    out.logits = Mat(0, config_.logit_dim);
    return out;
  }
  Tensor h = stem_relu_.forward(stem_norm_.forward(stem_.forward(input), training));
  // (n, R, 1, P, P) and (n, 1, R, P, P) share one memory layout.
  h.reshape(n, 1, config_.reduced_bands, config_.patch_size, config_.patch_size);
  h = pool1_.forward(block1_.forward(h, training));
  h = pool2_.forward(block2_.forward(h, training));
  h = head_conv_.forward(h);
  final_shape_ = h.shape();
  out.penultimate = Eigen::Map<const Mat>(h.data(), n, penultimate_dim_);
  out.logits = fc_.forward(out.penultimate);
  return out;
}

void FeatureExtractor::backward(const Mat& grad_penultimate, const Mat& grad_logits) {
  const int n = final_shape_[0];
  if (n == 0) return;
  Mat g = Mat::Zero(n, penultimate_dim_);
  if (grad_logits.size() > 0) g += fc_.backward(grad_logits);
  if (grad_penultimate.size() > 0) g += grad_penultimate;
  Tensor t(final_shape_[0], final_shape_[1], final_shape_[2], final_shape_[3], final_shape_[4]);
  Eigen::Map<Mat>(t.data(), n, penultimate_dim_) = g;
  t = head_conv_.backward(t);
  t = block2_.backward(pool2_.backward(t));
  t = block1_.backward(pool1_.backward(t));
  t.reshape(n, config_.reduced_bands, 1, config_.patch_size, config_.patch_size);
  stem_.backward(stem_norm_.backward(stem_relu_.backward(t)));
}

std::vector<Param*> FeatureExtractor::parameters() {
  std::vector<Param*> out;
  stem_.collect(out);
  stem_norm_.collect(out);
  block1_.collect(out);
  block2_.collect(out);
  head_conv_.collect(out);
  fc_.collect(out);
  return out;
}

std::vector<Buffer*> FeatureExtractor::buffers() {
  std::vector<Buffer*> out;
  stem_norm_.collect_buffers(out);
  block1_.collect_buffers(out);
  block2_.collect_buffers(out);
  return out;
}

void FeatureExtractor::zero_grad() {
  for (Param* p : parameters()) p->zero_grad();
}

std::size_t FeatureExtractor::count_parameters() {
  std::size_t total = 0;
  for (Param* p : parameters()) total += p->size();
  return total;
}

}  // namespace hsiucd
