#pragma once

#include "hsiucd/tensor.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace hsiucd {

/// A named trainable tensor and its accumulated gradient.
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;

  Param() = default;
  Param(std::string name_, std::vector<int> shape_);
  std::size_t size() const { return value.size(); }
  void zero_grad();
};

/// A named non-trainable state tensor (batch-norm running statistics).
struct Buffer {
  std::string name;
  std::vector<double> value;
};

using Dims3 = std::array<int, 3>;  // (depth, height, width)

/// 3-D convolution, stride 1, zero padding.  Weight layout (out, in, kd, kh, kw).
class Conv3d {
public:
  Conv3d() = default;
  Conv3d(std::string name, int in_channels, int out_channels, Dims3 kernel, Dims3 padding,
         bool bias);

  void init(std::mt19937_64& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  Dims3 output_dims(Dims3 in) const;
  void collect(std::vector<Param*>& out);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

private:
  struct Geometry {
    Dims3 in{}, out{}, padded{};
    int padded_size = 0;
    int span = 0;
  };
  Geometry geometry(Dims3 in) const;
  void pad_input(const double* x, const Geometry& g, double* xp) const;
  void pack_taps();
  std::ptrdiff_t tap_offset(int tap, const Geometry& g) const;
  bool pointwise() const;

  int in_ = 0, out_ = 0;
  Dims3 k_{1, 1, 1}, pad_{0, 0, 0};
  bool has_bias_ = false;
  Param weight_, bias_;
  std::array<int, 5> in_shape_{};
  AlignedVector input_;  // padded input (or raw input for pointwise)
  std::vector<Mat> taps_;      // weight slices (out, in), one per kernel tap
};

/// Per-channel batch normalization over (batch, depth, height, width).
class BatchNorm {
public:
  BatchNorm() = default;
  BatchNorm(std::string name, int channels);

  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Param*>& out);
  void collect_buffers(std::vector<Buffer*>& out);

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

private:
  int channels_ = 0;
  Param gamma_, beta_;
  Buffer running_mean_, running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool cached_training_ = false;
};

class Relu {
public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out) const;

private:
  Tensor output_;
};

/// Max pooling with stride equal to the kernel and -inf padding.
class MaxPool3d {
public:
  MaxPool3d() = default;
  MaxPool3d(Dims3 kernel, Dims3 padding) : k_(kernel), pad_(padding) {}

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out) const;
  Dims3 output_dims(Dims3 in) const;

private:
  Dims3 k_{1, 1, 1}, pad_{0, 0, 0};
  std::array<int, 5> in_shape_{};
  std::vector<std::int64_t> argmax_;
};

/// Fully connected layer y = x W^T + b, weight layout (out, in).
class Linear {
public:
  Linear() = default;
  Linear(std::string name, int in_features, int out_features);

  void init(std::mt19937_64& rng);
  Mat forward(const Mat& x);
  Mat backward(const Mat& grad_out);
  void collect(std::vector<Param*>& out);

private:
  int in_ = 0, out_ = 0;
  Param weight_, bias_;
  Mat input_;
};

/// Three conv-BN-ReLU units with one skip connection spanning the block.
/// The skip is the identity when channel counts match and a 1x1x1
/// projection otherwise.
class ResidualBlock {
public:
  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int in_channels, int out_channels);

  void init(std::mt19937_64& rng);
  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Param*>& out);
  void collect_buffers(std::vector<Buffer*>& out);

  bool has_projection() const { return has_projection_; }
  std::array<Conv3d, 3>& convs() { return convs_; }

private:
  std::array<Conv3d, 3> convs_;
  std::array<BatchNorm, 3> norms_;
  std::array<Relu, 3> relus_;
  bool has_projection_ = false;
  Conv3d projection_;
};

}  // namespace hsiucd
