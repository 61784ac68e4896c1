#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hsiucd {

/// Row-major dense matrix; rows are samples throughout the library.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Buffers that Eigen reduces over must share Eigen's alignment; otherwise
/// the vectorized summation order depends on where the heap put them.
using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

/// Dense 5-D activation tensor in (batch, channel, depth, height, width) order.
class Tensor {
public:
  Tensor() = default;
  Tensor(int n, int c, int d, int h, int w, double fill = 0.0)
      : shape_{n, c, d, h, w},
        data_(static_cast<std::size_t>(n) * c * d * h * w, fill) {}

  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int d() const { return shape_[2]; }
  int h() const { return shape_[3]; }
  int w() const { return shape_[4]; }
  const std::array<int, 5>& shape() const { return shape_; }

  std::size_t size() const { return data_.size(); }
  std::size_t sample_size() const {
    return static_cast<std::size_t>(shape_[1]) * shape_[2] * shape_[3] * shape_[4];
  }
  std::size_t spatial_size() const {
    return static_cast<std::size_t>(shape_[2]) * shape_[3] * shape_[4];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  AlignedVector& values() { return data_; }
  const AlignedVector& values() const { return data_; }

  std::span<double> sample(int i) {
    return {data_.data() + i * sample_size(), sample_size()};
  }
  std::span<const double> sample(int i) const {
    return {data_.data() + i * sample_size(), sample_size()};
  }

  double& at(int n, int c, int d, int h, int w) { return data_[offset(n, c, d, h, w)]; }
  double at(int n, int c, int d, int h, int w) const { return data_[offset(n, c, d, h, w)]; }

  /// Reinterprets the buffer with a new shape of equal element count.
  void reshape(int n, int c, int d, int h, int w);

  std::string shape_string() const;

private:
  std::size_t offset(int n, int c, int d, int h, int w) const {
    return (((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + d) * shape_[3] + h) *
               shape_[4] +
           w;
  }

  std::array<int, 5> shape_{0, 0, 0, 0, 0};
  AlignedVector data_;
};

}  // namespace hsiucd
