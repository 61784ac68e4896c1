#include "hsiucd/tensor.hpp"

#include <stdexcept>

namespace hsiucd {

void Tensor::reshape(int n, int c, int d, int h, int w) {
  const std::size_t count = static_cast<std::size_t>(n) * c * d * h * w;
  if (count != data_.size()) {
    throw std::invalid_argument("Tensor::reshape: element count mismatch for " + shape_string());
  }
  shape_ = {n, c, d, h, w};
}

std::string Tensor::shape_string() const {
  std::string s = "(";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape_[i]);
  }
  return s + ")";
}

}  // namespace hsiucd
