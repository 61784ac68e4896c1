#include "hsiucd/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hsiucd {

namespace {

using RowMap = Eigen::Map<Mat>;
using ConstRowMap = Eigen::Map<const Mat>;

void uniform_fill(std::vector<double>& v, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : v) x = dist(rng);
}

}  // namespace

Param::Param(std::string name_, std::vector<int> shape_)
    : name(std::move(name_)), shape(std::move(shape_)) {
  std::size_t count = 1;
  for (int s : shape) count *= static_cast<std::size_t>(s);
  value.assign(count, 0.0);
  grad.assign(count, 0.0);
}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

// ---------------------------------------------------------------------------
// Conv3d

Conv3d::Conv3d(std::string name, int in_channels, int out_channels, Dims3 kernel, Dims3 padding,
               bool bias)
    : in_(in_channels), out_(out_channels), k_(kernel), pad_(padding), has_bias_(bias) {
  weight_ = Param(name + ".weight", {out_, in_, k_[0], k_[1], k_[2]});
  if (has_bias_) bias_ = Param(name + ".bias", {out_});
}

void Conv3d::init(std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in_) * k_[0] * k_[1] * k_[2];
  const double bound = 1.0 / std::sqrt(fan_in);
  uniform_fill(weight_.value, bound, rng);
  if (has_bias_) uniform_fill(bias_.value, bound, rng);
}

Dims3 Conv3d::output_dims(Dims3 in) const {
  return {in[0] + 2 * pad_[0] - k_[0] + 1, in[1] + 2 * pad_[1] - k_[1] + 1,
          in[2] + 2 * pad_[2] - k_[2] + 1};
}

bool Conv3d::pointwise() const {
  return k_ == Dims3{1, 1, 1} && pad_ == Dims3{0, 0, 0};
}

void Conv3d::collect(std::vector<Param*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// Direct convolution on a zero-padded, flattened volume.  With stride 1 every
// kernel tap becomes a constant offset into the flattened padded input, so the
// output at padded index q is sum_tap W_tap * x_pad[:, q + offset(tap)], i.e.
// one small GEMM per tap.  Output positions are the padded indices of the
// window corners; the span [0, span) covers all of them.

namespace {
constexpr int kChunk = 256;
}  // namespace

Conv3d::Geometry Conv3d::geometry(Dims3 in) const {
  Geometry g;
  g.in = in;
  g.out = output_dims(in);
  g.padded = {in[0] + 2 * pad_[0], in[1] + 2 * pad_[1], in[2] + 2 * pad_[2]};
  g.padded_size = g.padded[0] * g.padded[1] * g.padded[2];
  g.span = ((g.out[0] - 1) * g.padded[1] + (g.out[1] - 1)) * g.padded[2] + g.out[2];
  return g;
}

void Conv3d::pad_input(const double* x, const Geometry& g, double* xp) const {
  std::fill(xp, xp + static_cast<std::ptrdiff_t>(in_) * g.padded_size, 0.0);
  for (int ci = 0; ci < in_; ++ci) {
    for (int d = 0; d < g.in[0]; ++d) {
      for (int h = 0; h < g.in[1]; ++h) {
        const double* src = x + ((static_cast<std::ptrdiff_t>(ci) * g.in[0] + d) * g.in[1] + h) * g.in[2];
        double* dst = xp + static_cast<std::ptrdiff_t>(ci) * g.padded_size +
                      ((d + pad_[0]) * g.padded[1] + h + pad_[1]) * g.padded[2] + pad_[2];
        std::copy(src, src + g.in[2], dst);
      }
    }
  }
}

void Conv3d::pack_taps() {
  const int taps = k_[0] * k_[1] * k_[2];
  taps_.resize(taps);
  for (int t = 0; t < taps; ++t) {
    taps_[t].resize(out_, in_);
    for (int o = 0; o < out_; ++o) {
      for (int i = 0; i < in_; ++i) {
        taps_[t](o, i) = weight_.value[(static_cast<std::size_t>(o) * in_ + i) * taps + t];
      }
    }
  }
}

std::ptrdiff_t Conv3d::tap_offset(int t, const Geometry& g) const {
  const int c = t % k_[2];
  const int b = (t / k_[2]) % k_[1];
  const int a = t / (k_[1] * k_[2]);
  return (static_cast<std::ptrdiff_t>(a) * g.padded[1] + b) * g.padded[2] + c;
}

Tensor Conv3d::forward(const Tensor& x) {
  if (x.c() != in_) {
    throw std::invalid_argument(weight_.name + ": expected " + std::to_string(in_) +
                                " input channels, got " + std::to_string(x.c()));
  }
  const Dims3 in{x.d(), x.h(), x.w()};
  const Dims3 od = output_dims(in);
  if (od[0] <= 0 || od[1] <= 0 || od[2] <= 0) {
    throw std::invalid_argument(weight_.name + ": input " + x.shape_string() +
                                " too small for kernel");
  }
  in_shape_ = x.shape();
  Tensor y(x.n(), out_, od[0], od[1], od[2]);
  const int positions = od[0] * od[1] * od[2];
  if (pointwise()) {
    input_ = x.values();
    ConstRowMap w(weight_.value.data(), out_, in_);
    for (int s = 0; s < x.n(); ++s) {
      RowMap ys(y.sample(s).data(), out_, positions);
      ConstRowMap xs(x.sample(s).data(), in_, positions);
      ys.noalias() = w * xs;
      if (has_bias_) {
        for (int o = 0; o < out_; ++o) ys.row(o).array() += bias_.value[o];
      }
    }
    return y;
  }
  const Geometry g = geometry(in);
  const int taps = k_[0] * k_[1] * k_[2];
  pack_taps();
  const std::size_t per_sample = static_cast<std::size_t>(in_) * g.padded_size;
  input_.resize(per_sample * x.n());
  Mat acc(out_, g.span);
  for (int s = 0; s < x.n(); ++s) {
    double* xp = input_.data() + per_sample * s;
    pad_input(x.sample(s).data(), g, xp);
    acc.setZero();
    for (int q0 = 0; q0 < g.span; q0 += kChunk) {
      const int len = std::min(kChunk, g.span - q0);
      for (int t = 0; t < taps; ++t) {
        const std::ptrdiff_t off = tap_offset(t, g) + q0;
        for (int i = 0; i < in_; ++i) {
          const double* __restrict xrow = xp + static_cast<std::ptrdiff_t>(i) * g.padded_size + off;
          for (int o = 0; o < out_; ++o) {
            const double w = taps_[t](o, i);
            double* __restrict arow = acc.data() + static_cast<std::ptrdiff_t>(o) * g.span + q0;
            for (int q = 0; q < len; ++q) arow[q] += w * xrow[q];
          }
        }
      }
    }
    double* ys = y.sample(s).data();
    for (int o = 0; o < out_; ++o) {
      const double b = has_bias_ ? bias_.value[o] : 0.0;
      for (int d = 0; d < od[0]; ++d) {
        for (int h = 0; h < od[1]; ++h) {
          const double* src = acc.data() + static_cast<std::ptrdiff_t>(o) * g.span +
                              (d * g.padded[1] + h) * g.padded[2];
          double* dst = ys + ((static_cast<std::ptrdiff_t>(o) * od[0] + d) * od[1] + h) * od[2];
          for (int w = 0; w < od[2]; ++w) dst[w] = src[w] + b;
        }
      }
    }
  }
  return y;
}

Tensor Conv3d::backward(const Tensor& grad_out) {
  const int n = in_shape_[0];
  const Dims3 in{in_shape_[2], in_shape_[3], in_shape_[4]};
  const Dims3 od{grad_out.d(), grad_out.h(), grad_out.w()};
  const int positions = od[0] * od[1] * od[2];
  Tensor dx(n, in_, in[0], in[1], in[2]);
  if (has_bias_) {
    for (int s = 0; s < n; ++s) {
      ConstRowMap gs(grad_out.sample(s).data(), out_, positions);
      for (int o = 0; o < out_; ++o) bias_.grad[o] += gs.row(o).sum();
    }
  }
  if (pointwise()) {
    ConstRowMap w(weight_.value.data(), out_, in_);
    RowMap dw(weight_.grad.data(), out_, in_);
    for (int s = 0; s < n; ++s) {
      ConstRowMap gs(grad_out.sample(s).data(), out_, positions);
      ConstRowMap xs(input_.data() + static_cast<std::size_t>(s) * in_ * positions, in_, positions);
      dw.noalias() += gs * xs.transpose();
      RowMap dxs(dx.sample(s).data(), in_, positions);
      dxs.noalias() = w.transpose() * gs;
    }
    return dx;
  }
  const Geometry g = geometry(in);
  const int taps = k_[0] * k_[1] * k_[2];
  const std::size_t per_sample = static_cast<std::size_t>(in_) * g.padded_size;
  std::vector<Mat> dtaps(taps, Mat::Zero(out_, in_));
  Mat gp(out_, g.span);
  Mat dxp(in_, g.padded_size);
  for (int s = 0; s < n; ++s) {
    gp.setZero();
    const double* gs = grad_out.sample(s).data();
    for (int o = 0; o < out_; ++o) {
      for (int d = 0; d < od[0]; ++d) {
        for (int h = 0; h < od[1]; ++h) {
          const double* src = gs + ((static_cast<std::ptrdiff_t>(o) * od[0] + d) * od[1] + h) * od[2];
          double* dst = gp.data() + static_cast<std::ptrdiff_t>(o) * g.span +
                        (d * g.padded[1] + h) * g.padded[2];
          std::copy(src, src + od[2], dst);
        }
      }
    }
    const double* xp = input_.data() + per_sample * s;
    dxp.setZero();
    for (int q0 = 0; q0 < g.span; q0 += kChunk) {
      const int len = std::min(kChunk, g.span - q0);
      for (int t = 0; t < taps; ++t) {
        const std::ptrdiff_t off = tap_offset(t, g) + q0;
        for (int i = 0; i < in_; ++i) {
          const double* xrow = xp + static_cast<std::ptrdiff_t>(i) * g.padded_size + off;
          double* __restrict drow = dxp.data() + static_cast<std::ptrdiff_t>(i) * g.padded_size + off;
          Eigen::Map<const Eigen::VectorXd> xv(xrow, len);
          for (int o = 0; o < out_; ++o) {
            const double* __restrict grow = gp.data() + static_cast<std::ptrdiff_t>(o) * g.span + q0;
            const double w = taps_[t](o, i);
            dtaps[t](o, i) += Eigen::Map<const Eigen::VectorXd>(grow, len).dot(xv);
            for (int q = 0; q < len; ++q) drow[q] += w * grow[q];
          }
        }
      }
    }
    double* dxs = dx.sample(s).data();
    for (int ci = 0; ci < in_; ++ci) {
      for (int d = 0; d < in[0]; ++d) {
        for (int h = 0; h < in[1]; ++h) {
          const double* src = dxp.data() + static_cast<std::ptrdiff_t>(ci) * g.padded_size +
                              ((d + pad_[0]) * g.padded[1] + h + pad_[1]) * g.padded[2] + pad_[2];
          double* dst = dxs + ((static_cast<std::ptrdiff_t>(ci) * in[0] + d) * in[1] + h) * in[2];
          std::copy(src, src + in[2], dst);
        }
      }
    }
  }
  for (int t = 0; t < taps; ++t) {
    for (int o = 0; o < out_; ++o) {
      for (int i = 0; i < in_; ++i) {
        weight_.grad[(static_cast<std::size_t>(o) * in_ + i) * taps + t] += dtaps[t](o, i);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::string name, int channels) : channels_(channels) {
  gamma_ = Param(name + ".gamma", {channels});
  beta_ = Param(name + ".beta", {channels});
  std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0);
  running_mean_ = Buffer{name + ".running_mean", std::vector<double>(channels, 0.0)};
  running_var_ = Buffer{name + ".running_var", std::vector<double>(channels, 1.0)};
}

void BatchNorm::collect(std::vector<Param*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void BatchNorm::collect_buffers(std::vector<Buffer*>& out) {
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

Tensor BatchNorm::forward(const Tensor& x, bool training) {
  if (x.c() != channels_) throw std::invalid_argument(gamma_.name + ": channel mismatch");
  const std::size_t spatial = x.spatial_size();
  const std::size_t count = spatial * static_cast<std::size_t>(x.n());
  Tensor y(x.n(), x.c(), x.d(), x.h(), x.w());
  xhat_ = Tensor(x.n(), x.c(), x.d(), x.h(), x.w());
  inv_std_.assign(channels_, 0.0);
  cached_training_ = training && count > 0;
  for (int c = 0; c < channels_; ++c) {
    double mean = running_mean_.value[c];
    double var = running_var_.value[c];
    if (cached_training_) {
      double sum = 0.0;
      for (int s = 0; s < x.n(); ++s) {
        const double* p = x.sample(s).data() + c * spatial;
        for (std::size_t i = 0; i < spatial; ++i) sum += p[i];
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int s = 0; s < x.n(); ++s) {
        const double* p = x.sample(s).data() + c * spatial;
        for (std::size_t i = 0; i < spatial; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      running_mean_.value[c] = (1.0 - kMomentum) * running_mean_.value[c] + kMomentum * mean;
      running_var_.value[c] = (1.0 - kMomentum) * running_var_.value[c] + kMomentum * unbiased;
    }
    const double inv = 1.0 / std::sqrt(var + kEps);
    inv_std_[c] = inv;
    const double g = gamma_.value[c], b = beta_.value[c];
    for (int s = 0; s < x.n(); ++s) {
      const std::size_t off = static_cast<std::size_t>(s) * x.sample_size() + c * spatial;
      const double* p = x.data() + off;
      double* xh = xhat_.data() + off;
      double* q = y.data() + off;
      for (std::size_t i = 0; i < spatial; ++i) {
        xh[i] = (p[i] - mean) * inv;
        q[i] = g * xh[i] + b;
      }
    }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& grad_out) {
  const std::size_t spatial = xhat_.spatial_size();
  const double count = static_cast<double>(spatial * static_cast<std::size_t>(xhat_.n()));
  Tensor dx(xhat_.n(), xhat_.c(), xhat_.d(), xhat_.h(), xhat_.w());
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int s = 0; s < xhat_.n(); ++s) {
      const std::size_t off = static_cast<std::size_t>(s) * xhat_.sample_size() + c * spatial;
      const double* g = grad_out.data() + off;
      const double* xh = xhat_.data() + off;
      for (std::size_t i = 0; i < spatial; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += g[i] * xh[i];
      }
    }
    gamma_.grad[c] += sum_dy_xhat;
    beta_.grad[c] += sum_dy;
    const double scale = gamma_.value[c] * inv_std_[c];
    for (int s = 0; s < xhat_.n(); ++s) {
      const std::size_t off = static_cast<std::size_t>(s) * xhat_.sample_size() + c * spatial;
      const double* g = grad_out.data() + off;
      const double* xh = xhat_.data() + off;
      double* d = dx.data() + off;
      if (cached_training_) {
        for (std::size_t i = 0; i < spatial; ++i) {
          d[i] = scale * (g[i] - sum_dy / count - xh[i] * sum_dy_xhat / count);
        }
      } else {
        for (std::size_t i = 0; i < spatial; ++i) d[i] = scale * g[i];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Relu

Tensor Relu::forward(const Tensor& x) {
  output_ = x;
  for (double& v : output_.values()) v = v > 0.0 ? v : 0.0;
  return output_;
}

Tensor Relu::backward(const Tensor& grad_out) const {
  Tensor dx = grad_out;
  const double* y = output_.data();
  double* d = dx.data();
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(y[i] > 0.0)) d[i] = 0.0;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// MaxPool3d

Dims3 MaxPool3d::output_dims(Dims3 in) const {
  Dims3 out{};
  for (int i = 0; i < 3; ++i) out[i] = (in[i] + 2 * pad_[i] - k_[i]) / k_[i] + 1;
  return out;
}

Tensor MaxPool3d::forward(const Tensor& x) {
  const Dims3 in{x.d(), x.h(), x.w()};
  const Dims3 od = output_dims(in);
  if (od[0] <= 0 || od[1] <= 0 || od[2] <= 0) {
    throw std::invalid_argument("MaxPool3d: input " + x.shape_string() + " too small");
  }
  in_shape_ = x.shape();
  Tensor y(x.n(), x.c(), od[0], od[1], od[2]);
  argmax_.assign(y.size(), -1);
  std::size_t o = 0;
  for (int s = 0; s < x.n(); ++s) {
    for (int c = 0; c < x.c(); ++c) {
      const std::size_t base =
          (static_cast<std::size_t>(s) * x.c() + c) * static_cast<std::size_t>(x.spatial_size());
      for (int pd = 0; pd < od[0]; ++pd) {
        for (int ph = 0; ph < od[1]; ++ph) {
          for (int pw = 0; pw < od[2]; ++pw, ++o) {
            double best = -std::numeric_limits<double>::infinity();
            std::int64_t best_idx = -1;
            for (int a = 0; a < k_[0]; ++a) {
              const int id = pd * k_[0] + a - pad_[0];
              if (id < 0 || id >= in[0]) continue;
              for (int b = 0; b < k_[1]; ++b) {
                const int ih = ph * k_[1] + b - pad_[1];
                if (ih < 0 || ih >= in[1]) continue;
                for (int c2 = 0; c2 < k_[2]; ++c2) {
                  const int iw = pw * k_[2] + c2 - pad_[2];
                  if (iw < 0 || iw >= in[2]) continue;
                  const std::size_t idx = base + (static_cast<std::size_t>(id) * in[1] + ih) * in[2] + iw;
                  if (x.data()[idx] > best) {
                    best = x.data()[idx];
                    best_idx = static_cast<std::int64_t>(idx);
                  }
                }
              }
            }
            y.data()[o] = best_idx >= 0 ? best : 0.0;
            argmax_[o] = best_idx;
          }
        }
      }
    }
  }
  return y;
}

Tensor MaxPool3d::backward(const Tensor& grad_out) const {
  Tensor dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3], in_shape_[4]);
  for (std::size_t o = 0; o < grad_out.size(); ++o) {
    if (argmax_[o] >= 0) dx.data()[argmax_[o]] += grad_out.data()[o];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::string name, int in_features, int out_features)
    : in_(in_features), out_(out_features) {
  weight_ = Param(name + ".weight", {out_, in_});
  bias_ = Param(name + ".bias", {out_});
}

void Linear::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  uniform_fill(weight_.value, bound, rng);
  uniform_fill(bias_.value, bound, rng);
}

void Linear::collect(std::vector<Param*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

Mat Linear::forward(const Mat& x) {
  if (x.cols() != in_) throw std::invalid_argument(weight_.name + ": input width mismatch");
  input_ = x;
  ConstRowMap w(weight_.value.data(), out_, in_);
  Eigen::Map<const RowVec> b(bias_.value.data(), out_);
  Mat y = x * w.transpose();
  y.rowwise() += b;
  return y;
}

Mat Linear::backward(const Mat& grad_out) {
  ConstRowMap w(weight_.value.data(), out_, in_);
  RowMap dw(weight_.grad.data(), out_, in_);
  Eigen::Map<RowVec> db(bias_.grad.data(), out_);
  dw.noalias() += grad_out.transpose() * input_;
  db += grad_out.colwise().sum();
  return grad_out * w;
}

// ---------------------------------------------------------------------------
// ResidualBlock

ResidualBlock::ResidualBlock(const std::string& name, int in_channels, int out_channels) {
  for (int i = 0; i < 3; ++i) {
    const std::string unit = name + ".conv" + std::to_string(i + 1);
    convs_[i] = Conv3d(unit, i == 0 ? in_channels : out_channels, out_channels, {3, 3, 3},
                       {1, 1, 1}, false);
    norms_[i] = BatchNorm(name + ".bn" + std::to_string(i + 1), out_channels);
  }
  has_projection_ = in_channels != out_channels;
  if (has_projection_) {
    projection_ = Conv3d(name + ".skip", in_channels, out_channels, {1, 1, 1}, {0, 0, 0}, true);
  }
}

void ResidualBlock::init(std::mt19937_64& rng) {
  for (auto& c : convs_) c.init(rng);
  if (has_projection_) projection_.init(rng);
}

void ResidualBlock::collect(std::vector<Param*>& out) {
  for (int i = 0; i < 3; ++i) {
    convs_[i].collect(out);
    norms_[i].collect(out);
  }
  if (has_projection_) projection_.collect(out);
}

void ResidualBlock::collect_buffers(std::vector<Buffer*>& out) {
  for (auto& n : norms_) n.collect_buffers(out);
}

Tensor ResidualBlock::forward(const Tensor& x, bool training) {
  Tensor h = x;
  for (int i = 0; i < 3; ++i) {
    h = relus_[i].forward(norms_[i].forward(convs_[i].forward(h), training));
  }
  Tensor skip = has_projection_ ? projection_.forward(x) : x;
  double* out = h.data();
  const double* s = skip.data();
  for (std::size_t i = 0; i < h.size(); ++i) out[i] += s[i];
  return h;
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (int i = 2; i >= 0; --i) {
    g = convs_[i].backward(norms_[i].backward(relus_[i].backward(g)));
  }
  Tensor skip = has_projection_ ? projection_.backward(grad_out) : grad_out;
  double* d = g.data();
  const double* s = skip.data();
  for (std::size_t i = 0; i < g.size(); ++i) d[i] += s[i];
  return g;
}

}  // namespace hsiucd
