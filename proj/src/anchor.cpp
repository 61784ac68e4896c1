#include "hsiucd/anchor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hsiucd {

namespace {

void check_labels(const Mat& dist, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != dist.rows()) {
    throw std::invalid_argument("label count " + std::to_string(labels.size()) +
                                " does not match " + std::to_string(dist.rows()) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= dist.cols()) {
      throw std::invalid_argument("label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(dist.cols()) + ")");
    }
  }
}

// softmin of one row, computed stably.
RowVec softmin(const Eigen::Ref<const RowVec>& d) {
  RowVec e = (-(d.array() - d.minCoeff())).exp().matrix();
  return e / e.sum();
}

}  // namespace

AnchorSet init_anchors(int n, double scale) {
  if (n < 2) throw std::invalid_argument("anchor count must be at least 2");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("anchor scale must be positive");
  AnchorSet a;
  a.scale = scale;
  a.anchors = Mat::Identity(n, n) * scale;
  return a;
}

Mat distances(const Mat& z, const AnchorSet& anchors) {
  if (z.cols() != anchors.dim()) {
    throw std::invalid_argument("embedding width " + std::to_string(z.cols()) +
                                " does not match anchor dimension " + std::to_string(anchors.dim()));
  }
  Mat d(z.rows(), anchors.dim());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (int j = 0; j < anchors.dim(); ++j) d(i, j) = (z.row(i) - anchors.anchors.row(j)).norm();
  }
  return d;
}

Mat distances_backward(const Mat& z, const AnchorSet& anchors, const Mat& dist,
                       const Mat& grad_dist) {
  Mat g = Mat::Zero(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (int j = 0; j < anchors.dim(); ++j) {
      if (dist(i, j) > 0.0 && grad_dist(i, j) != 0.0) {
        g.row(i) += (grad_dist(i, j) / dist(i, j)) * (z.row(i) - anchors.anchors.row(j));
      }
    }
  }
  return g;
}

LossGrad loss_osc(const Mat& dist, std::span<const int> labels) {
  check_labels(dist, labels);
  LossGrad out;
  out.grad = Mat::Zero(dist.rows(), dist.cols());
  const Eigen::Index m = dist.rows();
  if (m == 0) return out;
  for (Eigen::Index i = 0; i < m; ++i) {
    const int y = labels[i];
    const double lo = dist.row(i).minCoeff();
    const double lse = -lo + std::log((-(dist.row(i).array() - lo)).exp().sum());
    out.value += dist(i, y) + lse;
    out.grad.row(i) = -softmin(dist.row(i));
    out.grad(i, y) += 1.0;
  }
  out.value /= static_cast<double>(m);
  out.grad /= static_cast<double>(m);
  return out;
}

LossGrad loss_ca(const Mat& dist, std::span<const int> labels, double gamma) {
  check_labels(dist, labels);
  LossGrad out;
  out.grad = Mat::Zero(dist.rows(), dist.cols());
  const Eigen::Index m = dist.rows();
  if (m == 0) return out;
  const Eigen::Index n = dist.cols();
  for (Eigen::Index i = 0; i < m; ++i) {
    const int y = labels[i];
    // log(1 + sum_{j != y} e^{u_j}) with u_j = d_y - d_j, as a log-sum-exp
    // that includes the implicit u = 0 term.
    double top = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != y) top = std::max(top, dist(i, y) - dist(i, j));
    }
    double sum = std::exp(-top);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != y) sum += std::exp(dist(i, y) - dist(i, j) - top);
    }
    out.value += top + std::log(sum) + gamma * dist(i, y);
    double pull = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == y) continue;
      const double w = std::exp(dist(i, y) - dist(i, j) - top) / sum;
      out.grad(i, j) = -w;
      pull += w;
    }
    out.grad(i, y) = pull + gamma;
  }
  out.value /= static_cast<double>(m);
  out.grad /= static_cast<double>(m);
  return out;
}

RowVec anchor_estimate(const Mat& class_dist) {
  if (class_dist.rows() == 0) throw std::invalid_argument("anchor update needs at least one sample");
  RowVec acc = RowVec::Zero(class_dist.cols());
  for (Eigen::Index i = 0; i < class_dist.rows(); ++i) {
    const RowVec s = softmin(class_dist.row(i));
    acc.array() += class_dist.row(i).array() * (1.0 - s.array());
  }
  return acc / static_cast<double>(class_dist.rows());
}

void update_anchor(AnchorSet& anchors, int class_index, const Mat& class_dist) {
  if (class_index < 0 || class_index >= anchors.unknown_index()) {
    throw std::invalid_argument("anchor update only applies to known classes, got index " +
                                std::to_string(class_index));
  }
  if (class_dist.cols() != anchors.dim()) throw std::invalid_argument("distance width mismatch");
  anchors.anchors.row(class_index) = anchor_estimate(class_dist);
}

int classify(std::span<const double> dist) {
  int best = 0;
  for (std::size_t j = 1; j < dist.size(); ++j) {
    if (dist[j] < dist[best]) best = static_cast<int>(j);
  }
  return best;
}

std::vector<int> classify(const Mat& dist) {
  std::vector<int> out(dist.rows());
  for (Eigen::Index i = 0; i < dist.rows(); ++i) {
    out[i] = classify(std::span<const double>(dist.row(i).data(), dist.cols()));
  }
  return out;
}

}  // namespace hsiucd
