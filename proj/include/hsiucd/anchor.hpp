#pragma once

#include "hsiucd/tensor.hpp"

#include <span>
#include <vector>

namespace hsiucd {

/// Class anchors in logit space.  Row i is the anchor of class i; the last
/// row belongs to the shared unknown class and never moves.
struct AnchorSet {
  Mat anchors;
  double scale = 10.0;

  int dim() const { return static_cast<int>(anchors.rows()); }
  int unknown_index() const { return dim() - 1; }
};

/// A scalar loss with its gradient with respect to one input matrix.
struct LossGrad {
  double value = 0.0;
  Mat grad;
};

/// anchors = scale * I_n.
AnchorSet init_anchors(int n, double scale);

/// Euclidean distance of every row of z to every anchor, shape (rows, n).
Mat distances(const Mat& z, const AnchorSet& anchors);

/// Chain rule through distances(): maps dL/dD to dL/dz.  Zero distances
/// contribute a zero subgradient.
Mat distances_backward(const Mat& z, const AnchorSet& anchors, const Mat& dist,
                       const Mat& grad_dist);

/// Mean over rows of -log softmin(d)_y.  Labels are 0-based anchor rows.
/// Gradient is with respect to the distance matrix.
LossGrad loss_osc(const Mat& dist, std::span<const int> labels);

/// Mean over rows of log(1 + sum_{j != y} exp(d_y - d_j)) + gamma * d_y.
/// Gradient is with respect to the distance matrix.
LossGrad loss_ca(const Mat& dist, std::span<const int> labels, double gamma);

/// Softmin-weighted anchor estimate from the distance rows of one class:
/// mean_i d_i * (1 - softmin(d_i)).
RowVec anchor_estimate(const Mat& class_dist);

/// Replaces anchor `class_index` with anchor_estimate(class_dist).  The
/// unknown anchor cannot be updated.
void update_anchor(AnchorSet& anchors, int class_index, const Mat& class_dist);

/// Index of the nearest anchor; ties go to the lowest index, so a tie with
/// the unknown anchor resolves to the known class.
int classify(std::span<const double> dist);
std::vector<int> classify(const Mat& dist);

}  // namespace hsiucd
