#pragma once

#include "hsiucd/anchor.hpp"
#include "hsiucd/louvain.hpp"
#include "hsiucd/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace hsiucd {

/// Trainable prototype vectors (rows) and the softmax temperature.
struct PrototypeSet {
  Mat vectors;  // (w, E)
  double tau = 0.1;

  int count() const { return static_cast<int>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
};

/// A partition of prototypes into groups, plus the known-class matching.
struct PrototypeGroups {
  std::vector<int> partition;  // prototype -> group id in [0, count)
  int count = 0;
  std::vector<int> known_map;  // known class index -> group id, or -1
  // Per group: some member had graph weight when grouped.  Empty means all.
  std::vector<char> supported;

  static PrototypeGroups singletons(int prototypes);
  std::vector<int> group_sizes() const;
  /// Groups not claimed by any known class, ascending.
  bool is_supported(int group) const { return supported.empty() || supported[group]; }
  /// Supported groups not claimed by a known class.
  std::vector<int> unknown_groups() const;
  void validate(int prototypes) const;
};

/// Log arguments are clamped from below at this value.
inline constexpr double kLogEps = 1e-12;

/// Unit-Gaussian rows, L2-normalized.
PrototypeSet init_prototypes(int count, int dim, double tau, std::uint64_t seed);

/// Row-wise L2 normalization and its backward pass.
Mat l2_normalize_rows(const Mat& x);
Mat l2_normalize_rows_backward(const Mat& x, const Mat& grad_out);

/// p_i = softmax(z_i C^T / tau), shape (M, w).
Mat assign(const Mat& z, const PrototypeSet& protos);

struct AssignGrad {
  Mat z;       // dL/dz
  Mat protos;  // dL/dC
};
/// Backward through assign() given p = assign(z, protos) and dL/dp.
AssignGrad assign_backward(const Mat& z, const PrototypeSet& protos, const Mat& p,
                           const Mat& grad_p);

/// q_i^g = sum of p_i^k over prototypes k in group g, shape (M, groups).
Mat group_probabilities(const Mat& p, const PrototypeGroups& groups);
/// dL/dp from dL/dq.
Mat group_probabilities_backward(const Mat& grad_q, const PrototypeGroups& groups);

struct PairLossGrad {
  double value = 0.0;
  Mat grad_a;
  Mat grad_b;
};

/// -(1/M) sum_i log(p_i . p'_i).
PairLossGrad loss_ps(const Mat& p, const Mat& p_pos);

/// -(1/M) sum_i (q'_i . log q_i + q_i . log q'_i).
PairLossGrad loss_pgs(const Mat& q, const Mat& q_pos);

/// KL(mean_i p_i || prior), prior_k = 1 / (groups * |group of k|).
/// Gradient is with respect to p.
LossGrad loss_reg(const Mat& p, const PrototypeGroups& groups);

/// -(1/D) sum_i (log q_i^{g(y_i)} + log q'_i^{g(y_i)}) over support rows,
/// g = known_map.  Rows whose class has no matched group contribute nothing
/// and are counted in `skipped`; D stays the number of rows.
struct KcdLossGrad {
  double value = 0.0;
  Mat grad_a;
  Mat grad_b;
  int skipped = 0;
};
KcdLossGrad loss_kcd(const Mat& q, const Mat& q_pos, std::span<const int> known_labels,
                     const PrototypeGroups& groups);

/// For each prototype, the rows whose top_k assignment entries include it.
/// Ties rank the lower prototype index first.
std::vector<std::vector<int>> association_sets(const Mat& p, int top_k = 3);

/// Pairwise Jaccard similarity of association sets; both-empty pairs are 0.
Mat jaccard_matrix(const std::vector<std::vector<int>>& sets);

/// Louvain grouping of the Jaccard graph.  known_map is left empty.  A
/// group is supported when at least one member has a nonzero row, i.e.
/// some sample associated with it.
PrototypeGroups group_prototypes(const Mat& similarity, double resolution = 1.0,
                                 int restarts = kDefaultLouvainRestarts);

/// Optimal matching of known classes to groups with cost(c, g) = -mean of
/// q^g over the support rows of class c.  Returns known_map (size
/// known_classes, -1 where unmatched).
std::vector<int> match_known_groups(const Mat& q_support, std::span<const int> known_labels,
                                    int known_classes, int group_count);

struct Discovery {
  std::vector<int> cluster;  // group id per rejected row
  bool fallback = false;     // true when no unknown group existed
};

/// Cluster rejected rows by argmax over unknown groups only.  Without any
/// unknown group every row gets the single fallback id `groups.count`.
Discovery discover(const Mat& q_rejected, const PrototypeGroups& groups);

/// Number of supported groups: known-mapped plus discovered.  Prototypes
/// that no sample associated with do not count as classes.
int estimate_class_count(const PrototypeGroups& groups);

}  // namespace hsiucd
