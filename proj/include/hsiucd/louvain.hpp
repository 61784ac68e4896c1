#pragma once

#include "hsiucd/tensor.hpp"

#include <vector>

namespace hsiucd {

struct LouvainResult {
  std::vector<int> partition;             // node -> community, ids 0..count-1
  int count = 0;
  std::vector<double> modularity_history; // modularity after each level
};

/// Newman modularity of `partition` on the weighted graph `w`, diagonal
/// entries included as given.  Zero total weight yields 0.
double modularity(const Mat& w, const std::vector<int>& partition, double resolution = 1.0);

/// Louvain community detection: local moves, then aggregation, repeated
/// until a level makes no move, followed by node-level refinement.  The
/// first run visits nodes in ascending order; each further restart uses a
/// fixed-seed shuffled order and replaces the result only when its
/// modularity is strictly higher, so the output is deterministic.  The
/// diagonal of `w` is ignored.  Community ids are numbered by first
/// appearance in node order.  A graph without edges gives every node its
/// own community.
inline constexpr int kDefaultLouvainRestarts = 8;
LouvainResult louvain(const Mat& w, double resolution = 1.0,
                      int restarts = kDefaultLouvainRestarts);

}  // namespace hsiucd
