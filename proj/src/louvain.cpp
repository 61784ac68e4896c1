#include "hsiucd/louvain.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace hsiucd {

namespace {

constexpr double kMinGain = 1e-12;

std::vector<int> renumber(const std::vector<int>& labels, int* count) {
  std::map<int, int> ids;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = ids.try_emplace(labels[i], static_cast<int>(ids.size())).first;
    out[i] = it->second;
  }
  *count = static_cast<int>(ids.size());
  return out;
}

// Local moves in ascending node order starting from `community`, until a
// full sweep makes no move.  Returns whether any node moved.
bool local_moves(const Mat& w, double resolution, const std::vector<int>& order,
                 std::vector<int>& community) {
  const int n = static_cast<int>(w.rows());
  const Vec degree = w.rowwise().sum();
  const double two_m = degree.sum();
  std::vector<double> total(n, 0.0);
  std::vector<int> members(n, 0);
  for (int i = 0; i < n; ++i) {
    total[community[i]] += degree[i];
    ++members[community[i]];
  }
  bool moved_any = false;
  std::vector<double> link(n, 0.0);
  std::vector<int> touched;
  bool improved = true;
  while (improved) {
    improved = false;
    for (int i : order) {
      const int own = community[i];
      touched.clear();
      for (int j = 0; j < n; ++j) {
        if (j == i || w(i, j) == 0.0) continue;
        const int c = community[j];
        if (link[c] == 0.0) touched.push_back(c);
        link[c] += w(i, j);
      }
      total[own] -= degree[i];
      auto gain = [&](int c) { return link[c] - resolution * total[c] * degree[i] / two_m; };
      int best = own;
      double best_gain = gain(own);
      std::sort(touched.begin(), touched.end());
      for (int c : touched) {
        if (c == own) continue;
        const double g = gain(c);
        if (g > best_gain + kMinGain) {
          best = c;
          best_gain = g;
        }
      }
      // An empty community has gain 0.
      if (best_gain < -kMinGain) {
        --members[own];
        best = static_cast<int>(std::find(members.begin(), members.end(), 0) - members.begin());
        ++members[own];
      }
      --members[own];
      ++members[best];
      total[best] += degree[i];
      community[i] = best;
      for (int c : touched) link[c] = 0.0;
      if (best != own) {
        improved = true;
        moved_any = true;
      }
    }
  }
  return moved_any;
}

Mat aggregate(const Mat& w, const std::vector<int>& ids, int count) {
  Mat next = Mat::Zero(count, count);
  for (Eigen::Index a = 0; a < w.rows(); ++a) {
    for (Eigen::Index b = 0; b < w.cols(); ++b) next(ids[a], ids[b]) += w(a, b);
  }
  return next;
}

}  // namespace

double modularity(const Mat& w, const std::vector<int>& partition, double resolution) {
  if (w.rows() != w.cols() || static_cast<std::size_t>(w.rows()) != partition.size()) {
    throw std::invalid_argument("modularity: size mismatch");
  }
  const Vec degree = w.rowwise().sum();
  const double two_m = degree.sum();
  if (two_m <= 0.0) return 0.0;
  double q = 0.0;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      if (partition[i] == partition[j]) q += w(i, j) - resolution * degree[i] * degree[j] / two_m;
    }
  }
  return q / two_m;
}

namespace {

std::vector<int> node_order(int n, std::mt19937_64* rng) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (rng != nullptr) std::shuffle(order.begin(), order.end(), *rng);
  return order;
}

// One Louvain run.  Ascending node order when rng is null, otherwise a
// shuffled order per level.
LouvainResult louvain_once(const Mat& base, double resolution, std::mt19937_64* rng) {
  const int n = static_cast<int>(base.rows());
  LouvainResult result;
  result.partition.resize(n);
  std::iota(result.partition.begin(), result.partition.end(), 0);
  result.count = n;

  // Coarsening levels, then a node-level refinement from the coarse result;
  // a refinement that moves anything restarts coarsening from there.
  std::vector<int> node_of(n);  // original node -> current aggregated node
  std::iota(node_of.begin(), node_of.end(), 0);
  Mat graph = base;
  while (true) {
    std::vector<int> community(graph.rows());
    std::iota(community.begin(), community.end(), 0);
    if (local_moves(graph, resolution, node_order(static_cast<int>(graph.rows()), rng), community)) {
      int count = 0;
      const std::vector<int> ids = renumber(community, &count);
      for (int i = 0; i < n; ++i) node_of[i] = ids[node_of[i]];
      result.partition = renumber(node_of, &result.count);
      result.modularity_history.push_back(modularity(base, result.partition, resolution));
      if (count < graph.rows()) {
        graph = aggregate(graph, ids, count);
        continue;
      }
    }
    if (graph.rows() == n) break;
    std::vector<int> refined = node_of;
    if (!local_moves(base, resolution, node_order(n, rng), refined)) break;
    int count = 0;
    node_of = renumber(refined, &count);
    result.partition = node_of;
    result.count = count;
    result.modularity_history.push_back(modularity(base, result.partition, resolution));
    graph = aggregate(base, node_of, count);
  }
  return result;
}

}  // namespace

LouvainResult louvain(const Mat& w, double resolution, int restarts) {
  if (w.rows() != w.cols()) throw std::invalid_argument("louvain: matrix must be square");
  if (!w.allFinite() || (w.array() < 0.0).any()) {
    throw std::invalid_argument("louvain: weights must be finite and non-negative");
  }
  if (w.size() > 0 && (w - w.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw std::invalid_argument("louvain: matrix must be symmetric");
  }
  if (restarts < 1) throw std::invalid_argument("louvain: restarts must be at least 1");
  Mat base = w;
  base.diagonal().setZero();
  if (base.rows() == 0 || base.sum() <= 0.0) return louvain_once(base, resolution, nullptr);

  LouvainResult best = louvain_once(base, resolution, nullptr);
  double best_q = modularity(base, best.partition, resolution);
  for (int r = 1; r < restarts; ++r) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(r));
    LouvainResult candidate = louvain_once(base, resolution, &rng);
    const double q = modularity(base, candidate.partition, resolution);
    if (q > best_q + kMinGain) {
      best = std::move(candidate);
      best_q = q;
    }
  }
  return best;
}

}  // namespace hsiucd
