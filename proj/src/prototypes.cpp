#include "hsiucd/prototypes.hpp"

#include "hsiucd/assignment.hpp"
#include "hsiucd/louvain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace hsiucd {

PrototypeGroups PrototypeGroups::singletons(int prototypes) {
  PrototypeGroups g;
  g.partition.resize(prototypes);
  std::iota(g.partition.begin(), g.partition.end(), 0);
  g.count = prototypes;
  return g;
}

std::vector<int> PrototypeGroups::group_sizes() const {
  std::vector<int> sizes(count, 0);
  for (int g : partition) ++sizes[g];
  return sizes;
}

std::vector<int> PrototypeGroups::unknown_groups() const {
  std::vector<char> claimed(count, 0);
  for (int g : known_map) {
    if (g >= 0) claimed[g] = 1;
  }
  std::vector<int> out;
  for (int g = 0; g < count; ++g) {
    if (!claimed[g] && is_supported(g)) out.push_back(g);
  }
  return out;
}

void PrototypeGroups::validate(int prototypes) const {
  if (static_cast<int>(partition.size()) != prototypes) {
    throw std::invalid_argument("partition covers " + std::to_string(partition.size()) +
                                " prototypes, expected " + std::to_string(prototypes));
  }
  std::vector<char> seen(count, 0);
  for (int g : partition) {
    if (g < 0 || g >= count) throw std::invalid_argument("partition group id out of range");
    seen[g] = 1;
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw std::invalid_argument("partition is not surjective");
  }
  if (!supported.empty() && static_cast<int>(supported.size()) != count) {
    throw std::invalid_argument("supported flags do not match the group count");
  }
  std::vector<char> used(count, 0);
  for (int g : known_map) {
    if (g < -1 || g >= count) throw std::invalid_argument("known_map group id out of range");
    if (g >= 0) {
      if (used[g]) throw std::invalid_argument("known_map is not injective");
      used[g] = 1;
    }
  }
}

PrototypeSet init_prototypes(int count, int dim, double tau, std::uint64_t seed) {
  if (count < 1 || dim < 1) throw std::invalid_argument("prototype count and dim must be positive");
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  PrototypeSet ps;
  ps.tau = tau;
  ps.vectors.resize(count, dim);
  for (Eigen::Index i = 0; i < ps.vectors.size(); ++i) ps.vectors.data()[i] = n(rng);
  ps.vectors = l2_normalize_rows(ps.vectors);
  return ps;
}

Mat l2_normalize_rows(const Mat& x) {
  Mat out = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double norm = x.row(i).norm();
    if (norm > 0.0) out.row(i) /= norm;
  }
  return out;
}

Mat l2_normalize_rows_backward(const Mat& x, const Mat& grad_out) {
  Mat g = Mat::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double norm = x.row(i).norm();
    if (norm <= 0.0) continue;
    const RowVec u = x.row(i) / norm;
    g.row(i) = (grad_out.row(i) - grad_out.row(i).dot(u) * u) / norm;
  }
  return g;
}

Mat assign(const Mat& z, const PrototypeSet& protos) {
  if (z.cols() != protos.dim()) {
    throw std::invalid_argument("embedding width " + std::to_string(z.cols()) +
                                " does not match prototype dim " + std::to_string(protos.dim()));
  }
  if (!z.allFinite()) throw std::invalid_argument("assign: non-finite embeddings");
  Mat logits = (z * protos.vectors.transpose()) / protos.tau;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    logits.row(i).array() -= logits.row(i).maxCoeff();
    logits.row(i) = logits.row(i).array().exp().matrix();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

AssignGrad assign_backward(const Mat& z, const PrototypeSet& protos, const Mat& p,
                           const Mat& grad_p) {
  Mat dlogits = p.cwiseProduct(grad_p);
  const Vec inner = dlogits.rowwise().sum();
  dlogits -= p.cwiseProduct(inner.replicate(1, p.cols()));
  dlogits /= protos.tau;
  AssignGrad g;
  g.z = dlogits * protos.vectors;
  g.protos = dlogits.transpose() * z;
  return g;
}

Mat group_probabilities(const Mat& p, const PrototypeGroups& groups) {
  if (static_cast<Eigen::Index>(groups.partition.size()) != p.cols()) {
    throw std::invalid_argument("partition size does not match assignment width");
  }
  Mat q = Mat::Zero(p.rows(), groups.count);
  for (Eigen::Index k = 0; k < p.cols(); ++k) q.col(groups.partition[k]) += p.col(k);
  return q;
}

Mat group_probabilities_backward(const Mat& grad_q, const PrototypeGroups& groups) {
  Mat g(grad_q.rows(), static_cast<Eigen::Index>(groups.partition.size()));
  for (std::size_t k = 0; k < groups.partition.size(); ++k) {
    g.col(static_cast<Eigen::Index>(k)) = grad_q.col(groups.partition[k]);
  }
  return g;
}

PairLossGrad loss_ps(const Mat& p, const Mat& p_pos) {
  if (p.rows() != p_pos.rows() || p.cols() != p_pos.cols()) {
    throw std::invalid_argument("loss_ps: shape mismatch");
  }
  PairLossGrad out;
  out.grad_a = Mat::Zero(p.rows(), p.cols());
  out.grad_b = Mat::Zero(p.rows(), p.cols());
  const Eigen::Index m = p.rows();
  if (m == 0) return out;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double dot = p.row(i).dot(p_pos.row(i));
    if (dot > kLogEps) {
      out.value -= std::log(dot);
      out.grad_a.row(i) = -p_pos.row(i) / dot;
      out.grad_b.row(i) = -p.row(i) / dot;
    } else {
      out.value -= std::log(kLogEps);
    }
  }
  out.value /= static_cast<double>(m);
  out.grad_a /= static_cast<double>(m);
  out.grad_b /= static_cast<double>(m);
  return out;
}

PairLossGrad loss_pgs(const Mat& q, const Mat& q_pos) {
  if (q.rows() != q_pos.rows() || q.cols() != q_pos.cols()) {
    throw std::invalid_argument("loss_pgs: shape mismatch");
  }
  PairLossGrad out;
  out.grad_a = Mat::Zero(q.rows(), q.cols());
  out.grad_b = Mat::Zero(q.rows(), q.cols());
  const Eigen::Index m = q.rows();
  if (m == 0) return out;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index g = 0; g < q.cols(); ++g) {
      const double a = q(i, g);
      const double b = q_pos(i, g);
      const double la = std::log(std::max(a, kLogEps));
      const double lb = std::log(std::max(b, kLogEps));
      out.value -= b * la + a * lb;
      out.grad_a(i, g) = -lb - (a > kLogEps ? b / a : 0.0);
      out.grad_b(i, g) = -la - (b > kLogEps ? a / b : 0.0);
    }
  }
  out.value /= static_cast<double>(m);
  out.grad_a /= static_cast<double>(m);
  out.grad_b /= static_cast<double>(m);
  return out;
}

LossGrad loss_reg(const Mat& p, const PrototypeGroups& groups) {
  const Eigen::Index w = p.cols();
  if (static_cast<Eigen::Index>(groups.partition.size()) != w) {
    throw std::invalid_argument("loss_reg: partition size does not match assignment width");
  }
  LossGrad out;
  out.grad = Mat::Zero(p.rows(), w);
  const Eigen::Index m = p.rows();
  if (m == 0) return out;
  const std::vector<int> sizes = groups.group_sizes();
  const RowVec mean = p.colwise().mean();
  RowVec dmean(w);
  for (Eigen::Index k = 0; k < w; ++k) {
    const double prior = 1.0 / (static_cast<double>(groups.count) * sizes[groups.partition[k]]);
    const double pk = mean[k];
    if (pk > kLogEps) {
      out.value += pk * (std::log(pk) - std::log(prior));
      dmean[k] = std::log(pk) - std::log(prior) + 1.0;
    } else {
      out.value += pk * (std::log(kLogEps) - std::log(prior));
      dmean[k] = std::log(kLogEps) - std::log(prior);
    }
  }
  out.grad = dmean.replicate(m, 1) / static_cast<double>(m);
  return out;
}

KcdLossGrad loss_kcd(const Mat& q, const Mat& q_pos, std::span<const int> known_labels,
                     const PrototypeGroups& groups) {
  if (q.rows() != q_pos.rows() || q.cols() != q_pos.cols() ||
      static_cast<Eigen::Index>(known_labels.size()) != q.rows()) {
    throw std::invalid_argument("loss_kcd: shape mismatch");
  }
  KcdLossGrad out;
  out.grad_a = Mat::Zero(q.rows(), q.cols());
  out.grad_b = Mat::Zero(q.rows(), q.cols());
  const Eigen::Index d = q.rows();
  if (d == 0) return out;
  for (Eigen::Index i = 0; i < d; ++i) {
    const int y = known_labels[i];
    if (y < 0 || y >= static_cast<int>(groups.known_map.size())) {
      throw std::invalid_argument("loss_kcd: label " + std::to_string(y) + " has no known class");
    }
    const int g = groups.known_map[y];
    if (g < 0) {
      ++out.skipped;
      continue;
    }
    const double a = q(i, g);
    const double b = q_pos(i, g);
    out.value -= std::log(std::max(a, kLogEps)) + std::log(std::max(b, kLogEps));
    if (a > kLogEps) out.grad_a(i, g) = -1.0 / a;
    if (b > kLogEps) out.grad_b(i, g) = -1.0 / b;
  }
  out.value /= static_cast<double>(d);
  out.grad_a /= static_cast<double>(d);
  out.grad_b /= static_cast<double>(d);
  return out;
}

std::vector<std::vector<int>> association_sets(const Mat& p, int top_k) {
  const int w = static_cast<int>(p.cols());
  if (top_k < 1 || top_k > w) {
    throw std::invalid_argument("association_sets: top_k " + std::to_string(top_k) +
                                " must be in [1, " + std::to_string(w) + "]");
  }
  std::vector<std::vector<int>> sets(w);
  std::vector<int> order(w);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + top_k, order.end(), [&](int a, int b) {
      if (p(i, a) != p(i, b)) return p(i, a) > p(i, b);
      return a < b;
    });
    for (int r = 0; r < top_k; ++r) sets[order[r]].push_back(static_cast<int>(i));
  }
  return sets;
}

Mat jaccard_matrix(const std::vector<std::vector<int>>& sets) {
  const int w = static_cast<int>(sets.size());
  std::vector<std::vector<int>> sorted = sets;
  for (auto& s : sorted) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }
  Mat sim = Mat::Zero(w, w);
  std::vector<int> common;
  for (int a = 0; a < w; ++a) {
    for (int b = a; b < w; ++b) {
      common.clear();
      std::set_intersection(sorted[a].begin(), sorted[a].end(), sorted[b].begin(), sorted[b].end(),
                            std::back_inserter(common));
      const std::size_t uni = sorted[a].size() + sorted[b].size() - common.size();
      const double s = uni == 0 ? 0.0 : static_cast<double>(common.size()) / static_cast<double>(uni);
      sim(a, b) = s;
      sim(b, a) = s;
    }
  }
  return sim;
}

PrototypeGroups group_prototypes(const Mat& similarity, double resolution, int restarts) {
  const LouvainResult r = louvain(similarity, resolution, restarts);
  PrototypeGroups g;
  g.partition = r.partition;
  g.count = r.count;
  g.supported.assign(g.count, 0);
  for (Eigen::Index k = 0; k < similarity.rows(); ++k) {
    if (similarity.row(k).cwiseAbs().sum() > 0.0) g.supported[g.partition[k]] = 1;
  }
  return g;
}

std::vector<int> match_known_groups(const Mat& q_support, std::span<const int> known_labels,
                                    int known_classes, int group_count) {
  if (static_cast<Eigen::Index>(known_labels.size()) != q_support.rows() ||
      q_support.cols() != group_count) {
    throw std::invalid_argument("match_known_groups: shape mismatch");
  }
  Mat cost = Mat::Zero(known_classes, group_count);
  std::vector<int> counts(known_classes, 0);
  for (Eigen::Index i = 0; i < q_support.rows(); ++i) {
    const int y = known_labels[i];
    if (y < 0 || y >= known_classes) throw std::invalid_argument("match_known_groups: bad label");
    cost.row(y) -= q_support.row(i);
    ++counts[y];
  }
  for (int c = 0; c < known_classes; ++c) {
    if (counts[c] > 0) cost.row(c) /= counts[c];
  }
  return solve_assignment(cost);
}

Discovery discover(const Mat& q_rejected, const PrototypeGroups& groups) {
  if (q_rejected.cols() != groups.count) throw std::invalid_argument("discover: width mismatch");
  Discovery out;
  out.cluster.resize(q_rejected.rows());
  const std::vector<int> candidates = groups.unknown_groups();
  if (candidates.empty()) {
    out.fallback = true;
    std::fill(out.cluster.begin(), out.cluster.end(), groups.count);
    return out;
  }
  for (Eigen::Index i = 0; i < q_rejected.rows(); ++i) {
    int best = candidates.front();
    for (int g : candidates) {
      if (q_rejected(i, g) > q_rejected(i, best)) best = g;
    }
    out.cluster[i] = best;
  }
  return out;
}

int estimate_class_count(const PrototypeGroups& groups) {
  int n = 0;
  for (int g = 0; g < groups.count; ++g) n += groups.is_supported(g) ? 1 : 0;
  return n;
}

}  // namespace hsiucd
