#include "hsiucd/episode.hpp"


#include <algorithm>
#include <stdexcept>
#include <string>

namespace hsiucd {

namespace {

std::string class_label(const HsiCube& cube, int id) {
  std::string s = "class " + std::to_string(id);
  if (id >= 1 && id <= static_cast<int>(cube.class_names.size())) {
    s += " (" + cube.class_names[id - 1] + ")";
  }
  return s;
}

const std::vector<std::pair<int, int>>& pixels_of(const PixelPool& pool, int id) {
  static const std::vector<std::pair<int, int>> empty;
  auto it = pool.find(id);
  return it == pool.end() ? empty : it->second;
}

void check_available(const HsiCube& cube, const PixelPool& pool, int id, int need) {
  const std::size_t have = pixels_of(pool, id).size();
  if (have < static_cast<std::size_t>(need)) {
    throw std::invalid_argument(class_label(cube, id) + " has " + std::to_string(have) +
                                " available labeled pixels, needs " + std::to_string(need));
  }
}

// Draws `count` distinct pixels of class `id` and extracts their patches.
std::vector<Patch> draw(const HsiCube& cube, const PixelPool& pool, int id, int count,
                        std::mt19937_64& rng, int patch_size) {
  const auto& px = pixels_of(pool, id);
  std::vector<std::size_t> idx(px.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // Partial Fisher-Yates.
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> u(i, idx.size() - 1);
    std::swap(idx[i], idx[u(rng)]);
  }
  std::vector<Patch> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const auto [r, c] = px[idx[i]];
    out.push_back(extract_patch(cube, r, c, patch_size));
  }
  return out;
}

void add_noise(Patch& p, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (double& v : p.values) v += n(rng);
}

}  // namespace

PixelPool index_pixels(const HsiCube& cube) {
  PixelPool pool;
  for (int r = 0; r < cube.height; ++r) {
    for (int c = 0; c < cube.width; ++c) {
      const int l = cube.label(r, c);
      if (l > 0) pool[l].emplace_back(r, c);
    }
  }
  return pool;
}

std::vector<const Patch*> Episode::all() const {
  std::vector<const Patch*> out;
  out.reserve(size());
  for (const auto& p : support) out.push_back(&p);
  for (const auto& p : query_known) out.push_back(&p);
  for (const auto& p : query_unknown) out.push_back(&p);
  return out;
}

Episode sample_episode(const HsiCube& cube, const PixelPool& pool, const ClassSplit& split, int k,
                       int d, std::uint64_t seed, int patch_size) {
  if (k < 1 || d < 1) throw std::invalid_argument("episode needs k >= 1 and d >= 1");
  for (int id : split.known_ids) check_available(cube, pool, id, k + d);
  for (int id : split.unknown_ids) check_available(cube, pool, id, d);
  std::mt19937_64 rng(seed);
  Episode ep;
  ep.k = k;
  ep.d = d;
  for (int id : split.known_ids) {
    std::vector<Patch> drawn = draw(cube, pool, id, k + d, rng, patch_size);
    for (int i = 0; i < k + d; ++i) {
      (i < k ? ep.support : ep.query_known).push_back(std::move(drawn[i]));
    }
  }
  for (int id : split.unknown_ids) {
    for (auto& p : draw(cube, pool, id, d, rng, patch_size)) ep.query_unknown.push_back(std::move(p));
  }
  return ep;
}

Episode sample_episode(const HsiCube& cube, const ClassSplit& split, int k, int d,
                       std::uint64_t seed, int patch_size) {
  return sample_episode(cube, index_pixels(cube), split, k, d, seed, patch_size);
}

Patch augment_weak(const Patch& p, const AugmentConfig& config, std::mt19937_64& rng) {
  Patch out = p;
  if (config.flips) {
    std::bernoulli_distribution coin(0.5);
    const bool flip_v = coin(rng);
    const bool flip_h = coin(rng);
    for (int r = 0; r < p.size; ++r) {
      for (int c = 0; c < p.size; ++c) {
        const int sr = flip_v ? p.size - 1 - r : r;
        const int sc = flip_h ? p.size - 1 - c : c;
        for (int b = 0; b < p.bands; ++b) out.at(r, c, b) = p.at(sr, sc, b);
      }
    }
  }
  add_noise(out, config.weak_sigma, rng);
  return out;
}

Patch augment_strong(const Patch& p, const AugmentConfig& config, std::mt19937_64& rng) {
  const int hi = std::min(config.crop_max, p.size);
  const int lo = std::clamp(config.crop_min, 1, hi);
  const int crop = std::uniform_int_distribution<int>(lo, hi)(rng);
  std::uniform_int_distribution<int> offset(0, p.size - crop);
  const int top = offset(rng);
  const int left = offset(rng);
  Patch out = p;
  std::uniform_real_distribution<double> jitter(config.jitter_low, config.jitter_high);
  std::vector<double> scale(p.bands);
  for (double& s : scale) s = jitter(rng);
  for (int r = 0; r < p.size; ++r) {
    const int sr = top + r * crop / p.size;
    for (int c = 0; c < p.size; ++c) {
      const int sc = left + c * crop / p.size;
      for (int b = 0; b < p.bands; ++b) out.at(r, c, b) = p.at(sr, sc, b) * scale[b];
    }
  }
  add_noise(out, config.strong_sigma, rng);
  return out;
}

PositivePairs build_positive_pairs(const Mat& weak, const Mat& strong, const std::vector<int>& labels,
                                   std::mt19937_64& rng) {
  const Eigen::Index m = weak.rows();
  if (strong.rows() != m || static_cast<Eigen::Index>(labels.size()) != m || strong.cols() != weak.cols()) {
    throw std::invalid_argument("build_positive_pairs: row count mismatch");
  }
  PositivePairs out;
  out.positive.assign(m, -1);
  std::map<int, std::vector<int>> by_label;
  std::vector<int> unlabeled;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (labels[i] >= 0) {
      by_label[labels[i]].push_back(static_cast<int>(i));
    } else {
      unlabeled.push_back(static_cast<int>(i));
    }
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    if (labels[i] < 0) continue;
    const auto& mates = by_label[labels[i]];
    if (mates.size() == 1) ++out.self_paired_labeled;
    out.positive[i] = mates[std::uniform_int_distribution<std::size_t>(0, mates.size() - 1)(rng)];
  }
  Vec strong_norm(m), weak_norm(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    strong_norm[i] = strong.row(i).norm();
    weak_norm[i] = weak.row(i).norm();
  }
  for (int i : unlabeled) {
    int best = -1;
    double best_cos = 0.0;
    for (int j : unlabeled) {
      if (j == i) continue;
      const double denom = weak_norm[i] * strong_norm[j];
      const double cos = denom > 0.0 ? weak.row(i).dot(strong.row(j)) / denom : 0.0;
      if (best < 0 || cos > best_cos) {
        best = j;
        best_cos = cos;
      }
    }
    out.positive[i] = best < 0 ? i : best;
  }
  return out;
}

std::vector<Patch> replicate_with_noise(const std::vector<Patch>& patches, int copies, double sigma,
                                        std::mt19937_64& rng) {
  if (copies < 1) throw std::invalid_argument("copies must be at least 1");
  std::vector<Patch> out;
  out.reserve(patches.size() * copies);
  for (const auto& p : patches) {
    for (int c = 0; c < copies; ++c) {
      Patch q = p;
      add_noise(q, sigma, rng);
      out.push_back(std::move(q));
    }
  }
  return out;
}

std::vector<Patch> build_pretrain_pool(const HsiCube& cube, const PixelPool& pool,
                                       const ClassSplit& split, int k, int copies, double sigma,
                                       std::uint64_t seed, int patch_size) {
  if (copies < 1) throw std::invalid_argument("copies must be at least 1");
  for (int id : split.known_ids) check_available(cube, pool, id, k);
  std::mt19937_64 rng(seed);
  std::vector<Patch> labeled;
  for (int id : split.known_ids) {
    for (auto& p : draw(cube, pool, id, k, rng, patch_size)) labeled.push_back(std::move(p));
  }
  return replicate_with_noise(labeled, copies, sigma, rng);
}

}  // namespace hsiucd
