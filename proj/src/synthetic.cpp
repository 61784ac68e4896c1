#include "hsiucd/synthetic.hpp"

#include "hsiucd/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace hsiucd {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMaxAmplitude = 0.45;  // spectra stay within 0.5 +- this
constexpr int kMaxTries = 20000;

RowVec smooth_curve(int bands, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> amp(0.05, 0.15), freq(0.3, 2.5), phase(0.0, 2 * kPi);
  RowVec c = RowVec::Constant(bands, 0.5);
  for (int m = 0; m < 3; ++m) {
    const double a = amp(rng), f = freq(rng), p = phase(rng);
    for (int b = 0; b < bands; ++b) c[b] += a * std::sin(2 * kPi * f * b / bands + p);
  }
  return c;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (height < 1 || width < 1 || bands < 1) throw std::invalid_argument("synthetic: sizes must be positive");
  if (class_count < 3) throw std::invalid_argument("synthetic: need at least 3 classes");
  if (known_count < 2 || known_count >= class_count) {
    throw std::invalid_argument("synthetic: known_count must be in [2, class_count)");
  }
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("synthetic: noise_sigma must be non-negative");
  if (blobs_per_class < 1) throw std::invalid_argument("synthetic: blobs_per_class must be positive");
  if (border < 0.0) throw std::invalid_argument("synthetic: border must be non-negative");
  const long long blobs = static_cast<long long>(class_count) * blobs_per_class;
  if (blobs > static_cast<long long>(height) * width) {
    throw std::invalid_argument("synthetic: more blobs than pixels");
  }
}

Mat synthetic_means(const SyntheticSpec& spec) {
  spec.validate();
  const double need = spec.min_separation();
  // Curves live in a box of half-width kMaxAmplitude around 0.5.
  if (need > 2.0 * kMaxAmplitude * std::sqrt(static_cast<double>(spec.bands))) {
    throw std::invalid_argument("synthetic: separation " + std::to_string(need) +
                                " is infeasible with " + std::to_string(spec.bands) + " bands");
  }
  std::mt19937_64 rng(mix_seed(spec.seed, 1));
  Mat means(spec.class_count, spec.bands);
  int accepted = 0;
  for (int tries = 0; accepted < spec.class_count; ++tries) {
    if (tries >= kMaxTries) {
      throw std::invalid_argument("synthetic: could not place " + std::to_string(spec.class_count) +
                                  " spectra " + std::to_string(need) + " apart in " +
                                  std::to_string(spec.bands) + " bands");
    }
    const RowVec c = smooth_curve(spec.bands, rng);
    bool ok = true;
    for (int j = 0; j < accepted && ok; ++j) ok = (means.row(j) - c).norm() >= need;
    if (ok) means.row(accepted++) = c;
  }
  return means;
}

HsiCube generate(const SyntheticSpec& spec) {
  const Mat means = synthetic_means(spec);
  const int h = spec.height, w = spec.width;

  // Jittered-grid blob seeds; classes assigned round-robin then shuffled so
  // every class owns blobs_per_class seeds.
  std::mt19937_64 layout(mix_seed(spec.seed, 2));
  const int blobs = spec.class_count * spec.blobs_per_class;
  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(blobs))));
  std::vector<std::pair<double, double>> cells;
  for (int gr = 0; gr < grid; ++gr) {
    for (int gc = 0; gc < grid; ++gc) cells.emplace_back(gr, gc);
  }
  std::shuffle(cells.begin(), cells.end(), layout);
  cells.resize(blobs);
  std::uniform_real_distribution<double> unit(0.15, 0.85);
  std::vector<double> sr(blobs), sc(blobs);
  for (int s = 0; s < blobs; ++s) {
    sr[s] = (cells[s].first + unit(layout)) * h / grid;
    sc[s] = (cells[s].second + unit(layout)) * w / grid;
  }
  std::vector<int> seed_class(blobs);
  for (int s = 0; s < blobs; ++s) seed_class[s] = s % spec.class_count + 1;
  std::shuffle(seed_class.begin(), seed_class.end(), layout);

  HsiCube cube;
  cube.name = "synthetic";
  cube.height = h;
  cube.width = w;
  cube.bands = spec.bands;
  cube.known_count = spec.known_count;
  for (int c = 1; c <= spec.class_count; ++c) cube.class_names.push_back("class_" + std::to_string(c));
  cube.labels.assign(static_cast<std::size_t>(h) * w, 0);
  cube.data.resize(static_cast<std::size_t>(h) * w * spec.bands);

  std::mt19937_64 noise_rng(mix_seed(spec.seed, 3));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      // Nearest seed, and nearest seed of any other class.
      double best = std::numeric_limits<double>::infinity();
      int owner = 0;
      for (int s = 0; s < blobs; ++s) {
        const double dist = std::hypot(r + 0.5 - sr[s], c + 0.5 - sc[s]);
        if (dist < best) {
          best = dist;
          owner = seed_class[s];
        }
      }
      double other = std::numeric_limits<double>::infinity();
      for (int s = 0; s < blobs; ++s) {
        if (seed_class[s] != owner) other = std::min(other, std::hypot(r + 0.5 - sr[s], c + 0.5 - sc[s]));
      }
      // Distance to the bisector between the two seeds is about half the gap.
      const bool edge = (other - best) * 0.5 < spec.border;
      const int label = edge ? 0 : owner;
      cube.labels[static_cast<std::size_t>(r) * w + c] = static_cast<std::int16_t>(label);
      float* px = cube.data.data() + (static_cast<std::size_t>(r) * w + c) * spec.bands;
      for (int b = 0; b < spec.bands; ++b) {
        const double mean = label == 0 ? 0.5 : means(label - 1, b);
        px[b] = static_cast<float>(mean + spec.noise_sigma * noise(noise_rng));
      }
    }
  }
  cube.validate();
  return cube;
}

}  // namespace hsiucd
