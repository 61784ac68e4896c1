#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "hsiucd/synthetic.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <set>

using namespace hsiucd;

TEST_CASE("every class appears and labels stay in range") {
  SyntheticSpec spec;
  spec.height = 64;
  spec.width = 64;
  spec.bands = 20;
  spec.class_count = 8;
  const HsiCube cube = generate(spec);
  std::set<int> present(cube.labels.begin(), cube.labels.end());
  present.erase(0);
  CHECK(present.size() == 8);
  CHECK(cube.class_count() == 8);
  CHECK(cube.known_count == 5);
}

TEST_CASE("same seed gives a bit-identical cube") {
  SyntheticSpec spec;
  const HsiCube a = generate(spec), b = generate(spec);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
  CHECK(a.labels == b.labels);
  spec.seed = 8;
  CHECK(generate(spec).labels != a.labels);
}

TEST_CASE("zero noise makes classes spectrally constant") {
  SyntheticSpec spec;
  spec.noise_sigma = 0.0;
  const HsiCube cube = generate(spec);
  const Mat means = synthetic_means(spec);
  for (int r = 0; r < cube.height; ++r) {
    for (int c = 0; c < cube.width; ++c) {
      const int l = cube.label(r, c);
      if (l == 0) continue;
      for (int b = 0; b < cube.bands; ++b) REQUIRE(cube.value(r, c, b) == static_cast<float>(means(l - 1, b)));
    }
  }
}

TEST_CASE("means respect the separation guarantee") {
  SyntheticSpec spec;
  spec.noise_sigma = 0.1;
  const Mat m = synthetic_means(spec);
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = i + 1; j < m.rows(); ++j) CHECK((m.row(i) - m.row(j)).norm() >= spec.min_separation());
  }
  spec.bands = 2;
  spec.noise_sigma = 1.0;
  CHECK_THROWS_AS(synthetic_means(spec), std::invalid_argument);
}

TEST_CASE("blob interiors hold class-pure 9x9 windows") {
  SyntheticSpec spec;
  const HsiCube cube = generate(spec);
  std::set<int> pure_classes;
  for (int r = 4; r < cube.height - 4; ++r) {
    for (int c = 4; c < cube.width - 4; ++c) {
      const int l = cube.label(r, c);
      if (l == 0) continue;
      bool pure = true;
      for (int i = -4; i <= 4 && pure; ++i) {
        for (int j = -4; j <= 4 && pure; ++j) pure = cube.label(r + i, c + j) == l || cube.label(r + i, c + j) == 0;
      }
      if (pure) pure_classes.insert(l);
    }
  }
  CHECK(pure_classes.size() == 8);
}

TEST_CASE("nearest-mean classification agrees with the Gaussian error bound") {
  SyntheticSpec spec;
  spec.noise_sigma = 0.0;
  const Mat means = synthetic_means(spec);
  double min_sep = INFINITY;
  for (int i = 0; i < means.rows(); ++i) {
    for (int j = i + 1; j < means.rows(); ++j) min_sep = std::min(min_sep, (means.row(i) - means.row(j)).norm());
  }
  // Noise at a quarter of the realized minimum separation; the mean spectra
  // depend only on the seed, not on sigma.
  spec.noise_sigma = 0.25 * min_sep;
  REQUIRE(synthetic_means(spec) == means);
  const HsiCube cube = generate(spec);

  // Union bound: P(err | class i) <= sum_j Phi(-|m_i - m_j| / (2 sigma)).
  double bound = 0.0;
  for (int i = 0; i < means.rows(); ++i) {
    for (int j = 0; j < means.rows(); ++j) {
      if (i != j) bound += 0.5 * std::erfc((means.row(i) - means.row(j)).norm() / (2 * spec.noise_sigma) / std::sqrt(2.0));
    }
  }
  bound /= static_cast<double>(means.rows());

  std::size_t total = 0, correct = 0;
  for (int r = 0; r < cube.height; ++r) {
    for (int c = 0; c < cube.width; ++c) {
      const int l = cube.label(r, c);
      if (l == 0) continue;
      RowVec x(cube.bands);
      for (int b = 0; b < cube.bands; ++b) x[b] = cube.value(r, c, b);
      Eigen::Index best;
      (means.rowwise() - x).rowwise().squaredNorm().minCoeff(&best);
      ++total;
      correct += (best + 1 == l);
    }
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(total);
  MESSAGE("nearest-mean accuracy " << acc << ", union error bound " << bound);
  CHECK(acc >= 1.0 - bound - 0.01);
  CHECK(acc >= 0.99);
}

TEST_CASE("invalid specs") {
  SyntheticSpec s;
  s.known_count = 8;
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
  s = SyntheticSpec{};
  s.class_count = 2;
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
  s = SyntheticSpec{};
  s.noise_sigma = -1.0;
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
}
