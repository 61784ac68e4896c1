#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "hsiucd/cube.hpp"
#include "test_util.hpp"

#include "json.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace hsiucd;
using namespace hsiucd::testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hsiucd_test_cube_" + name);
  fs::remove_all(p);
  return p;
}

HsiCube random_cube(int h, int w, int b, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::uniform_int_distribution<int> lab(0, classes);
  HsiCube cube;
  cube.name = "random";
  cube.height = h;
  cube.width = w;
  cube.bands = b;
  cube.data.resize(static_cast<std::size_t>(h) * w * b);
  for (float& v : cube.data) v = n(rng);
  cube.labels.resize(static_cast<std::size_t>(h) * w);
  for (auto& l : cube.labels) l = static_cast<std::int16_t>(lab(rng));
  for (int c = 1; c <= classes; ++c) cube.class_names.push_back("c" + std::to_string(c));
  return cube;
}

}  // namespace

TEST_CASE("container round trip is bit exact") {
  HsiCube cube = random_cube(7, 5, 4, 3, 1);
  cube.known_count = 2;
  const fs::path dir = temp_dir("roundtrip");
  save_cube(cube, dir);
  const HsiCube back = load_cube(dir);
  CHECK(back.height == 7);
  CHECK(back.width == 5);
  CHECK(back.bands == 4);
  CHECK(back.name == "random");
  CHECK(back.class_names == cube.class_names);
  CHECK(back.known_count == 2);
  CHECK(std::memcmp(back.data.data(), cube.data.data(), cube.data.size() * sizeof(float)) == 0);
  CHECK(back.labels == cube.labels);
  fs::remove_all(dir);
}

TEST_CASE("IP-sized container loads with its dimensions") {
  HsiCube cube = random_cube(145, 145, 200, 16, 2);
  const fs::path dir = temp_dir("ip");
  save_cube(cube, dir);
  const HsiCube back = load_cube(dir);
  CHECK(back.height == 145);
  CHECK(back.width == 145);
  CHECK(back.bands == 200);
  CHECK(back.class_count() == 16);
  fs::remove_all(dir);
}

TEST_CASE("degenerate cube with zero labeled pixels is valid") {
  HsiCube cube = constant_cube(2, 2, 3, 1.0f, 0);
  cube.class_names.clear();
  CHECK_NOTHROW(cube.validate());
  CHECK(cube.labeled_count() == 0);
  const fs::path dir = temp_dir("empty");
  save_cube(cube, dir);
  CHECK(load_cube(dir).labeled_count() == 0);
  fs::remove_all(dir);
}

TEST_CASE("loader errors") {
  const fs::path dir = temp_dir("errors");
  CHECK_THROWS(load_cube(dir));  // missing manifest

  HsiCube cube = random_cube(145, 145, 2, 3, 3);
  save_cube(cube, dir);
  {
    // 145 x 144 label map.
    std::vector<std::int16_t> short_labels(145 * 144, 1);
    std::ofstream out(dir / "labels.bin", std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(short_labels.data()),
              static_cast<std::streamsize>(short_labels.size() * sizeof(std::int16_t)));
  }
  CHECK_THROWS_WITH_AS(load_cube(dir), doctest::Contains("shape mismatch"), std::invalid_argument);

  save_cube(cube, dir);
  {
    std::vector<std::int16_t> labels(145 * 145, 9);
    std::ofstream out(dir / "labels.bin", std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size() * sizeof(std::int16_t)));
  }
  CHECK_THROWS_WITH_AS(load_cube(dir), doctest::Contains("out of range"), std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("non-finite values are rejected unless imputed") {
  HsiCube cube = random_cube(3, 3, 2, 2, 4);
  const fs::path dir = temp_dir("nan");
  cube.data[0] = std::nanf("");
  cube.data[2] = INFINITY;
  fs::create_directories(dir);
  save_cube(cube, dir);
  CHECK_THROWS_AS(load_cube(dir), std::invalid_argument);
  const HsiCube fixed = load_cube(dir, LoadOptions{true});
  double sum = 0.0;
  for (int p = 1; p < 9; ++p) {
    if (p != 1) sum += cube.data[p * 2];
  }
  // Band 0 finite values exclude pixels 0 and 1 (data[2] is pixel 1, band 0).
  CHECK(fixed.data[0] == doctest::Approx(sum / 7.0).epsilon(1e-6));
  CHECK(fixed.data[2] == doctest::Approx(sum / 7.0).epsilon(1e-6));
  fs::remove_all(dir);
}

TEST_CASE("patch extraction") {
  const HsiCube cube = ramp_cube(145, 145, 4);
  const Patch corner = extract_patch(cube, 0, 0, 9);
  for (int b = 0; b < 4; ++b) CHECK(corner.at(4, 4, b) == cube.value(0, 0, b));
  // Mirror without edge repetition: offset -1 maps to +1.
  for (int b = 0; b < 4; ++b) {
    CHECK(corner.at(3, 4, b) == cube.value(1, 0, b));
    CHECK(corner.at(0, 0, b) == cube.value(4, 4, b));
  }

  const Patch mid = extract_patch(cube, 72, 72, 9);
  for (int r = 0; r < 9; ++r) {
    for (int c = 0; c < 9; ++c) {
      for (int b = 0; b < 4; ++b) CHECK(mid.at(r, c, b) == cube.value(68 + r, 68 + c, b));
    }
  }
  CHECK(mid.label == cube.label(72, 72));

  const HsiCube flat = constant_cube(6, 6, 3, 3.0f);
  for (double v : extract_patch(flat, 0, 5, 9).values) CHECK(v == 3.0);

  CHECK_THROWS_AS(extract_patch(cube, 0, 0, 8), std::invalid_argument);
  CHECK_THROWS_AS(extract_patch(cube, 145, 0, 9), std::out_of_range);
  CHECK_THROWS_AS(extract_patch(cube, 0, -1, 9), std::out_of_range);
}

TEST_CASE("interior windows are exact for every odd size") {
  const HsiCube cube = ramp_cube(20, 23, 2);
  std::mt19937_64 rng(5);
  for (int p : {1, 3, 5, 7, 9, 11}) {
    const int half = p / 2;
    for (int trial = 0; trial < 20; ++trial) {
      const int r = half + static_cast<int>(rng() % (20 - 2 * half));
      const int c = half + static_cast<int>(rng() % (23 - 2 * half));
      const Patch patch = extract_patch(cube, r, c, p);
      bool exact = true;
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) {
          for (int b = 0; b < 2; ++b) exact &= patch.at(i, j, b) == cube.value(r - half + i, c - half + j, b);
        }
      }
      CHECK(exact);
    }
  }
}

TEST_CASE("reflect index") {
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-4, 5) == 4);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(9, 5) == 1);
  CHECK(reflect_index(-3, 1) == 0);
  CHECK(reflect_index(3, 2) == 1);
}

TEST_CASE("band normalization") {
  HsiCube cube;
  cube.name = "n";
  cube.height = 1;
  cube.width = 3;
  cube.bands = 2;
  cube.class_names = {"a"};
  cube.labels = {1, 1, 0};
  cube.data = {1.0f, 5.0f, 3.0f, 5.0f, 100.0f, -7.0f};
  const HsiCube n = band_normalize(cube);
  CHECK(n.value(0, 0, 0) == doctest::Approx(-1.0));
  CHECK(n.value(0, 1, 0) == doctest::Approx(1.0));
  CHECK(n.value(0, 0, 1) == 0.0f);
  CHECK(n.value(0, 1, 1) == 0.0f);
  CHECK(n.value(0, 2, 1) == 0.0f);  // constant over labeled pixels -> all zero

  HsiCube r = random_cube(10, 10, 5, 3, 8);
  for (auto& l : r.labels) l = static_cast<std::int16_t>(l == 0 ? 1 : l);
  const HsiCube once = band_normalize(r);
  const HsiCube twice = band_normalize(once);
  double worst = 0.0;
  for (std::size_t i = 0; i < once.data.size(); ++i) worst = std::max(worst, std::abs(double(once.data[i]) - twice.data[i]));
  CHECK(worst < 1e-6);
}

TEST_CASE("class splits") {
  HsiCube cube = random_cube(4, 4, 1, 16, 9);
  cube.name = "Indian_pines";
  ClassSplit s = default_split(cube);
  CHECK(s.known_ids.size() == 11);
  CHECK(s.unknown_ids.size() == 5);
  CHECK_NOTHROW(s.validate(16));
  cube.name = "PaviaU";
  CHECK(default_split(cube).known_ids.size() == 5);
  cube.known_count = 3;
  CHECK(default_split(cube).known_ids == std::vector<int>{1, 2, 3});

  ClassSplit bad{{1, 2}, {2}};
  CHECK_THROWS_AS(bad.validate(3), std::invalid_argument);
  ClassSplit tiny{{1}, {2}};
  CHECK_THROWS_AS(tiny.validate(3), std::invalid_argument);
  ClassSplit none{{1, 2}, {}};
  CHECK_THROWS_AS(none.validate(3), std::invalid_argument);
  ClassSplit range{{1, 2}, {4}};
  CHECK_THROWS_AS(range.validate(3), std::invalid_argument);
  CHECK(s.known_index(3) == 2);
  CHECK(s.known_index(14) == -1);
  CHECK(s.is_unknown(14));
}
