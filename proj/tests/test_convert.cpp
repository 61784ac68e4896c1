#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "hsiucd/convert.hpp"

#include <filesystem>

using namespace hsiucd;
namespace fs = std::filesystem;

namespace {

const fs::path kData = HSIUCD_TEST_DATA;

double expected_value(int r, int c, int b) { return 100.0 * r + 10.0 * c + b + 0.5; }
int expected_label(int r, int c) { return (5 * r + c) % 4; }

void check_cube(const HsiCube& cube) {
  REQUIRE(cube.height == 4);
  REQUIRE(cube.width == 5);
  REQUIRE(cube.bands == 3);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 5; ++c) {
      CHECK(cube.label(r, c) == expected_label(r, c));
      for (int b = 0; b < 3; ++b) CHECK(cube.value(r, c, b) == static_cast<float>(expected_value(r, c, b)));
    }
  }
  CHECK(cube.class_count() == 3);
}

}  // namespace

TEST_CASE("npy arrays in C and Fortran order") {
  const NdArray c = read_npy(kData / "cube_c.npy");
  const NdArray f = read_npy(kData / "cube_f.npy");
  CHECK(c.shape == std::vector<std::size_t>{4, 5, 3});
  CHECK(f.shape == c.shape);
  CHECK(c.values == f.values);
  CHECK(c.values[(2 * 5 + 3) * 3 + 1] == expected_value(2, 3, 1));
}

TEST_CASE("npy write / read round trip") {
  NdArray a;
  a.shape = {2, 3};
  a.values = {1.5, -2.0, 3.25, 0.0, 1e300, -1e-300};
  const fs::path p = fs::temp_directory_path() / "hsiucd_roundtrip.npy";
  write_npy(a, p);
  const NdArray b = read_npy(p);
  CHECK(b.shape == a.shape);
  CHECK(b.values == a.values);
  fs::remove(p);
}

TEST_CASE("MAT v5 uncompressed, compressed and v7.3 give the same cube") {
  for (const char* file : {"cube_v5.mat", "cube_v5z.mat", "cube_v73.mat"}) {
    CAPTURE(file);
    ConvertOptions o;
    o.data = kData / file;
    o.data_key = "cube";
    o.labels_key = "gt";
    const HsiCube cube = convert_dataset(o);
    check_cube(cube);
    CHECK(cube.name == fs::path(file).stem().string());
  }
}

TEST_CASE("non-numeric MAT variables are skipped and unnamed variables are found by rank") {
  auto vars = read_mat(kData / "cube_v5.mat");
  CHECK(vars.count("note") == 0);
  CHECK(vars.count("cube") == 1);
  auto v73 = read_mat(kData / "cube_v73.mat");
  CHECK(v73.count("name") == 0);
  CHECK(v73.at("cube").shape == std::vector<std::size_t>{4, 5, 3});
  ConvertOptions o;
  o.data = kData / "cube_v5.mat";
  check_cube(convert_dataset(o));
}

TEST_CASE("npy data with separate labels and a band-first layout") {
  ConvertOptions o;
  o.data = kData / "cube_c.npy";
  o.labels = kData / "labels.npy";
  o.name = "tiny";
  o.known_count = 2;
  o.class_names = {"x", "y", "z"};
  const HsiCube cube = convert_dataset(o);
  check_cube(cube);
  CHECK(cube.name == "tiny");
  CHECK(cube.known_count == 2);
  CHECK(cube.class_names[1] == "y");

  o.data = kData / "cube_bands_first.npy";
  o.band_axis = 0;
  check_cube(convert_dataset(o));
}

TEST_CASE("converter errors") {
  ConvertOptions o;
  o.data = kData / "two_cubes.mat";
  CHECK_THROWS_WITH_AS(convert_dataset(o), doctest::Contains("several 3-d"), std::runtime_error);
  o.data_key = "missing";
  CHECK_THROWS_WITH_AS(convert_dataset(o), doctest::Contains("no variable 'missing'"), std::runtime_error);

  ConvertOptions frac;
  frac.data = kData / "cube_c.npy";
  frac.labels = kData / "labels_frac.npy";
  CHECK_THROWS_WITH_AS(convert_dataset(frac), doctest::Contains("non-negative integers"), std::invalid_argument);

  ConvertOptions wrong_axis;
  wrong_axis.data = kData / "cube_c.npy";
  wrong_axis.labels = kData / "labels.npy";
  wrong_axis.band_axis = 0;
  CHECK_THROWS_WITH_AS(convert_dataset(wrong_axis), doctest::Contains("shape does not match"), std::invalid_argument);

  ConvertOptions names;
  names.data = kData / "cube_c.npy";
  names.labels = kData / "labels.npy";
  names.class_names = {"only"};
  CHECK_THROWS_AS(convert_dataset(names), std::invalid_argument);

  ConvertOptions txt;
  txt.data = kData / "make_fixtures.py";
  CHECK_THROWS_WITH_AS(convert_dataset(txt), doctest::Contains("unsupported input format"), std::runtime_error);
  CHECK_THROWS_AS(read_npy(kData / "cube_v5.mat"), std::runtime_error);
}
