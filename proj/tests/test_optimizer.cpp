#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "hsiucd/archive.hpp"
#include "hsiucd/optimizer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

using namespace hsiucd;
namespace fs = std::filesystem;

TEST_CASE("first Adam step moves each entry by lr against the gradient sign") {
  AdamConfig c;
  c.cosine = false;
  c.eps = 0.0;
  Adam opt(c, 10);
  Param p("p", {3});
  p.value = {1.0, 2.0, 3.0};
  p.grad = {0.5, -4.0, 1e-3};
  opt.step({&p});
  CHECK(p.value[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-12));
  CHECK(p.value[1] == doctest::Approx(2.0 + 1e-3).epsilon(1e-12));
  CHECK(p.value[2] == doctest::Approx(3.0 - 1e-3).epsilon(1e-12));
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("cosine schedule endpoints") {
  AdamConfig c;
  c.lr = 0.1;
  c.min_lr = 0.01;
  Adam opt(c, 4);
  Param p("p", {1});
  CHECK(opt.current_lr() == doctest::Approx(0.1));
  opt.step({&p});
  opt.step({&p});
  CHECK(opt.current_lr() == doctest::Approx(0.055));
  opt.step({&p});
  opt.step({&p});
  CHECK(opt.current_lr() == doctest::Approx(0.01));
  opt.step({&p});
  CHECK(opt.current_lr() == doctest::Approx(0.01));
}

TEST_CASE("Adam minimizes a quadratic") {
  AdamConfig c;
  c.lr = 0.05;
  Adam opt(c, 2000);
  Param p("p", {2});
  p.value = {3.0, -2.0};
  for (int i = 0; i < 2000; ++i) {
    p.grad = {2.0 * (p.value[0] - 1.0), 2.0 * (p.value[1] + 0.5)};
    opt.step({&p});
  }
  CHECK(p.value[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(p.value[1] == doctest::Approx(-0.5).epsilon(1e-3));
}

TEST_CASE("saved moments reproduce later steps exactly") {
  AdamConfig c;
  Adam a(c, 20);
  Param p("w", {2, 2});
  p.value = {1, 2, 3, 4};
  auto grad = [&](int t) {
    for (int i = 0; i < 4; ++i) p.grad[i] = std::sin(t + i) * (i + 1);
  };
  for (int t = 0; t < 5; ++t) {
    grad(t);
    a.step({&p});
  }
  const auto st = a.state({&p});
  REQUIRE(st.size() == 2);
  CHECK(st[0].name == "m.w");
  Param q = p;
  Adam b(c, 20);
  b.load_state({&q}, st, a.steps_taken());
  for (int t = 5; t < 10; ++t) {
    grad(t);
    q.grad = p.grad;
    a.step({&p});
    b.step({&q});
  }
  CHECK(p.value == q.value);
  CHECK(a.current_lr() == b.current_lr());

  Param other("x", {2, 2});
  CHECK_THROWS_AS(b.load_state({&other}, st, 5), std::invalid_argument);
  Param extra("e", {1});
  CHECK_THROWS_AS(a.step({&p, &extra}), std::invalid_argument);
}

TEST_CASE("archive round trip is bit-exact") {
  Archive a;
  a.meta = {{"kind", "test"}, {"n", 3}};
  a.tensors.push_back({"w", {2, 3}, {1.0, -0.0, 1e-310, std::numeric_limits<double>::infinity(), std::numbers::pi, -7.5}});
  a.tensors.push_back({"empty", {0}, {}});
  a.tensors.push_back({"scalar", {}, {42.0}});
  const fs::path p = fs::temp_directory_path() / "hsiucd_archive.bin";
  write_archive(p, a);
  const Archive b = read_archive(p);
  CHECK(b.meta == a.meta);
  REQUIRE(b.tensors.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(b.tensors[i].name == a.tensors[i].name);
    CHECK(b.tensors[i].shape == a.tensors[i].shape);
    REQUIRE(b.tensors[i].values.size() == a.tensors[i].values.size());
    for (std::size_t k = 0; k < a.tensors[i].values.size(); ++k) {
      CHECK(std::signbit(b.tensors[i].values[k]) == std::signbit(a.tensors[i].values[k]));
      CHECK(b.tensors[i].values[k] == a.tensors[i].values[k]);
    }
  }
  CHECK(b.contains("w"));
  CHECK_FALSE(b.contains("v"));
  CHECK_THROWS_AS(b.get("v"), std::out_of_range);

  // truncation and corruption
  const auto size = fs::file_size(p);
  fs::resize_file(p, size - 4);
  CHECK_THROWS_AS(read_archive(p), std::runtime_error);
  std::ofstream(p, std::ios::binary) << "NOTANARCHIVE";
  CHECK_THROWS_AS(read_archive(p), std::runtime_error);
  fs::remove(p);

  Archive bad;
  bad.tensors.push_back({"x", {2, 2}, {1.0}});
  CHECK_THROWS_AS(write_archive(p, bad), std::invalid_argument);
}
