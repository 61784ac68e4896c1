#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "hsiucd/assignment.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <random>
#include <set>

using namespace hsiucd;
using namespace hsiucd::testing;

TEST_CASE("small fixed instances") {
  Mat c(2, 2);
  c << 1, 2, 2, 1;
  CHECK(solve_assignment(c) == std::vector<int>{0, 1});
  c << 5, 1, 1, 5;
  CHECK(solve_assignment(c) == std::vector<int>{1, 0});
  CHECK(solve_assignment(Mat(0, 3)).empty());
  CHECK(solve_assignment(Mat(2, 0)) == std::vector<int>{-1, -1});
}

TEST_CASE("matches exhaustive search on random rectangular matrices") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> dim(1, 6);
  for (int trial = 0; trial < 300; ++trial) {
    const int r = dim(rng), c = dim(rng);
    Mat cost = random_mat(r, c, rng);
    if (trial % 3 == 0) cost = cost.array().round().matrix();  // many ties
    const std::vector<int> a = solve_assignment(cost);
    REQUIRE(a.size() == static_cast<std::size_t>(r));
    std::set<int> used;
    int matched = 0;
    for (int col : a) {
      if (col < 0) continue;
      CHECK(used.insert(col).second);
      ++matched;
    }
    CHECK(matched == std::min(r, c));
    CHECK(assignment_cost(cost, a) == doctest::Approx(oracle::min_assignment_cost(cost)).epsilon(1e-12));
  }
}

TEST_CASE("non-finite costs are rejected") {
  Mat c = Mat::Zero(2, 2);
  c(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(solve_assignment(c), std::invalid_argument);
}
