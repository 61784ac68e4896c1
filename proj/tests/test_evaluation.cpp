#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "hsiucd/evaluation.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>

using namespace hsiucd;
using namespace hsiucd::testing;
namespace fs = std::filesystem;

namespace {

// Predictions built by hand: known index >= 0, or cluster id via reject().
struct Builder {
  Predictions p;
  Builder& known(int k) {
    p.known_class.push_back(k);
    p.cluster.push_back(-1);
    p.rejected.push_back(0);
    return *this;
  }
  Builder& reject(int cluster) {
    p.known_class.push_back(-1);
    p.cluster.push_back(cluster);
    p.rejected.push_back(1);
    return *this;
  }
};

Truth truth(std::vector<int> labels, int known, int unknown) { return Truth{std::move(labels), known, unknown}; }

// Three known classes in a 2-d logit space is not possible (N = known + 1),
// so the state uses logit-space prototypes, unnormalized.
TrainState small_state() {
  RunConfig c;
  c.prototypes.space = "logit";
  c.prototypes.normalize = false;
  c.prototypes.tau = 0.1;
  TrainState s;
  s.config = c;
  s.split.known_ids = {1, 2};
  s.split.unknown_ids = {3, 4};
  s.anchors = init_anchors(3, 10.0);
  s.prototypes.tau = 0.1;
  s.prototypes.vectors = Mat::Zero(4, 3);
  s.prototypes.vectors(0, 0) = 1.0;  // known 0
  s.prototypes.vectors(1, 1) = 1.0;  // known 1
  s.prototypes.vectors(2, 2) = 1.0;  // unknown-ish
  s.prototypes.vectors.row(3) << 0.0, 0.0, -1.0;
  s.groups.partition = {0, 1, 2, 3};
  s.groups.count = 4;
  s.groups.known_map = {0, 1};
  return s;
}

}  // namespace

TEST_CASE("samples on a known anchor are accepted, samples on the unknown anchor are discovered") {
  TrainState s = small_state();
  EmbeddingBatch e;
  e.logits = Mat(3, 3);
  e.logits.row(0) = s.anchors.anchors.row(1);
  e.logits.row(1) = s.anchors.anchors.row(2);
  e.logits.row(2) = s.anchors.anchors.row(0);
  e.penultimate = e.logits;
  const Predictions p = predict_from_embeddings(s, e);
  CHECK(p.known_class == std::vector<int>{1, -1, 0});
  CHECK(p.rejected == std::vector<char>{0, 1, 0});
  CHECK(p.cluster == std::vector<int>{-1, 2, -1});
  CHECK_FALSE(p.fallback);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK((p.known_class[i] >= 0) != (p.cluster[i] >= 0));
  CHECK(p.group_probs.rows() == 3);
  CHECK(p.distances(0, 1) == 0.0);
}

TEST_CASE("empty input gives empty predictions") {
  TrainState s = small_state();
  EmbeddingBatch e;
  e.logits = Mat(0, 3);
  e.penultimate = Mat(0, 3);
  const Predictions p = predict_from_embeddings(s, e);
  CHECK(p.size() == 0);
  CHECK(all_accuracy(p, truth({}, 2, 2)) == 0.0);
  CHECK_FALSE(known_accuracy(p, truth({}, 2, 2)).has_value());
  CHECK_FALSE(unknown_accuracy(p, truth({}, 2, 2)).has_value());
}

TEST_CASE("rejection without any unknown group falls back to one cluster") {
  TrainState s = small_state();
  s.groups.partition = {0, 1, 0, 1};
  s.groups.count = 2;
  EmbeddingBatch e;
  e.logits = s.anchors.anchors.bottomRows(1);
  e.penultimate = e.logits;
  const Predictions p = predict_from_embeddings(s, e);
  CHECK(p.fallback);
  CHECK(p.cluster[0] == 2);
}

TEST_CASE("known accuracy") {
  const Truth t = truth({0, 1, 0, 1}, 2, 1);
  CHECK(*known_accuracy(Builder().known(0).known(1).known(0).known(1).p, t) == 1.0);
  CHECK(*known_accuracy(Builder().reject(0).reject(0).reject(1).reject(3).p, t) == 0.0);
  CHECK(*known_accuracy(Builder().known(0).known(1).known(0).reject(5).p, t) == 0.75);
  CHECK(*known_accuracy(Builder().known(0).known(1).known(1).known(1).p, t) == 0.75);
  CHECK_FALSE(known_accuracy(Builder().reject(0).p, truth({2}, 2, 1)).has_value());
  CHECK_THROWS_AS(known_accuracy(Builder().known(0).p, t), std::invalid_argument);
}

TEST_CASE("unknown accuracy") {
  // truth: unknown classes 2 and 3 (known_count 2)
  const Truth t = truth({2, 2, 3, 3}, 2, 2);
  CHECK(*unknown_accuracy(Builder().reject(7).reject(7).reject(4).reject(4).p, t) == 1.0);
  CHECK(*unknown_accuracy(Builder().reject(4).reject(4).reject(7).reject(7).p, t) == 1.0);
  CHECK(*unknown_accuracy(Builder().reject(1).reject(1).reject(1).reject(1).p, t) == 0.5);
  CHECK(*unknown_accuracy(Builder().known(0).known(1).known(0).known(0).p, t) == 0.0);
  CHECK(*unknown_accuracy(Builder().reject(4).known(0).reject(5).reject(5).p, t) == 0.75);
  CHECK_FALSE(unknown_accuracy(Builder().known(0).p, truth({0}, 2, 2)).has_value());
}

TEST_CASE("all accuracy") {
  const Truth t = truth({0, 1, 2, 2, 3, 3}, 2, 2);
  CHECK(all_accuracy(Builder().known(0).known(1).reject(9).reject(9).reject(8).reject(8).p, t) == 1.0);
  // known perfect, unknown all accepted as known
  CHECK(all_accuracy(Builder().known(0).known(1).known(0).known(0).known(1).known(1).p, t) ==
        doctest::Approx(2.0 / 6.0));
  // a known-class sample rejected into a cluster never counts
  CHECK(all_accuracy(Builder().reject(9).known(1).reject(9).reject(9).reject(8).reject(8).p, t) ==
        doctest::Approx(5.0 / 6.0));
  // no unknown classes: equals known accuracy
  const Truth k = truth({0, 1, 1, 0}, 2, 0);
  const Predictions kp = Builder().known(0).known(1).known(0).reject(3).p;
  CHECK(all_accuracy(kp, k) == *known_accuracy(kp, k));
}

TEST_CASE("unknown accuracy is invariant under relabeling clusters and classes") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> cls(0, 3), clu(0, 4), coin(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> labels;
    Builder b;
    for (int i = 0; i < 40; ++i) {
      labels.push_back(2 + cls(rng));
      if (coin(rng) == 0) b.known(0);
      else b.reject(clu(rng));
    }
    const Truth t = truth(labels, 2, 4);
    const double base = *unknown_accuracy(b.p, t);
    std::vector<int> cperm(5), uperm(4);
    std::iota(cperm.begin(), cperm.end(), 10);
    std::iota(uperm.begin(), uperm.end(), 0);
    std::shuffle(cperm.begin(), cperm.end(), rng);
    std::shuffle(uperm.begin(), uperm.end(), rng);
    Predictions q = b.p;
    for (int& c : q.cluster) {
      if (c >= 0) c = cperm[c];
    }
    Truth u = t;
    for (int& l : u.label) l = 2 + uperm[l - 2];
    CHECK(*unknown_accuracy(q, u) == base);
  }
}

TEST_CASE("cluster matching equals exhaustive search on random contingency tables") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(2, 6), count(0, 30);
  for (int trial = 0; trial < 1000; ++trial) {
    Mat table(size(rng), size(rng));
    for (int i = 0; i < table.size(); ++i) table.data()[i] = count(rng);
    const std::vector<int> m = match_clusters(table);
    std::set<int> used;
    double got = 0.0;
    for (std::size_t r = 0; r < m.size(); ++r) {
      if (m[r] < 0) continue;
      CHECK(used.insert(m[r]).second);
      got += table(static_cast<int>(r), m[r]);
    }
    CHECK(-got == oracle::min_assignment_cost(-table));
  }
}

TEST_CASE("report counts are consistent") {
  TrainState s = small_state();
  const Truth t = truth({0, 0, 1, 1, 2, 3, 3}, 2, 2);
  const Predictions p = Builder().known(0).reject(2).known(0).known(1).reject(2).reject(3).known(1).p;
  const EvalReport r = evaluate(s, p, t);
  CHECK(r.known_samples == 4);
  CHECK(r.unknown_samples == 3);
  CHECK(r.known_confusion.sum() == 4.0);
  CHECK(r.known_confusion(0, 2) == 1.0);  // rejected column
  CHECK(r.known_rejected == 0.25);
  CHECK(r.unknown_rejected == doctest::Approx(2.0 / 3.0));
  CHECK(*r.known_acc == 0.5);
  CHECK(*r.unknown_acc == doctest::Approx(2.0 / 3.0));
  CHECK(r.all_acc == doctest::Approx(4.0 / 7.0));
  CHECK(r.predicted_class_count == 4);
  CHECK(r.true_class_count == 4);
  for (int c = 0; c < 2; ++c) {
    const double correct = r.known_confusion(c, c);
    const double wrong = r.known_confusion.row(c).sum() - correct - r.known_confusion(c, 2);
    CHECK(correct + wrong + r.known_confusion(c, 2) == r.known_confusion.row(c).sum());
  }
  const auto j = r.to_json();
  CHECK(j.contains("known_acc"));
  CHECK(j.contains("unknown_acc"));
  CHECK(j.contains("all_acc"));
}

TEST_CASE("truth labels from class ids") {
  ClassSplit split{{3, 1}, {2}};
  std::vector<Patch> patches(3);
  patches[0].label = 1;
  patches[1].label = 2;
  patches[2].label = 3;
  const Truth t = make_truth(split, patches);
  CHECK(t.label == std::vector<int>{1, 2, 0});
  patches[0].label = 9;
  CHECK_THROWS_AS(make_truth(split, patches), std::invalid_argument);
}

TEST_CASE("palette colors are distinct and never black") {
  std::set<std::array<std::uint8_t, 3>> seen{{0, 0, 0}};
  for (int c = 0; c < 40; ++c) CHECK(seen.insert(class_color(c)).second);
  for (int g = 0; g < 64; ++g) CHECK(seen.insert(cluster_color(g)).second);
}

TEST_CASE("rendered map has the cube size, black background and distinct cluster colors") {
  HsiCube cube = ramp_cube(6, 7, 3);
  std::fill(cube.labels.begin(), cube.labels.end(), 0);
  RunConfig c;
  c.extractor.patch_size = 7;
  c.extractor.reduced_bands = 32;
  c.extractor.block1_channels = 2;
  c.extractor.block2_channels = 2;
  c.extractor.final_channels = 2;
  c.prototypes.count = 10;
  c.pretrain.epochs = 0;
  cube.class_names = {"a", "b", "c", "d"};
  TrainState s = init_state(c, ClassSplit{{1, 2}, {3, 4}}, 3, "t", 4);
  IndexedImage empty = render_map(s, cube);
  CHECK(empty.width == 7);
  CHECK(empty.height == 6);
  CHECK(std::all_of(empty.index.begin(), empty.index.end(), [](auto v) { return v == 0; }));
  CHECK(empty.palette[0] == std::array<std::uint8_t, 3>{0, 0, 0});

  // every labeled pixel lands on a non-background entry
  cube.labels[3] = 1;
  cube.labels[10] = 3;
  IndexedImage img = render_map(s, cube);
  CHECK(img.index[3] != 0);
  CHECK(img.index[10] != 0);
  CHECK(std::count(img.index.begin(), img.index.end(), 0) == 6 * 7 - 2);
  const int nk = 2;
  CHECK(img.palette[1 + nk] != img.palette[2 + nk]);
  for (int k = 1; k <= nk; ++k) CHECK(img.palette[k] != img.palette[1 + nk]);

  const fs::path path = fs::temp_directory_path() / "hsiucd_map.png";
  write_png(img, path);
  const IndexedImage back = read_png(path);
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.index == img.index);
  CHECK(back.palette == img.palette);
  fs::remove(path);
}

TEST_CASE("embedding export round trip") {
  EmbeddingTable t;
  std::mt19937_64 rng(1);
  t.penultimate = random_mat(5, 160, rng);
  t.logits = random_mat(5, 6, rng);
  t.labels = {1, 2, 3, 4, 5};
  const fs::path path = fs::temp_directory_path() / "hsiucd_emb.bin";
  write_embeddings(t, path);
  const std::uintmax_t header = 8 + 4 + 8 + 4 + 4;
  CHECK(fs::file_size(path) == header + 5 * (160 + 6 + 1) * sizeof(double));
  const EmbeddingTable b = read_embeddings(path);
  CHECK(b.penultimate == t.penultimate);
  CHECK(b.logits == t.logits);
  CHECK(b.labels == t.labels);

  EmbeddingTable empty;
  empty.penultimate = Mat(0, 160);
  empty.logits = Mat(0, 6);
  write_embeddings(empty, path);
  CHECK(fs::file_size(path) == header);
  const EmbeddingTable e = read_embeddings(path);
  CHECK(e.labels.empty());
  CHECK(e.penultimate.cols() == 160);
  fs::resize_file(path, header - 3);
  CHECK_THROWS_AS(read_embeddings(path), std::runtime_error);
  fs::remove(path);
}
