#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "hsiucd/checkpoint.hpp"
#include "hsiucd/pipeline.hpp"
#include "hsiucd/random.hpp"
#include "hsiucd/training.hpp"
#include "train_fixture.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

using namespace hsiucd;
using namespace hsiucd::testing;
namespace fs = std::filesystem;

namespace {

ClassSplit small_split() { return ClassSplit{{1, 2, 3}, {4, 5}}; }

TrainState fresh(const RunConfig& c, const HsiCube& cube) {
  return init_state(c, small_split(), cube.bands, cube.name, cube.class_count());
}

Episode episode_for(const HsiCube& cube, const RunConfig& c, std::uint64_t seed) {
  return sample_episode(cube, small_split(), c.k, c.queries(), seed, c.extractor.patch_size);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> flat_params(TrainState& s) {
  std::vector<double> out;
  for (Param* p : s.extractor.parameters()) out.insert(out.end(), p->value.begin(), p->value.end());
  out.insert(out.end(), s.prototypes.vectors.data(), s.prototypes.vectors.data() + s.prototypes.vectors.size());
  return out;
}

}  // namespace

TEST_CASE("init resolves derived sizes and rejects too few prototypes") {
  const HsiCube cube = small_scene();
  RunConfig c = small_config();
  TrainState s = fresh(c, cube);
  CHECK(s.config.extractor.input_bands == 6);
  CHECK(s.config.extractor.logit_dim == 4);
  CHECK(s.anchors.dim() == 4);
  CHECK(s.prototypes.count() == 10);
  CHECK(s.prototypes.dim() == s.extractor.penultimate_dim());
  CHECK(s.groups.count == 10);
  c.prototypes.count = 7;  // below 1.5 x 5 classes
  CHECK_THROWS_AS(fresh(c, cube), std::invalid_argument);
  c.prototypes.count = 0;
  CHECK(fresh(c, cube).prototypes.count() == 13);
  c.extractor.input_bands = 5;
  CHECK_THROWS_AS(fresh(c, cube), std::invalid_argument);
}

TEST_CASE("pretraining with zero epochs leaves the state unchanged") {
  const HsiCube cube = small_scene();
  TrainState s = fresh(small_config(), cube);
  const auto before = flat_params(s);
  const Mat anchors = s.anchors.anchors;
  std::vector<Patch> pool{extract_patch(cube, 5, 5, 7)};
  CHECK(pretrain(s, pool, 0).empty());
  CHECK(flat_params(s) == before);
  CHECK(s.anchors.anchors == anchors);
  CHECK(s.pretrain_epochs == 0);
}

TEST_CASE("pretraining lowers the open-set loss on a separable pool and is deterministic") {
  const HsiCube cube = small_scene();
  RunConfig c = small_config();
  c.pretrain.copies = 4;
  c.pretrain.optimizer.lr = 3e-3;
  const PixelPool pool = index_pixels(cube);
  const auto patches = build_pretrain_pool(cube, pool, small_split(), 4, c.pretrain.copies, 0.01, 5, 7);
  TrainState a = fresh(c, cube), b = fresh(c, cube);
  const auto ha = pretrain(a, patches, 8);
  const auto hb = pretrain(b, patches, 8);
  REQUIRE(ha.size() == 8);
  for (std::size_t i = 0; i < ha.size(); ++i) {
    CHECK(ha[i].class_loss == hb[i].class_loss);
    CHECK(ha[i].class_loss == doctest::Approx(ha[i].osc + ha[i].ca).epsilon(1e-12));
  }
  const double early = (ha[0].class_loss + ha[1].class_loss + ha[2].class_loss) / 3.0;
  const double late = (ha[5].class_loss + ha[6].class_loss + ha[7].class_loss) / 3.0;
  CHECK(late < early);
  CHECK(a.pretrain_epochs == 8);
  // the per-epoch anchor update moves known anchors and never the unknown one
  RunConfig u = c;
  u.pretrain.anchor_update = "epoch";
  TrainState m = fresh(u, cube);
  pretrain(m, patches, 1);
  CHECK(m.anchors.anchors.row(0) != init_anchors(4, 10.0).anchors.row(0));
  CHECK(m.anchors.anchors.row(3) == init_anchors(4, 10.0).anchors.row(3));
  CHECK(m.anchors.anchors.row(0).norm() == doctest::Approx(10.0));
}

TEST_CASE("episode losses decompose exactly and every tensor receives gradient") {
  const HsiCube cube = small_scene();
  RunConfig c = small_config();
  TrainState s = fresh(c, cube);
  auto params = s.extractor.parameters();
  std::vector<char> touched(params.size(), 0);
  const Mat protos0 = s.prototypes.vectors;
  for (int e = 0; e < 5; ++e) {
    const Episode ep = episode_for(cube, c, 100 + e);
    const EpisodeStats st = train_episode(s, ep, 200 + e);
    const LossBreakdown& L = st.losses;
    CHECK(std::abs(L.class_loss - (L.osc + L.ca)) <= 1e-9);
    CHECK(std::abs(L.disc - (L.ps + L.pgs + L.reg + L.kcd)) <= 1e-9);
    CHECK(std::abs(L.total - (L.class_loss + L.disc)) <= 1e-9);
    CHECK(L.objective == doctest::Approx(L.total).epsilon(1e-12));
    CHECK(st.support == 3 * c.k);
    CHECK(st.queries == 5 * c.queries());
    CHECK(st.regrouped);
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (double g : params[i]->grad) {
        if (g != 0.0) touched[i] = 1;
      }
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    CAPTURE(params[i]->name);
    CHECK(touched[i]);
  }
  CHECK(s.prototypes.vectors != protos0);
  CHECK(s.episode == 5);
  s.groups.validate(s.prototypes.count());
}

TEST_CASE("with discovery losses weighted to zero the step equals an anchor-only step") {
  const HsiCube cube = small_scene();
  RunConfig c = small_config();
  c.weights.ps = c.weights.pgs = c.weights.reg = c.weights.kcd = 0.0;
  TrainState a = fresh(c, cube);
  TrainState b = fresh(c, cube);
  const Episode ep = episode_for(cube, c, 7);
  const std::uint64_t seed = 99;
  train_episode(a, ep, seed);

  // independent anchor-only step on b with the same views
  std::mt19937_64 rng(seed);
  std::vector<Patch> views;
  const auto all = ep.all();
  for (const Patch* p : all) views.push_back(augment_weak(*p, c.augment, rng));
  for (const Patch* p : all) views.push_back(augment_strong(*p, c.augment, rng));
  std::vector<int> y;
  for (int rep = 0; rep < 2; ++rep) {
    for (const Patch* p : all) {
      const int k = b.split.known_index(p->label);
      y.push_back(k >= 0 ? k : 3);
    }
  }
  b.extractor.zero_grad();
  auto out = b.extractor.forward(views, true);
  const Mat dist = distances(out.logits, b.anchors);
  const Mat g = loss_osc(dist, y).grad + loss_ca(dist, y, c.gamma).grad;
  b.extractor.backward(Mat(), distances_backward(out.logits, b.anchors, dist, g));
  Param proto("prototypes", {b.prototypes.count(), b.prototypes.dim()});
  std::copy(b.prototypes.vectors.data(), b.prototypes.vectors.data() + proto.size(), proto.value.begin());
  auto params = b.extractor.parameters();
  params.push_back(&proto);
  b.optimizer.step(params);

  const auto pa = a.extractor.parameters();
  double worst = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pa[i]->size(); ++j) worst = std::max(worst, std::abs(pa[i]->value[j] - params[i]->value[j]));
  }
  CHECK(worst <= 1e-12);
  CHECK((a.prototypes.vectors - b.prototypes.vectors).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("episode errors") {
  const HsiCube cube = small_scene();
  RunConfig c = small_config();
  TrainState s = fresh(c, cube);
  Episode ep = episode_for(cube, c, 1);
  Episode no_query = ep;
  no_query.query_known.clear();
  no_query.query_unknown.clear();
  CHECK_THROWS_AS(train_episode(s, no_query, 1), std::invalid_argument);
  Episode no_support = ep;
  no_support.support.clear();
  CHECK_THROWS_AS(train_episode(s, no_support, 1), std::invalid_argument);
}

TEST_CASE("checkpoint round trip restores identical outputs and training continues identically") {
  const HsiCube cube = small_scene();
  RunConfig c = small_config();
  TrainState s = fresh(c, cube);
  for (int e = 0; e < 2; ++e) train_episode(s, episode_for(cube, c, e), 50 + e);
  const fs::path dir = scratch_dir("ckpt");
  save_checkpoint(s, dir, {{"note", "x"}});
  for (const char* f : {"extractor.bin", "anchors.bin", "prototypes.bin", "partition.json", "optimizer.bin", "manifest.json"}) {
    CHECK(fs::exists(dir / f));
  }
  LoadedCheckpoint ck = load_checkpoint(dir);
  TrainState& t = ck.state;
  CHECK(ck.manifest["note"] == "x");
  CHECK(t.episode == 2);
  CHECK(t.anchors.anchors == s.anchors.anchors);
  CHECK(t.prototypes.vectors == s.prototypes.vectors);
  CHECK(t.groups.partition == s.groups.partition);
  CHECK(t.groups.known_map == s.groups.known_map);
  CHECK(t.groups.supported == s.groups.supported);

  std::vector<Patch> probe;
  for (int i = 0; i < 6; ++i) probe.push_back(extract_patch(cube, 3 + 2 * i, 4 + i, 7));
  auto o1 = s.extractor.forward(probe, false);
  auto o2 = t.extractor.forward(probe, false);
  CHECK(o1.penultimate == o2.penultimate);
  CHECK(o1.logits == o2.logits);

  const Episode next = episode_for(cube, c, 77);
  const auto l1 = train_episode(s, next, 3).losses;
  const auto l2 = train_episode(t, next, 3).losses;
  CHECK(l1.objective == l2.objective);
  CHECK(flat_params(s) == flat_params(t));

  fs::remove(dir / "anchors.bin");
  CHECK_THROWS_AS(load_checkpoint(dir), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), std::runtime_error);
}

TEST_CASE("pixel split is disjoint and keeps enough training pixels") {
  const HsiCube cube = small_scene();
  RunConfig c = small_config();
  const PixelSplit ps = split_pixels(cube, small_split(), c);
  std::set<std::pair<int, int>> seen;
  std::size_t total = 0;
  for (const auto& [id, px] : ps.train) {
    CHECK(static_cast<int>(px.size()) >= (id <= 3 ? c.k + c.queries() : c.queries()));
    for (auto p : px) CHECK(seen.insert(p).second);
    total += px.size();
  }
  for (auto p : ps.val) CHECK(seen.insert(p).second);
  for (auto p : ps.test) CHECK(seen.insert(p).second);
  total += ps.val.size() + ps.test.size();
  CHECK(total == cube.labeled_count());
  CHECK(ps.test.size() > ps.val.size());
}

TEST_CASE("fit writes the run directory, logs every episode and resumes bit-exactly") {
  const HsiCube cube = small_scene();
  const fs::path data = scratch_dir("fit_data");
  save_cube(cube, data);
  RunConfig c = small_config();
  c.data = data.string();
  c.normalize_bands = false;
  c.split.known = {1, 2, 3};
  c.checkpoint_every = 3;

  c.output = scratch_dir("fit_a").string();
  const FitResult a = fit(c);
  CHECK(a.history.size() == static_cast<std::size_t>(c.episodes / c.eval_every + 1));
  for (const char* f : {"config.json", "metrics.jsonl", "report.json", "checkpoint/manifest.json", "best/manifest.json"}) {
    CHECK(fs::exists(fs::path(c.output) / f));
  }
  REQUIRE(a.test_report.has_value());
  CHECK(a.test_report->known_acc.has_value());
  int episodes = 0;
  std::ifstream log(fs::path(c.output) / "metrics.jsonl");
  for (std::string line; std::getline(log, line);) {
    const auto r = nlohmann::json::parse(line);
    if (r["type"] != "episode") continue;
    ++episodes;
    CHECK(r["support"] == 3 * c.k);
    const auto& L = r["losses"];
    CHECK(std::abs(L["total"].get<double>() - L["class"].get<double>() - L["disc"].get<double>()) <= 1e-9);
  }
  CHECK(episodes == c.episodes);
  const RunConfig saved = load_config(fs::path(c.output) / "config.json");
  CHECK(saved.prototypes.count == 10);
  CHECK(saved.extractor.input_bands == 6);

  // an identical second run produces the same log
  RunConfig c2 = c;
  c2.output = scratch_dir("fit_b").string();
  fit(c2);
  CHECK(slurp(fs::path(c.output) / "metrics.jsonl") == slurp(fs::path(c2.output) / "metrics.jsonl"));

  // interrupt after episode 5, resume from the episode-3 checkpoint
  RunConfig c3 = c;
  c3.output = scratch_dir("fit_c").string();
  FitOptions crash;
  crash.on_episode = [](const TrainState& s, const EpisodeStats&) {
    if (s.episode == 5) throw std::runtime_error("simulated interruption");
  };
  CHECK_THROWS_AS(fit(c3, crash), std::runtime_error);
  FitOptions resume;
  resume.resume = true;
  const FitResult r = fit(c3, resume);
  CHECK(r.history.size() == a.history.size());
  CHECK(slurp(fs::path(c.output) / "metrics.jsonl") == slurp(fs::path(c3.output) / "metrics.jsonl"));
  CHECK(slurp(fs::path(c.output) / "report.json").size() > 0);
  CHECK(r.test_report->all_acc == a.test_report->all_acc);

  // resuming with a different model config is refused
  RunConfig c4 = c3;
  c4.phi = 5.0;
  CHECK_THROWS_AS(fit(c4, resume), std::invalid_argument);
}
