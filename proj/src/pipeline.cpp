#include "hsiucd/pipeline.hpp"

#include "hsiucd/checkpoint.hpp"
#include "hsiucd/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>

namespace hsiucd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitStream = 0x73706c69ULL;
constexpr std::uint64_t kPoolStream = 0x706f6f6cULL;
constexpr std::uint64_t kEpisodeStream = 0x65700000ULL;
constexpr std::uint64_t kAugmentStream = 0x61750000ULL;

json eval_record(long episode, const std::string& split, const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"type", "eval"},
          {"episode", episode},
          {"split", split},
          {"known_acc", opt(r.known_acc)},
          {"unknown_acc", opt(r.unknown_acc)},
          {"all_acc", r.all_acc},
          {"predicted_class_count", r.predicted_class_count},
          {"known_rejected", r.known_rejected},
          {"unknown_rejected", r.unknown_rejected}};
}

class MetricsLog {
public:
  MetricsLog(const fs::path& path, bool append) : path_(path) {
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot write " + path.string());
  }
  void write(const json& record) {
    out_ << record.dump() << "\n";
    out_.flush();
    if (!out_) throw std::runtime_error("write failed for " + path_.string());
  }
  std::uintmax_t offset() const { return fs::file_size(path_); }

private:
  fs::path path_;
  std::ofstream out_;
};

// The keys that may differ between a checkpoint and the config resuming it.
json comparable(json j) {
  j.erase("output");
  j.erase("data");
  return j;
}

}  // namespace

ClassSplit resolve_split(const RunConfig& config, const HsiCube& cube) {
  ClassSplit s;
  if (config.split.known.empty()) {
    if (!config.split.unknown.empty()) throw std::invalid_argument("split.unknown given without split.known");
    s = default_split(cube);
  } else {
    s.known_ids = config.split.known;
    s.unknown_ids = config.split.unknown;
    if (s.unknown_ids.empty()) {
      for (int c = 1; c <= cube.class_count(); ++c) {
        if (s.known_index(c) < 0 && !class_pixels(cube, c).empty()) s.unknown_ids.push_back(c);
      }
    }
  }
  s.validate(cube.class_count());
  return s;
}

PreparedData prepare_data(const RunConfig& config) {
  if (config.data.empty()) throw std::invalid_argument("no dataset given (data)");
  PreparedData d;
  d.cube = load_cube(config.data, LoadOptions{config.impute_nan});
  if (config.normalize_bands) d.cube = band_normalize(d.cube);
  d.split = resolve_split(config, d.cube);
  return d;
}

PixelSplit split_pixels(const HsiCube& cube, const ClassSplit& split, const RunConfig& config) {
  PixelSplit out;
  const int k = config.k;
  const int d = config.queries();
  auto take = [&](int id, int need) {
    Coords px = class_pixels(cube, id);
    std::mt19937_64 rng(mix_seed(config.seed, kSplitStream + static_cast<std::uint64_t>(id)));
    std::shuffle(px.begin(), px.end(), rng);
    const int n = static_cast<int>(px.size());
    const int reserve = std::min(n, need);
    const int spare = n - reserve;
    const int n_test = std::min(spare, static_cast<int>(std::lround(n * config.split.test_fraction)));
    const int n_val = std::min(spare - n_test, static_cast<int>(std::lround(n * config.split.val_fraction)));
    out.test.insert(out.test.end(), px.begin(), px.begin() + n_test);
    out.val.insert(out.val.end(), px.begin() + n_test, px.begin() + n_test + n_val);
    out.train[id].assign(px.begin() + n_test + n_val, px.end());
  };
  for (int id : split.known_ids) take(id, k + d);
  for (int id : split.unknown_ids) take(id, d);
  std::sort(out.test.begin(), out.test.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

EmbeddingBatch embed_pixels(TrainState& state, const HsiCube& cube, const Coords& coords, int batch_size) {
  auto& net = state.extractor;
  const int p = state.config.extractor.patch_size;
  EmbeddingBatch all;
  all.penultimate.resize(static_cast<int>(coords.size()), net.penultimate_dim());
  all.logits.resize(static_cast<int>(coords.size()), net.logit_dim());
  std::vector<Patch> chunk;
  for (std::size_t start = 0; start < coords.size(); start += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, coords.size() - start);
    chunk.clear();
    for (std::size_t i = start; i < start + n; ++i) chunk.push_back(extract_patch(cube, coords[i].first, coords[i].second, p));
    auto out = net.forward(chunk, false);
    all.penultimate.middleRows(static_cast<int>(start), static_cast<int>(n)) = out.penultimate;
    all.logits.middleRows(static_cast<int>(start), static_cast<int>(n)) = out.logits;
  }
  return all;
}

Truth truth_for(const HsiCube& cube, const ClassSplit& split, const Coords& coords) {
  std::vector<Patch> stubs(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) stubs[i].label = cube.label(coords[i].first, coords[i].second);
  return make_truth(split, stubs);
}

EvalReport evaluate_pixels(TrainState& state, const HsiCube& cube, const Coords& coords) {
  const Predictions preds = predict_from_embeddings(state, embed_pixels(state, cube, coords, state.config.eval_batch));
  return evaluate(state, preds, truth_for(cube, state.split, coords));
}

FitResult fit(const RunConfig& config, const FitOptions& options) {
  config.validate();
  PreparedData data = prepare_data(config);
  const HsiCube& cube = data.cube;
  const fs::path out_dir = config.output;
  const fs::path log_path = out_dir / "metrics.jsonl";
  const fs::path latest = out_dir / "checkpoint";
  const fs::path best_dir = out_dir / "best";
  fs::create_directories(out_dir);

  FitResult result;
  TrainState state = init_state(config, data.split, cube.bands, cube.name, cube.class_count());
  const PixelSplit pixels = split_pixels(cube, data.split, state.config);
  double best_val = -1.0;
  std::unique_ptr<MetricsLog> log;
  auto say = [&](const std::string& line) {
    if (options.progress) *options.progress << line << std::endl;
  };

  const bool resuming = options.resume && fs::exists(latest / "manifest.json");
  if (resuming) {
    LoadedCheckpoint ck = load_checkpoint(latest);
    if (comparable(to_json(ck.state.config)) != comparable(to_json(state.config))) {
      throw std::invalid_argument("resume: config differs from the checkpoint in " + latest.string());
    }
    state = std::move(ck.state);
    best_val = ck.manifest.value("best_val_all_acc", -1.0);
    const auto offset = ck.manifest.at("log_offset").get<std::uintmax_t>();
    if (!fs::exists(log_path) || fs::file_size(log_path) < offset) {
      throw std::runtime_error("resume: metrics log is shorter than the checkpoint expects");
    }
    fs::resize_file(log_path, offset);
    std::ifstream in(log_path);
    for (std::string line; std::getline(in, line);) {
      json r = json::parse(line);
      if (r.value("type", "") == "eval") result.history.push_back(r);
    }
    log = std::make_unique<MetricsLog>(log_path, true);
    say("resumed at episode " + std::to_string(state.episode));
  } else {
    save_config(state.config, out_dir / "config.json");
    log = std::make_unique<MetricsLog>(log_path, false);
  }

  auto checkpoint = [&](const fs::path& dir) {
    save_checkpoint(state, dir, {{"best_val_all_acc", best_val}, {"log_offset", log->offset()}});
  };
  auto snapshot = [&]() {
    const EvalReport r = evaluate_pixels(state, cube, pixels.val);
    json rec = eval_record(state.episode, "val", r);
    log->write(rec);
    result.history.push_back(rec);
    say("episode " + std::to_string(state.episode) + " val " + rec.dump());
    if (r.all_acc > best_val) {
      best_val = r.all_acc;
      checkpoint(best_dir);
    }
  };

  if (!resuming) {
    const auto& pc = state.config.pretrain;
    const auto pool = build_pretrain_pool(cube, pixels.train, data.split, state.config.k, pc.copies, pc.sigma,
                                          mix_seed(state.config.seed, kPoolStream), state.config.extractor.patch_size);
    pretrain(state, pool, pc.epochs, [&](const PretrainEpoch& e) {
      log->write({{"type", "pretrain"}, {"epoch", e.epoch}, {"osc", e.osc}, {"ca", e.ca}, {"class", e.class_loss}});
      say("pretrain epoch " + std::to_string(e.epoch) + " class loss " + std::to_string(e.class_loss));
    });
    snapshot();
    checkpoint(latest);
  }
  if (options.pretrain_only) {
    result.state = std::move(state);
    return result;
  }

  const int k = state.config.k;
  const int d = state.config.queries();
  const int p = state.config.extractor.patch_size;
  while (state.episode < state.config.episodes) {
    const auto e = static_cast<std::uint64_t>(state.episode);
    const Episode ep = sample_episode(cube, pixels.train, data.split, k, d, mix_seed(state.config.seed, kEpisodeStream + e), p);
    const EpisodeStats st = train_episode(state, ep, mix_seed(state.config.seed, kAugmentStream + e));
    log->write({{"type", "episode"},
                {"episode", state.episode},
                {"losses", st.losses.to_json()},
                {"support", st.support},
                {"queries", st.queries},
                {"groups", st.groups},
                {"classes", st.classes},
                {"kcd_skipped", st.kcd_skipped}});
    if (options.on_episode) options.on_episode(state, st);
    if (state.episode % state.config.eval_every == 0) snapshot();
    if (state.config.checkpoint_every > 0 && state.episode % state.config.checkpoint_every == 0) checkpoint(latest);
  }
  checkpoint(latest);

  const EvalReport test = evaluate_pixels(state, cube, pixels.test);
  json report = test.to_json();
  report["split"] = "test";
  report["episode"] = state.episode;
  report["config"] = to_json(state.config);
  std::ofstream(out_dir / "report.json") << report.dump(2) << "\n";
  say("test " + eval_record(state.episode, "test", test).dump());
  result.test_report = test;
  result.state = std::move(state);
  return result;
}

}  // namespace hsiucd
