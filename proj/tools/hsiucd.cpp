#include "hsiucd/checkpoint.hpp"
#include "hsiucd/config.hpp"
#include "hsiucd/convert.hpp"
#include "hsiucd/evaluation.hpp"
#include "hsiucd/pipeline.hpp"
#include "hsiucd/synthetic.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hsiucd;

namespace {

// Flags shared by pretrain and train; only the ones given end up in the overrides.
struct RunFlags {
  std::string config, data, out;
  std::optional<int> k, d, episodes, eval_every, checkpoint_every, prototypes, pretrain_epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::vector<int> known, unknown;
  bool resume = false;
  bool quiet = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "JSON run config; flags override its values")->check(CLI::ExistingFile);
  cmd->add_option("--data", f.data, "dataset directory");
  cmd->add_option("--out", f.out, "run directory");
  cmd->add_option("--k", f.k, "support samples per known class");
  cmd->add_option("--d", f.d, "query samples per class (0: 3k)");
  cmd->add_option("--episodes", f.episodes, "episodic training steps");
  cmd->add_option("--eval-every", f.eval_every, "episodes between validation snapshots");
  cmd->add_option("--checkpoint-every", f.checkpoint_every, "episodes between checkpoints (0: end only)");
  cmd->add_option("--prototypes", f.prototypes, "prototype count (0: dataset default)");
  cmd->add_option("--pretrain-epochs", f.pretrain_epochs, "pre-training epochs");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--lr", f.lr, "episodic learning rate");
  cmd->add_option("--known", f.known, "known class ids (1-based)")->delimiter(',');
  cmd->add_option("--unknown", f.unknown, "unknown class ids (1-based)")->delimiter(',');
  cmd->add_flag("--resume", f.resume, "continue from <out>/checkpoint if present");
  cmd->add_flag("--quiet", f.quiet, "no progress output");
}

RunConfig resolve_run_config(const RunFlags& f) {
  RunConfig base = f.config.empty() ? RunConfig{} : load_config(f.config);
  json o = json::object();
  if (!f.data.empty()) o["data"] = f.data;
  if (!f.out.empty()) o["output"] = f.out;
  if (f.k) o["k"] = *f.k;
  if (f.d) o["d"] = *f.d;
  if (f.episodes) o["episodes"] = *f.episodes;
  if (f.eval_every) o["eval_every"] = *f.eval_every;
  if (f.checkpoint_every) o["checkpoint_every"] = *f.checkpoint_every;
  if (f.prototypes) o["prototypes"]["count"] = *f.prototypes;
  if (f.pretrain_epochs) o["pretrain"]["epochs"] = *f.pretrain_epochs;
  if (f.seed) o["seed"] = *f.seed;
  if (f.lr) o["optimizer"]["lr"] = *f.lr;
  if (!f.known.empty()) o["split"]["known"] = f.known;
  if (!f.unknown.empty()) o["split"]["unknown"] = f.unknown;
  RunConfig c = merge_config(base, o);
  if (c.data.empty()) throw std::invalid_argument("--data is required (or set \"data\" in the --config file)");
  return c;
}

int run_fit(const RunFlags& f, bool pretrain_only) {
  const RunConfig config = resolve_run_config(f);
  FitOptions opts;
  opts.resume = f.resume;
  opts.pretrain_only = pretrain_only;
  opts.progress = f.quiet ? nullptr : &std::cerr;
  FitResult r = fit(config, opts);
  if (r.test_report) std::cout << r.test_report->to_json().dump(2) << "\n";
  std::cout << "run directory: " << config.output << "\n";
  return 0;
}

struct Loaded {
  TrainState state;
  PreparedData data;
};

Loaded load_for_inference(const std::string& checkpoint, const std::string& data) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  RunConfig config = ck.state.config;
  if (!data.empty()) config.data = data;
  Loaded l{std::move(ck.state), prepare_data(config)};
  if (l.data.cube.bands != l.state.config.extractor.input_bands) {
    throw std::invalid_argument("dataset has " + std::to_string(l.data.cube.bands) + " bands, checkpoint expects " +
                                std::to_string(l.state.config.extractor.input_bands));
  }
  l.data.split = l.state.split;
  return l;
}

Coords select_pixels(const Loaded& l, const std::string& which) {
  if (which == "all") {
    Coords all;
    for (const auto& [id, px] : index_pixels(l.data.cube)) all.insert(all.end(), px.begin(), px.end());
    std::sort(all.begin(), all.end());
    return all;
  }
  const PixelSplit ps = split_pixels(l.data.cube, l.data.split, l.state.config);
  if (which == "test") return ps.test;
  if (which == "val") return ps.val;
  throw std::invalid_argument("--split must be test, val or all");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-set few-shot hyperspectral classification with unknown class discovery"};
  app.require_subcommand(1);

  // convert
  ConvertOptions conv;
  std::string conv_out, conv_names;
  std::optional<int> conv_known;
  auto* convert = app.add_subcommand("convert", "convert .mat / .npy arrays to the dataset container");
  convert->add_option("--data", conv.data, "data array file (.mat or .npy)")->required()->check(CLI::ExistingFile);
  convert->add_option("--labels", conv.labels, "label map file (default: the data file)")->check(CLI::ExistingFile);
  convert->add_option("--data-key", conv.data_key, "MAT variable holding the cube");
  convert->add_option("--labels-key", conv.labels_key, "MAT variable holding the label map");
  convert->add_option("--name", conv.name, "dataset name (default: data file stem)");
  convert->add_option("--known-count", conv_known, "default number of known classes");
  convert->add_option("--class-names", conv_names, "comma-separated class names");
  convert->add_option("--band-axis", conv.band_axis, "axis of the bands in the data array")->check(CLI::Range(0, 2));
  convert->add_option("--out", conv_out, "output dataset directory")->required();

  // synth
  SyntheticSpec spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_option("--seed", spec.seed, "generator seed");
  synth->add_option("--height", spec.height);
  synth->add_option("--width", spec.width);
  synth->add_option("--bands", spec.bands);
  synth->add_option("--classes", spec.class_count);
  synth->add_option("--known", spec.known_count, "default known-class count");
  synth->add_option("--noise", spec.noise_sigma, "within-class noise std");
  synth->add_option("--blobs", spec.blobs_per_class, "spatial blobs per class");
  synth->add_option("--border", spec.border, "unlabeled margin at blob edges (pixels)");

  RunFlags pre_flags, train_flags;
  auto* pre = app.add_subcommand("pretrain", "open-set pre-training only");
  add_run_flags(pre, pre_flags);
  auto* train = app.add_subcommand("train", "pre-training and episodic training");
  add_run_flags(train, train_flags);

  std::string ckpt, data_override, which = "test", report_path, map_path, pred_out, emb_out;
  bool all_pixels = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  eval->add_option("--data", data_override, "dataset directory (default: from the checkpoint)");
  eval->add_option("--split", which, "test, val or all");
  eval->add_option("--report", report_path, "report path (default: <checkpoint>/eval_<split>.json)");
  eval->add_option("--map", map_path, "classification map PNG");

  auto* predict_cmd = app.add_subcommand("predict", "per-pixel predictions as CSV");
  predict_cmd->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  predict_cmd->add_option("--data", data_override, "dataset directory (default: from the checkpoint)");
  predict_cmd->add_option("--out", pred_out, "CSV output")->required();
  predict_cmd->add_flag("--all-pixels", all_pixels, "include unlabeled pixels");

  auto* export_cmd = app.add_subcommand("export-embeddings", "write penultimate and logit embeddings");
  export_cmd->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  export_cmd->add_option("--data", data_override, "dataset directory (default: from the checkpoint)");
  export_cmd->add_option("--split", which, "test, val or all");
  export_cmd->add_option("--out", emb_out, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*convert) {
      if (conv_known) conv.known_count = *conv_known;
      std::stringstream ss(conv_names);
      for (std::string n; std::getline(ss, n, ',');) conv.class_names.push_back(n);
      HsiCube cube = convert_dataset(conv);
      save_cube(cube, conv_out);
      std::cout << cube.name << ": " << cube.height << "x" << cube.width << "x" << cube.bands << ", "
                << cube.class_count() << " classes, " << cube.labeled_count() << " labeled pixels -> " << conv_out << "\n";
    } else if (*synth) {
      HsiCube cube = generate(spec);
      save_cube(cube, synth_out);
      std::cout << "synthetic cube " << cube.height << "x" << cube.width << "x" << cube.bands << ", "
                << cube.class_count() << " classes, " << cube.labeled_count() << " labeled pixels -> " << synth_out << "\n";
    } else if (*pre) {
      return run_fit(pre_flags, true);
    } else if (*train) {
      return run_fit(train_flags, false);
    } else if (*eval) {
      Loaded l = load_for_inference(ckpt, data_override);
      const Coords px = select_pixels(l, which);
      EvalReport r = evaluate_pixels(l.state, l.data.cube, px);
      json report = r.to_json();
      report["split"] = which;
      report["checkpoint"] = ckpt;
      report["episode"] = l.state.episode;
      report["config"] = to_json(l.state.config);
      if (report_path.empty()) report_path = (fs::path(ckpt) / ("eval_" + which + ".json")).string();
      write_text(report_path, report.dump(2) + "\n");
      if (!map_path.empty()) write_png(render_map(l.state, l.data.cube, l.state.config.eval_batch), map_path);
      std::cout << "known_acc " << report["known_acc"] << " unknown_acc " << report["unknown_acc"] << " all_acc "
                << report["all_acc"] << " classes " << r.predicted_class_count << "\n";
    } else if (*predict_cmd) {
      Loaded l = load_for_inference(ckpt, data_override);
      const HsiCube& cube = l.data.cube;
      Coords px;
      if (all_pixels) {
        for (int r = 0; r < cube.height; ++r) {
          for (int c = 0; c < cube.width; ++c) px.emplace_back(r, c);
        }
      } else {
        px = select_pixels(l, "all");
      }
      const Predictions p = predict_from_embeddings(l.state, embed_pixels(l.state, cube, px, l.state.config.eval_batch));
      std::ostringstream csv;
      csv << "row,col,label,rejected,known_class,cluster\n";
      for (std::size_t i = 0; i < px.size(); ++i) {
        const int kc = p.known_class[i];
        csv << px[i].first << "," << px[i].second << "," << cube.label(px[i].first, px[i].second) << ","
            << int(p.rejected[i]) << "," << (kc >= 0 ? l.state.split.known_ids[kc] : -1) << "," << p.cluster[i] << "\n";
      }
      write_text(pred_out, csv.str());
      if (p.fallback) std::cerr << "warning: no unknown prototype group; rejected pixels share one fallback cluster\n";
    } else if (*export_cmd) {
      Loaded l = load_for_inference(ckpt, data_override);
      const Coords px = select_pixels(l, which);
      std::vector<Patch> patches;
      patches.reserve(px.size());
      for (auto [r, c] : px) patches.push_back(extract_patch(l.data.cube, r, c, l.state.config.extractor.patch_size));
      write_embeddings(compute_embeddings(l.state, patches, l.state.config.eval_batch), emb_out);
      std::cout << patches.size() << " embeddings -> " << emb_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
