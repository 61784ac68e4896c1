#include "hsiucd/checkpoint.hpp"

#include "hsiucd/archive.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace hsiucd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

NamedTensor from_mat(const std::string& name, const Mat& m) {
  NamedTensor t{name, {static_cast<int>(m.rows()), static_cast<int>(m.cols())}, {}};
  t.values.assign(m.data(), m.data() + m.size());
  return t;
}

Mat to_mat(const NamedTensor& t) {
  if (t.shape.size() != 2) throw std::runtime_error("tensor " + t.name + " is not a matrix");
  Mat m(t.shape[0], t.shape[1]);
  if (static_cast<std::size_t>(m.size()) != t.values.size()) throw std::runtime_error("tensor " + t.name + " size mismatch");
  std::copy(t.values.begin(), t.values.end(), m.data());
  return m;
}

void copy_into(const NamedTensor& t, std::vector<double>& dst, const std::string& name) {
  if (t.values.size() != dst.size()) {
    throw std::runtime_error("checkpoint tensor '" + name + "' has " + std::to_string(t.values.size()) +
                             " values, expected " + std::to_string(dst.size()));
  }
  dst = t.values;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return json::parse(in);
}

}  // namespace

void save_checkpoint(const TrainState& state, const fs::path& dir, const json& extra) {
  fs::create_directories(dir);
  TrainState& s = const_cast<TrainState&>(state);  // parameter accessors are non-const

  Archive net;
  net.meta = {{"extractor", to_json(state.config)["extractor"]}};
  for (Param* p : s.extractor.parameters()) net.tensors.push_back({p->name, p->shape, p->value});
  for (Buffer* b : s.extractor.buffers()) net.tensors.push_back({b->name, {static_cast<int>(b->value.size())}, b->value});
  write_archive(dir / "extractor.bin", net);

  Archive anchors;
  anchors.meta = {{"scale", state.anchors.scale}};
  anchors.tensors.push_back(from_mat("anchors", state.anchors.anchors));
  write_archive(dir / "anchors.bin", anchors);

  Archive protos;
  protos.meta = {{"tau", state.prototypes.tau}};
  protos.tensors.push_back(from_mat("prototypes", state.prototypes.vectors));
  write_archive(dir / "prototypes.bin", protos);

  write_json(dir / "partition.json",
             {{"partition", state.groups.partition}, {"count", state.groups.count}, {"known_map", state.groups.known_map},
              {"supported", std::vector<int>(state.groups.supported.begin(), state.groups.supported.end())}});

  Archive opt;
  opt.meta = {{"steps", state.optimizer.steps_taken()}};
  auto params = s.extractor.parameters();
  Param proto("prototypes", {state.prototypes.count(), state.prototypes.dim()});
  params.push_back(&proto);
  if (state.optimizer.steps_taken() > 0) {
    for (const Param& p : state.optimizer.state(params)) opt.tensors.push_back({p.name, p.shape, p.value});
  }
  write_archive(dir / "optimizer.bin", opt);

  json manifest = {{"format", "hsiucd-checkpoint"},
                   {"version", kCheckpointVersion},
                   {"config", to_json(state.config)},
                   {"split", {{"known", state.split.known_ids}, {"unknown", state.split.unknown_ids}}},
                   {"pretrain_epochs", state.pretrain_epochs},
                   {"episode", state.episode}};
  manifest.update(extra);
  write_json(dir / "manifest.json", manifest);
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw std::runtime_error("no checkpoint manifest in " + dir.string());
  LoadedCheckpoint out;
  out.manifest = read_json(dir / "manifest.json");
  const json& m = out.manifest;
  if (m.value("format", "") != "hsiucd-checkpoint") throw std::runtime_error(dir.string() + ": not a checkpoint");
  if (m.value("version", 0) != kCheckpointVersion) throw std::runtime_error(dir.string() + ": unsupported checkpoint version");

  const RunConfig config = config_from_json(m.at("config"));
  ClassSplit split;
  split.known_ids = m.at("split").at("known").get<std::vector<int>>();
  split.unknown_ids = m.at("split").at("unknown").get<std::vector<int>>();
  int classes = 0;
  for (int id : split.known_ids) classes = std::max(classes, id);
  for (int id : split.unknown_ids) classes = std::max(classes, id);
  TrainState s = init_state(config, split, config.extractor.input_bands, "", classes);
  s.pretrain_epochs = m.at("pretrain_epochs").get<int>();
  s.episode = m.at("episode").get<long>();

  const Archive net = read_archive(dir / "extractor.bin");
  for (Param* p : s.extractor.parameters()) copy_into(net.get(p->name), p->value, p->name);
  for (Buffer* b : s.extractor.buffers()) copy_into(net.get(b->name), b->value, b->name);

  const Archive anchors = read_archive(dir / "anchors.bin");
  s.anchors.anchors = to_mat(anchors.get("anchors"));
  s.anchors.scale = anchors.meta.at("scale").get<double>();
  if (s.anchors.anchors.rows() != s.known_count() + 1) throw std::runtime_error("anchor count does not match the split");

  const Archive protos = read_archive(dir / "prototypes.bin");
  const Mat pv = to_mat(protos.get("prototypes"));
  if (pv.rows() != s.prototypes.count() || pv.cols() != s.prototypes.dim()) {
    throw std::runtime_error("prototype shape does not match the config");
  }
  s.prototypes.vectors = pv;
  s.prototypes.tau = protos.meta.at("tau").get<double>();

  const json part = read_json(dir / "partition.json");
  s.groups.partition = part.at("partition").get<std::vector<int>>();
  s.groups.count = part.at("count").get<int>();
  s.groups.known_map = part.at("known_map").get<std::vector<int>>();
  const auto supported = part.value("supported", std::vector<int>{});
  s.groups.supported.assign(supported.begin(), supported.end());
  s.groups.validate(s.prototypes.count());

  const Archive opt = read_archive(dir / "optimizer.bin");
  const long steps = opt.meta.at("steps").get<long>();
  if (steps > 0) {
    auto params = s.extractor.parameters();
    Param proto("prototypes", {s.prototypes.count(), s.prototypes.dim()});
    params.push_back(&proto);
    std::vector<Param> st;
    for (const NamedTensor& t : opt.tensors) {
      Param p(t.name, t.shape);
      p.value = t.values;
      st.push_back(std::move(p));
    }
    s.optimizer.load_state(params, st, steps);
  }
  out.state = std::move(s);
  return out;
}

}  // namespace hsiucd
