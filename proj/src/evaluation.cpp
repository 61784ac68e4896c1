#include "hsiucd/evaluation.hpp"

#include "hsiucd/assignment.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <stdexcept>

namespace hsiucd {

namespace {

EmbeddingBatch forward_batched(TrainState& state, std::span<const Patch> patches, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  auto& net = state.extractor;
  EmbeddingBatch all;
  all.penultimate.resize(static_cast<int>(patches.size()), net.penultimate_dim());
  all.logits.resize(static_cast<int>(patches.size()), net.logit_dim());
  for (std::size_t start = 0; start < patches.size(); start += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, patches.size() - start);
    auto out = net.forward(patches.subspan(start, n), false);
    all.penultimate.middleRows(static_cast<int>(start), static_cast<int>(n)) = out.penultimate;
    all.logits.middleRows(static_cast<int>(start), static_cast<int>(n)) = out.logits;
  }
  return all;
}

double fraction(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

// Contingency of discovered clusters against unknown classes over the
// unknown-class samples that were rejected.
struct Contingency {
  Mat table;
  std::vector<int> clusters;
  std::size_t unknown_total = 0;
};

Contingency unknown_contingency(const Predictions& preds, const Truth& truth) {
  std::map<int, int> row_of;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truth.label[i] >= truth.known_count && preds.rejected[i]) row_of.emplace(preds.cluster[i], 0);
  }
  Contingency c;
  for (auto& [id, row] : row_of) {
    row = static_cast<int>(c.clusters.size());
    c.clusters.push_back(id);
  }
  c.table = Mat::Zero(static_cast<int>(c.clusters.size()), truth.unknown_count);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truth.label[i] < truth.known_count) continue;
    ++c.unknown_total;
    if (preds.rejected[i]) c.table(row_of[preds.cluster[i]], truth.label[i] - truth.known_count) += 1.0;
  }
  return c;
}

double matched_count(const Mat& table, const std::vector<int>& match) {
  double s = 0.0;
  for (std::size_t r = 0; r < match.size(); ++r) {
    if (match[r] >= 0) s += table(static_cast<int>(r), match[r]);
  }
  return s;
}

void check_sizes(const Predictions& preds, const Truth& truth) {
  if (preds.size() != truth.label.size()) throw std::invalid_argument("prediction / truth size mismatch");
  for (int l : truth.label) {
    if (l < 0 || l >= truth.known_count + truth.unknown_count) throw std::invalid_argument("truth label out of range");
  }
}

}  // namespace

Predictions predict_from_embeddings(const TrainState& state, const EmbeddingBatch& emb) {
  Predictions p;
  const int n = static_cast<int>(emb.logits.rows());
  p.distances = distances(emb.logits, state.anchors);
  const Mat feats = state.prototype_features(emb);
  p.group_probs = group_probabilities(assign(feats, state.prototypes), state.groups);
  p.known_class.assign(n, -1);
  p.cluster.assign(n, -1);
  p.rejected.assign(n, 0);
  const std::vector<int> nearest = classify(p.distances);
  std::vector<int> rejected_rows;
  for (int i = 0; i < n; ++i) {
    if (nearest[i] == state.anchors.unknown_index()) {
      p.rejected[i] = 1;
      rejected_rows.push_back(i);
    } else {
      p.known_class[i] = nearest[i];
    }
  }
  if (!rejected_rows.empty()) {
    Mat q(static_cast<int>(rejected_rows.size()), p.group_probs.cols());
    for (std::size_t r = 0; r < rejected_rows.size(); ++r) q.row(static_cast<int>(r)) = p.group_probs.row(rejected_rows[r]);
    const Discovery d = discover(q, state.groups);
    p.fallback = d.fallback;
    for (std::size_t r = 0; r < rejected_rows.size(); ++r) p.cluster[rejected_rows[r]] = d.cluster[r];
  }
  return p;
}

Predictions predict(TrainState& state, std::span<const Patch> patches, int batch_size) {
  return predict_from_embeddings(state, forward_batched(state, patches, batch_size));
}

std::optional<double> known_accuracy(const Predictions& preds, const Truth& truth) {
  check_sizes(preds, truth);
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truth.label[i] >= truth.known_count) continue;
    ++total;
    if (!preds.rejected[i] && preds.known_class[i] == truth.label[i]) ++correct;
  }
  if (total == 0) return std::nullopt;
  return fraction(correct, total);
}

std::vector<int> match_clusters(const Mat& contingency) {
  if (contingency.size() == 0) return std::vector<int>(contingency.rows(), -1);
  return solve_assignment(-contingency);
}

std::optional<double> unknown_accuracy(const Predictions& preds, const Truth& truth) {
  check_sizes(preds, truth);
  const Contingency c = unknown_contingency(preds, truth);
  if (c.unknown_total == 0) return std::nullopt;
  return matched_count(c.table, match_clusters(c.table)) / static_cast<double>(c.unknown_total);
}

double all_accuracy(const Predictions& preds, const Truth& truth) {
  check_sizes(preds, truth);
  if (preds.size() == 0) return 0.0;
  std::size_t known_correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truth.label[i] < truth.known_count && !preds.rejected[i] && preds.known_class[i] == truth.label[i]) {
      ++known_correct;
    }
  }
  const Contingency c = unknown_contingency(preds, truth);
  const double matched = matched_count(c.table, match_clusters(c.table));
  return (static_cast<double>(known_correct) + matched) / static_cast<double>(preds.size());
}

Truth make_truth(const ClassSplit& split, std::span<const Patch> patches) {
  Truth t;
  t.known_count = static_cast<int>(split.known_ids.size());
  t.unknown_count = static_cast<int>(split.unknown_ids.size());
  for (const Patch& p : patches) {
    const int k = split.known_index(p.label);
    if (k >= 0) {
      t.label.push_back(k);
      continue;
    }
    auto it = std::find(split.unknown_ids.begin(), split.unknown_ids.end(), p.label);
    if (it == split.unknown_ids.end()) {
      throw std::invalid_argument("class " + std::to_string(p.label) + " is in neither split");
    }
    t.label.push_back(t.known_count + static_cast<int>(it - split.unknown_ids.begin()));
  }
  return t;
}

EvalReport evaluate(const TrainState& state, const Predictions& preds, const Truth& truth) {
  check_sizes(preds, truth);
  EvalReport r;
  r.known_acc = known_accuracy(preds, truth);
  r.unknown_acc = unknown_accuracy(preds, truth);
  r.all_acc = all_accuracy(preds, truth);
  r.predicted_class_count = estimate_class_count(state.groups);
  r.group_count = state.groups.count;
  r.true_class_count = truth.known_count + truth.unknown_count;
  r.fallback = preds.fallback;

  const int nk = truth.known_count;
  r.known_confusion = Mat::Zero(nk, nk + 1);
  std::size_t known_rej = 0, unknown_rej = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int t = truth.label[i];
    if (t < nk) {
      ++r.known_samples;
      if (preds.rejected[i]) {
        ++known_rej;
        r.known_confusion(t, nk) += 1.0;
      } else {
        r.known_confusion(t, preds.known_class[i]) += 1.0;
      }
    } else {
      ++r.unknown_samples;
      if (preds.rejected[i]) ++unknown_rej;
    }
  }
  r.known_rejected = fraction(known_rej, r.known_samples);
  r.unknown_rejected = fraction(unknown_rej, r.unknown_samples);
  for (int c = 0; c < nk; ++c) {
    const double n = r.known_confusion.row(c).sum();
    r.known_class_acc.push_back(n > 0 ? r.known_confusion(c, c) / n : 0.0);
  }
  const Contingency c = unknown_contingency(preds, truth);
  r.unknown_contingency = c.table;
  r.cluster_ids = c.clusters;
  r.cluster_match = match_clusters(c.table);
  std::vector<double> per_class_total(truth.unknown_count, 0.0);
  for (int l : truth.label) {
    if (l >= nk) per_class_total[l - nk] += 1.0;
  }
  r.unknown_class_acc.assign(truth.unknown_count, 0.0);
  for (std::size_t row = 0; row < r.cluster_match.size(); ++row) {
    const int u = r.cluster_match[row];
    if (u >= 0 && per_class_total[u] > 0) r.unknown_class_acc[u] = c.table(static_cast<int>(row), u) / per_class_total[u];
  }
  return r;
}

nlohmann::json EvalReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  auto mat = [](const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int j = 0; j < m.cols(); ++j) row.push_back(static_cast<long long>(m(i, j)));
      rows.push_back(row);
    }
    return rows;
  };
  return {{"known_acc", opt(known_acc)},
          {"unknown_acc", opt(unknown_acc)},
          {"all_acc", all_acc},
          {"predicted_class_count", predicted_class_count},
          {"group_count", group_count},
          {"true_class_count", true_class_count},
          {"known_samples", known_samples},
          {"unknown_samples", unknown_samples},
          {"known_rejected", known_rejected},
          {"unknown_rejected", unknown_rejected},
          {"known_confusion", mat(known_confusion)},
          {"unknown_contingency", mat(unknown_contingency)},
          {"cluster_ids", cluster_ids},
          {"cluster_match", cluster_match},
          {"known_class_acc", known_class_acc},
          {"unknown_class_acc", unknown_class_acc},
          {"discovery_fallback", fallback}};
}

namespace {

// Known classes take the first colors; clusters take from a separate set.
constexpr std::array<std::array<std::uint8_t, 3>, 16> kClassPalette{{
    {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48}, {145, 30, 180},
    {70, 240, 240}, {240, 50, 230},  {210, 245, 60}, {250, 190, 212}, {0, 128, 128}, {220, 190, 255},
    {170, 110, 40}, {255, 250, 200}, {128, 0, 0},    {170, 255, 195},
}};
constexpr std::array<std::array<std::uint8_t, 3>, 8> kClusterPalette{{
    {255, 255, 255}, {128, 128, 128}, {128, 128, 0}, {0, 0, 128},
    {255, 215, 180}, {64, 64, 64},    {0, 255, 0},   {0, 0, 255},
}};

}  // namespace

std::array<std::uint8_t, 3> class_color(int known_index) {
  if (known_index < 0) throw std::invalid_argument("negative class index");
  if (known_index < static_cast<int>(kClassPalette.size())) return kClassPalette[known_index];
  // beyond the fixed table: a deterministic spread with an odd red channel
  const int k = known_index - static_cast<int>(kClassPalette.size());
  return {static_cast<std::uint8_t>(((k * 37) % 120) * 2 + 11), static_cast<std::uint8_t>((k * 91) % 256),
          static_cast<std::uint8_t>((k * 53 + 97) % 256)};
}

std::array<std::uint8_t, 3> cluster_color(int rank) {
  if (rank < 0) throw std::invalid_argument("negative cluster rank");
  if (rank < static_cast<int>(kClusterPalette.size())) return kClusterPalette[rank];
  // even red channel keeps these apart from the generated class colors
  const int k = rank - static_cast<int>(kClusterPalette.size());
  return {static_cast<std::uint8_t>(((k * 29) % 120) * 2 + 12), static_cast<std::uint8_t>((k * 67 + 31) % 256),
          static_cast<std::uint8_t>((k * 43 + 7) % 256)};
}

IndexedImage render_map(TrainState& state, const HsiCube& cube, int batch_size) {
  IndexedImage img;
  img.width = cube.width;
  img.height = cube.height;
  img.index.assign(static_cast<std::size_t>(cube.width) * cube.height, 0);
  const int nk = state.known_count();
  img.palette.push_back({0, 0, 0});
  for (int c = 0; c < nk; ++c) img.palette.push_back(class_color(c));
  // every group id (plus the fallback) may appear as a cluster
  const int clusters = state.groups.count + 1;
  if (1 + nk + clusters > 256) throw std::runtime_error("render_map: too many classes for an 8-bit palette");
  for (int g = 0; g < clusters; ++g) img.palette.push_back(cluster_color(g));

  const int p = state.config.extractor.patch_size;
  std::vector<Patch> chunk;
  std::vector<std::size_t> where;
  auto flush = [&]() {
    if (chunk.empty()) return;
    const Predictions pr = predict(state, chunk, batch_size);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      img.index[where[i]] = static_cast<std::uint8_t>(pr.rejected[i] ? 1 + nk + pr.cluster[i] : 1 + pr.known_class[i]);
    }
    chunk.clear();
    where.clear();
  };
  for (int r = 0; r < cube.height; ++r) {
    for (int c = 0; c < cube.width; ++c) {
      if (cube.label(r, c) == 0) continue;
      chunk.push_back(extract_patch(cube, r, c, p));
      where.push_back(static_cast<std::size_t>(r) * cube.width + c);
      if (static_cast<int>(chunk.size()) == batch_size) flush();
    }
  }
  flush();
  return img;
}

void write_png(const IndexedImage& image, const std::filesystem::path& path) {
  if (image.palette.empty() || image.palette.size() > 256) throw std::invalid_argument("palette must hold 1..256 colors");
  if (image.width < 1 || image.height < 1) throw std::invalid_argument("empty image");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> pal(image.palette.size());
  for (std::size_t i = 0; i < pal.size(); ++i) pal[i] = {image.palette[i][0], image.palette[i][1], image.palette[i][2]};
  png_set_PLTE(png, info, pal.data(), static_cast<int>(pal.size()));
  png_write_info(png, info);
  for (int r = 0; r < image.height; ++r) {
    png_write_row(png, image.index.data() + static_cast<std::size_t>(r) * image.width);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

IndexedImage read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  IndexedImage img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("PNG decoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_PALETTE || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(path.string() + " is not an 8-bit palette PNG");
  }
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  png_colorp pal = nullptr;
  int n = 0;
  png_get_PLTE(png, info, &pal, &n);
  for (int i = 0; i < n; ++i) img.palette.push_back({pal[i].red, pal[i].green, pal[i].blue});
  img.index.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int r = 0; r < img.height; ++r) png_read_row(png, img.index.data() + static_cast<std::size_t>(r) * img.width, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

namespace {
constexpr char kEmbeddingMagic[8] = {'H', 'S', 'I', 'U', 'C', 'D', 'E', 'M'};
constexpr std::uint32_t kEmbeddingVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T take(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("embedding file truncated");
  return v;
}
}  // namespace

EmbeddingTable compute_embeddings(TrainState& state, std::span<const Patch> patches, int batch_size) {
  EmbeddingBatch b = forward_batched(state, patches, batch_size);
  EmbeddingTable t;
  t.penultimate = std::move(b.penultimate);
  t.logits = std::move(b.logits);
  for (const Patch& p : patches) t.labels.push_back(p.label);
  return t;
}

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  const auto rows = static_cast<std::uint64_t>(table.labels.size());
  if (table.penultimate.rows() != static_cast<Eigen::Index>(rows) || table.logits.rows() != static_cast<Eigen::Index>(rows)) {
    throw std::invalid_argument("embedding table row mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kEmbeddingMagic, sizeof kEmbeddingMagic);
  put(out, kEmbeddingVersion);
  put(out, rows);
  put(out, static_cast<std::uint32_t>(table.penultimate.cols()));
  put(out, static_cast<std::uint32_t>(table.logits.cols()));
  for (std::uint64_t i = 0; i < rows; ++i) {
    out.write(reinterpret_cast<const char*>(table.penultimate.row(static_cast<int>(i)).data()),
              static_cast<std::streamsize>(sizeof(double) * table.penultimate.cols()));
    out.write(reinterpret_cast<const char*>(table.logits.row(static_cast<int>(i)).data()),
              static_cast<std::streamsize>(sizeof(double) * table.logits.cols()));
    put(out, static_cast<double>(table.labels[i]));
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kEmbeddingMagic, 8) != 0) {
    throw std::runtime_error(path.string() + " is not an embedding file");
  }
  if (take<std::uint32_t>(in) != kEmbeddingVersion) throw std::runtime_error("unsupported embedding file version");
  const auto rows = take<std::uint64_t>(in);
  const auto pen = take<std::uint32_t>(in);
  const auto logit = take<std::uint32_t>(in);
  EmbeddingTable t;
  t.penultimate.resize(static_cast<int>(rows), pen);
  t.logits.resize(static_cast<int>(rows), logit);
  for (std::uint64_t i = 0; i < rows; ++i) {
    if (!in.read(reinterpret_cast<char*>(t.penultimate.row(static_cast<int>(i)).data()), sizeof(double) * pen) ||
        !in.read(reinterpret_cast<char*>(t.logits.row(static_cast<int>(i)).data()), sizeof(double) * logit)) {
      throw std::runtime_error("embedding file truncated");
    }
    t.labels.push_back(static_cast<int>(take<double>(in)));
  }
  return t;
}

}  // namespace hsiucd
