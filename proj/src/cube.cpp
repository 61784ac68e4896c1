#include "hsiucd/cube.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

namespace hsiucd {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

template <typename T>
void write_le(std::ofstream& out, const std::vector<T>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(T)));
  } else {
    for (T v : values) {
      auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      out.write(bytes.data(), sizeof(T));
    }
  }
}

template <typename T>
std::vector<T> read_le(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != count * sizeof(T)) {
    throw std::invalid_argument(path.filename().string() + ": expected " +
                                std::to_string(count * sizeof(T)) + " bytes, found " +
                                std::to_string(bytes) + " (shape mismatch)");
  }
  in.seekg(0);
  std::vector<T> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if constexpr (std::endian::native != std::endian::little) {
    for (T& v : values) {
      auto b = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(b.begin(), b.end());
      v = std::bit_cast<T>(b);
    }
  }
  return values;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

int HsiCube::class_count() const {
  if (!class_names.empty()) return static_cast<int>(class_names.size());
  int c = 0;
  for (auto l : labels) c = std::max<int>(c, l);
  return c;
}

std::size_t HsiCube::labeled_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](std::int16_t l) { return l != 0; }));
}

void HsiCube::validate() const {
  if (height <= 0 || width <= 0 || bands <= 0) {
    throw std::invalid_argument("cube '" + name + "': non-positive dimensions");
  }
  const std::size_t pixels = static_cast<std::size_t>(height) * width;
  if (data.size() != pixels * bands) {
    throw std::invalid_argument("cube '" + name + "': data size does not match H x W x B");
  }
  if (labels.size() != pixels) {
    throw std::invalid_argument("cube '" + name + "': label map shape does not match data");
  }
  const int classes = class_count();
  for (auto l : labels) {
    if (l < 0 || l > classes) {
      throw std::invalid_argument("cube '" + name + "': label " + std::to_string(l) +
                                  " out of range 0.." + std::to_string(classes));
    }
  }
}

HsiCube load_cube(const fs::path& dir, const LoadOptions& options) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw std::runtime_error("missing manifest: " + manifest_path.string());
  }
  std::ifstream in(manifest_path);
  json manifest = json::parse(in);

  HsiCube cube;
  cube.name = manifest.value("name", dir.filename().string());
  cube.height = manifest.at("height").get<int>();
  cube.width = manifest.at("width").get<int>();
  cube.bands = manifest.at("bands").get<int>();
  if (manifest.value("dtype", std::string("float32")) != "float32" ||
      manifest.value("label_dtype", std::string("int16")) != "int16") {
    throw std::invalid_argument("manifest: only dtype float32 / label_dtype int16 are supported");
  }
  cube.class_names = manifest.value("class_names", std::vector<std::string>{});
  if (manifest.contains("known_count")) cube.known_count = manifest["known_count"].get<int>();

  const std::size_t pixels = static_cast<std::size_t>(cube.height) * cube.width;
  cube.data = read_le<float>(dir / "data.bin", pixels * cube.bands);
  cube.labels = read_le<std::int16_t>(dir / "labels.bin", pixels);

  const bool finite = std::all_of(cube.data.begin(), cube.data.end(),
                                  [](float v) { return std::isfinite(v); });
  if (!finite) {
    if (!options.impute_nan) {
      throw std::invalid_argument("cube '" + cube.name +
                                  "' contains non-finite values (use --impute-nan)");
    }
    impute_nan(cube);
  }
  cube.validate();
  return cube;
}

void save_cube(const HsiCube& cube, const fs::path& dir) {
  cube.validate();
  fs::create_directories(dir);
  json manifest = {{"name", cube.name},
                   {"height", cube.height},
                   {"width", cube.width},
                   {"bands", cube.bands},
                   {"dtype", "float32"},
                   {"label_dtype", "int16"},
                   {"class_names", cube.class_names}};
  if (cube.known_count) manifest["known_count"] = *cube.known_count;
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
  std::ofstream data(dir / "data.bin", std::ios::binary);
  write_le(data, cube.data);
  std::ofstream labels(dir / "labels.bin", std::ios::binary);
  write_le(labels, cube.labels);
  if (!data || !labels) throw std::runtime_error("failed writing cube to " + dir.string());
}

std::size_t impute_nan(HsiCube& cube) {
  std::size_t replaced = 0;
  const std::size_t pixels = static_cast<std::size_t>(cube.height) * cube.width;
  for (int b = 0; b < cube.bands; ++b) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < pixels; ++p) {
      const float v = cube.data[p * cube.bands + b];
      if (std::isfinite(v)) {
        sum += v;
        ++n;
      }
    }
    const float mean = n ? static_cast<float>(sum / static_cast<double>(n)) : 0.0f;
    for (std::size_t p = 0; p < pixels; ++p) {
      float& v = cube.data[p * cube.bands + b];
      if (!std::isfinite(v)) {
        v = mean;
        ++replaced;
      }
    }
  }
  return replaced;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Patch extract_patch(const HsiCube& cube, int row, int col, int patch_size) {
  if (patch_size <= 0 || patch_size % 2 == 0) {
    throw std::invalid_argument("patch size must be odd, got " + std::to_string(patch_size));
  }
  if (row < 0 || row >= cube.height || col < 0 || col >= cube.width) {
    throw std::out_of_range("patch center (" + std::to_string(row) + ", " + std::to_string(col) +
                            ") outside cube");
  }
  Patch p;
  p.size = patch_size;
  p.bands = cube.bands;
  p.center_row = row;
  p.center_col = col;
  p.label = cube.label(row, col);
  p.values.resize(static_cast<std::size_t>(patch_size) * patch_size * cube.bands);
  const int half = patch_size / 2;
  for (int r = 0; r < patch_size; ++r) {
    const int rr = reflect_index(row - half + r, cube.height);
    for (int c = 0; c < patch_size; ++c) {
      const int cc = reflect_index(col - half + c, cube.width);
      auto src = cube.spectrum(rr, cc);
      double* dst = &p.at(r, c, 0);
      for (int b = 0; b < cube.bands; ++b) dst[b] = src[b];
    }
  }
  return p;
}

HsiCube band_normalize(const HsiCube& cube) {
  HsiCube out = cube;
  const std::size_t pixels = static_cast<std::size_t>(cube.height) * cube.width;
  for (int b = 0; b < cube.bands; ++b) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < pixels; ++p) {
      if (cube.labels[p] == 0) continue;
      sum += cube.data[p * cube.bands + b];
      ++n;
    }
    const double mean = n ? sum / static_cast<double>(n) : 0.0;
    double sq = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
      if (cube.labels[p] == 0) continue;
      const double d = cube.data[p * cube.bands + b] - mean;
      sq += d * d;
    }
    const double sd = n ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
      float& v = out.data[p * cube.bands + b];
      v = sd > 1e-12 ? static_cast<float>((cube.data[p * cube.bands + b] - mean) / sd) : 0.0f;
    }
  }
  return out;
}

std::vector<std::pair<int, int>> class_pixels(const HsiCube& cube, int class_id) {
  std::vector<std::pair<int, int>> out;
  for (int r = 0; r < cube.height; ++r) {
    for (int c = 0; c < cube.width; ++c) {
      if (cube.label(r, c) == class_id) out.emplace_back(r, c);
    }
  }
  return out;
}

void ClassSplit::validate(int class_count) const {
  if (known_ids.size() < 2) throw std::invalid_argument("split: need at least 2 known classes");
  if (unknown_ids.empty()) throw std::invalid_argument("split: need at least 1 unknown class");
  std::set<int> seen;
  for (int id : known_ids) {
    if (id < 1 || id > class_count) {
      throw std::invalid_argument("split: class id " + std::to_string(id) + " out of range");
    }
    if (!seen.insert(id).second) throw std::invalid_argument("split: duplicate class id");
  }
  for (int id : unknown_ids) {
    if (id < 1 || id > class_count) {
      throw std::invalid_argument("split: class id " + std::to_string(id) + " out of range");
    }
    if (!seen.insert(id).second) {
      throw std::invalid_argument("split: class " + std::to_string(id) +
                                  " is both known and unknown");
    }
  }
}

int ClassSplit::known_index(int class_id) const {
  auto it = std::find(known_ids.begin(), known_ids.end(), class_id);
  return it == known_ids.end() ? -1 : static_cast<int>(it - known_ids.begin());
}

bool ClassSplit::is_unknown(int class_id) const {
  return std::find(unknown_ids.begin(), unknown_ids.end(), class_id) != unknown_ids.end();
}

ClassSplit default_split(const HsiCube& cube) {
  const int classes = cube.class_count();
  int known = 0;
  if (cube.known_count) {
    known = *cube.known_count;
  } else {
    const std::string n = lower(cube.name);
    if (n.find("pavia") != std::string::npos || n == "pu") {
      known = 5;
    } else if (classes == 16 && (n == "ip" || n == "sa" || n.find("indian") != std::string::npos ||
                                 n.find("salinas") != std::string::npos ||
                                 n.find("whu") != std::string::npos ||
                                 n.find("hanchuan") != std::string::npos)) {
      known = 11;
    } else {
      known = static_cast<int>(std::ceil(0.6 * classes));
    }
  }
  known = std::clamp(known, 0, classes);
  ClassSplit split;
  for (int c = 1; c <= classes; ++c) {
    (c <= known ? split.known_ids : split.unknown_ids).push_back(c);
  }
  return split;
}

}  // namespace hsiucd
