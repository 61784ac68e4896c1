#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hsiucd {

/// A hyperspectral scene: H x W x B reflectance values plus an H x W label map.
/// Label 0 is unlabeled background; classes are 1-based.
struct HsiCube {
  std::string name;
  int height = 0;
  int width = 0;
  int bands = 0;
  std::vector<float> data;              // row-major (row, col, band)
  std::vector<std::int16_t> labels;     // row-major (row, col)
  std::vector<std::string> class_names;
  std::optional<int> known_count;       // default known/unknown split hint

  int class_count() const;
  int label(int row, int col) const { return labels[static_cast<std::size_t>(row) * width + col]; }
  float value(int row, int col, int band) const {
    return data[(static_cast<std::size_t>(row) * width + col) * bands + band];
  }
  std::span<const float> spectrum(int row, int col) const {
    return {data.data() + (static_cast<std::size_t>(row) * width + col) * bands,
            static_cast<std::size_t>(bands)};
  }
  std::size_t labeled_count() const;

  /// Throws std::invalid_argument when any structural invariant is broken.
  void validate() const;
};

/// A P x P x B neighborhood centred on one pixel, stored (row, col, band).
struct Patch {
  int size = 0;
  int bands = 0;
  int center_row = 0;
  int center_col = 0;
  int label = 0;
  std::vector<double> values;

  double& at(int r, int c, int b) {
    return values[(static_cast<std::size_t>(r) * size + c) * bands + b];
  }
  double at(int r, int c, int b) const {
    return values[(static_cast<std::size_t>(r) * size + c) * bands + b];
  }
};

struct ClassSplit {
  std::vector<int> known_ids;
  std::vector<int> unknown_ids;

  /// Checks disjointness, range against `class_count`, and minimum sizes.
  void validate(int class_count) const;
  /// Index of `class_id` within known_ids, or -1.
  int known_index(int class_id) const;
  bool is_unknown(int class_id) const;
};

struct LoadOptions {
  bool impute_nan = false;
};

/// Reads the dataset container: manifest.json, data.bin, labels.bin.
HsiCube load_cube(const std::filesystem::path& dir, const LoadOptions& options = {});
void save_cube(const HsiCube& cube, const std::filesystem::path& dir);

/// Replaces non-finite values with the mean of the finite values of their band.
/// Returns the number of replaced entries.
std::size_t impute_nan(HsiCube& cube);

/// Extracts a patch with mirror (reflect) padding at the borders.
Patch extract_patch(const HsiCube& cube, int row, int col, int patch_size);

/// Per-band z-score over labeled pixels; zero-variance bands become all zeros.
HsiCube band_normalize(const HsiCube& cube);

/// Reflect index into [0, n) without repeating the edge sample.
int reflect_index(int i, int n);

/// Coordinates of every labeled pixel of `class_id`, in row-major order.
std::vector<std::pair<int, int>> class_pixels(const HsiCube& cube, int class_id);

/// Default split: first `known_count` classes known, the rest unknown.  The
/// count comes from the cube hint, the dataset name, or ~60% of the classes.
ClassSplit default_split(const HsiCube& cube);

}  // namespace hsiucd
