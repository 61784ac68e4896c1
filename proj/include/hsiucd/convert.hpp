#pragma once

#include "hsiucd/cube.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hsiucd {

/// Numeric n-d array in C (row-major) order, values widened to double.
struct NdArray {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  std::size_t size() const;
};

NdArray read_npy(const std::filesystem::path& path);
void write_npy(const NdArray& array, const std::filesystem::path& path);  // float64, C order

/// Numeric variables of a MATLAB file (v5, compressed or not, or v7.3),
/// shaped as MATLAB reports them.  Non-numeric variables are skipped.
std::map<std::string, NdArray> read_mat(const std::filesystem::path& path);

struct ConvertOptions {
  std::filesystem::path data;
  std::filesystem::path labels;  // may equal data for single-file MAT inputs
  std::string data_key;          // MAT variable names; empty: the only 3-d / 2-d variable
  std::string labels_key;
  std::string name;
  std::optional<int> known_count;
  std::vector<std::string> class_names;
  int band_axis = 2;             // axis of the data array holding the bands
};

/// Builds a cube from an (H, W, B) array (bands on `band_axis`) and an
/// (H, W) label array of non-negative integers.
HsiCube cube_from_arrays(const NdArray& data, const NdArray& labels, const ConvertOptions& options);
HsiCube convert_dataset(const ConvertOptions& options);

}  // namespace hsiucd
