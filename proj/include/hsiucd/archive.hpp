#pragma once

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hsiucd {

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
};

/// Single-file tensor archive: magic, format version, a JSON header
/// (caller metadata plus the tensor directory), then little-endian float64
/// payloads in directory order.
struct Archive {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

inline constexpr int kArchiveVersion = 1;

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

}  // namespace hsiucd
