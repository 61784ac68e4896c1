#include "hsiucd/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hsiucd {

namespace {

constexpr char kMagic[8] = {'H', 'S', 'I', 'U', 'C', 'D', 'T', 'A'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes little-endian");

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("archive truncated");
  return v;
}

}  // namespace

const NamedTensor& Archive::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw std::out_of_range("archive has no tensor '" + name + "'");
}

bool Archive::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header;
  header["format"] = "hsiucd-tensors";
  header["version"] = kArchiveVersion;
  header["meta"] = archive.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : archive.tensors) {
    std::size_t count = 1;
    for (int s : t.shape) count *= static_cast<std::size_t>(s);
    if (count != t.values.size()) {
      throw std::invalid_argument("tensor '" + t.name + "' shape does not match its value count");
    }
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kArchiveVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : archive.tensors) {
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a tensor archive");
  }
  const auto version = take<std::uint32_t>(in);
  if (version != kArchiveVersion) {
    throw std::runtime_error(path.string() + ": unsupported archive version " + std::to_string(version));
  }
  const auto len = take<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("archive truncated");
  const nlohmann::json header = nlohmann::json::parse(text);
  Archive a;
  a.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<int>>();
    std::size_t count = 1;
    for (int s : t.shape) count *= static_cast<std::size_t>(s);
    t.values.resize(count);
    in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw std::runtime_error("archive truncated in tensor '" + t.name + "'");
    a.tensors.push_back(std::move(t));
  }
  return a;
}

}  // namespace hsiucd
