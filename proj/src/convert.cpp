#include "hsiucd/convert.hpp"

#include <hdf5.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>
#include <stdexcept>

namespace hsiucd {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "converter assumes a little-endian host");

std::size_t NdArray::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
T load(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

// Widens `count` little-endian values of the given kind to double.
void widen(char kind, int bytes, const char* src, std::size_t count, double* dst) {
  for (std::size_t i = 0; i < count; ++i, src += bytes) {
    switch (kind) {
      case 'f':
        dst[i] = bytes == 4 ? load<float>(src) : load<double>(src);
        break;
      case 'i':
        dst[i] = bytes == 1   ? load<std::int8_t>(src)
                 : bytes == 2 ? load<std::int16_t>(src)
                 : bytes == 4 ? load<std::int32_t>(src)
                              : static_cast<double>(load<std::int64_t>(src));
        break;
      case 'u':
      case 'b':
        dst[i] = bytes == 1   ? load<std::uint8_t>(src)
                 : bytes == 2 ? load<std::uint16_t>(src)
                 : bytes == 4 ? load<std::uint32_t>(src)
                              : static_cast<double>(load<std::uint64_t>(src));
        break;
      default:
        throw std::runtime_error("unsupported element kind");
    }
  }
}

// Column-major (Fortran) buffer to row-major, same shape.
std::vector<double> fortran_to_c(const std::vector<double>& f, const std::vector<std::size_t>& shape) {
  const std::size_t n = f.size();
  std::vector<double> c(n);
  const std::size_t rank = shape.size();
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t fi = 0; fi < n; ++fi) {
    std::size_t ci = 0;
    for (std::size_t a = 0; a < rank; ++a) ci = ci * shape[a] + idx[a];
    c[ci] = f[fi];
    for (std::size_t a = 0; a < rank; ++a) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  return c;
}

// ---- MAT v5 ----

enum MiType : std::uint32_t {
  miINT8 = 1, miUINT8 = 2, miINT16 = 3, miUINT16 = 4, miINT32 = 5, miUINT32 = 6,
  miSINGLE = 7, miDOUBLE = 9, miINT64 = 12, miUINT64 = 13, miMATRIX = 14, miCOMPRESSED = 15,
  miUTF8 = 16,
};

struct Element {
  std::uint32_t type = 0;
  const char* data = nullptr;
  std::uint32_t bytes = 0;
  std::size_t next = 0;  // offset of the following element
};

Element read_element(const char* buf, std::size_t size, std::size_t pos) {
  if (pos + 8 > size) throw std::runtime_error("MAT file truncated");
  Element e;
  const auto first = load<std::uint32_t>(buf + pos);
  if ((first >> 16) != 0) {  // small data element
    e.type = first & 0xffff;
    e.bytes = first >> 16;
    e.data = buf + pos + 4;
    e.next = pos + 8;
    if (e.bytes > 4) throw std::runtime_error("MAT file: malformed small element");
    return e;
  }
  e.type = first;
  e.bytes = load<std::uint32_t>(buf + pos + 4);
  e.data = buf + pos + 8;
  if (pos + 8 + e.bytes > size) throw std::runtime_error("MAT file truncated");
  e.next = e.type == miCOMPRESSED ? pos + 8 + e.bytes : pos + 8 + ((e.bytes + 7) / 8) * 8;
  return e;
}

std::pair<char, int> mi_kind(std::uint32_t type) {
  switch (type) {
    case miINT8: return {'i', 1};
    case miUINT8: return {'u', 1};
    case miINT16: return {'i', 2};
    case miUINT16: return {'u', 2};
    case miINT32: return {'i', 4};
    case miUINT32: return {'u', 4};
    case miSINGLE: return {'f', 4};
    case miDOUBLE: return {'f', 8};
    case miINT64: return {'i', 8};
    case miUINT64: return {'u', 8};
    default: throw std::runtime_error("MAT file: unsupported data type " + std::to_string(type));
  }
}

std::vector<char> inflate_all(const char* data, std::uint32_t bytes) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw std::runtime_error("zlib init failed");
  std::vector<char> out;
  std::vector<char> chunk(1 << 16);
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data));
  zs.avail_in = bytes;
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(chunk.data());
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw std::runtime_error("MAT file: corrupt compressed element");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) break;
  }
  inflateEnd(&zs);
  return out;
}

constexpr int kMxCell = 1, kMxStruct = 2, kMxObject = 3, kMxChar = 4, kMxSparse = 5;

void parse_matrix(const Element& m, std::map<std::string, NdArray>& out) {
  const char* b = m.data;
  const std::size_t n = m.bytes;
  Element flags = read_element(b, n, 0);
  const int mx_class = static_cast<int>(load<std::uint32_t>(flags.data) & 0xff);
  const bool complex = (load<std::uint32_t>(flags.data) & 0x0800) != 0;
  Element dims = read_element(b, n, flags.next);
  Element name = read_element(b, n, dims.next);
  if (mx_class == kMxCell || mx_class == kMxStruct || mx_class == kMxObject || mx_class == kMxChar ||
      mx_class == kMxSparse || complex) {
    return;
  }
  NdArray a;
  for (std::uint32_t i = 0; i < dims.bytes / 4; ++i) a.shape.push_back(static_cast<std::size_t>(load<std::int32_t>(dims.data + 4 * i)));
  Element real = read_element(b, n, name.next);
  const auto [kind, width] = mi_kind(real.type);
  const std::size_t count = real.bytes / width;
  if (count != a.size()) throw std::runtime_error("MAT file: element count does not match dimensions");
  std::vector<double> f(count);
  widen(kind, width, real.data, count, f.data());
  a.values = fortran_to_c(f, a.shape);
  out[std::string(name.data, name.bytes)] = std::move(a);
}

std::map<std::string, NdArray> read_mat_v5(const std::vector<char>& file) {
  if (file.size() < 128) throw std::runtime_error("MAT file too short");
  if (file[126] != 'I' || file[127] != 'M') throw std::runtime_error("big-endian MAT files are not supported");
  std::map<std::string, NdArray> out;
  std::size_t pos = 128;
  while (pos + 8 <= file.size()) {
    Element e = read_element(file.data(), file.size(), pos);
    if (e.type == miCOMPRESSED) {
      const std::vector<char> raw = inflate_all(e.data, e.bytes);
      Element inner = read_element(raw.data(), raw.size(), 0);
      if (inner.type == miMATRIX) parse_matrix(inner, out);
    } else if (e.type == miMATRIX) {
      parse_matrix(e, out);
    }
    pos = e.next;
  }
  return out;
}

// ---- MAT v7.3 (HDF5) ----

struct H5Scope {
  hid_t id;
  herr_t (*close)(hid_t);
  ~H5Scope() {
    if (id >= 0) close(id);
  }
};

herr_t collect_dataset(hid_t group, const char* name, const H5L_info_t*, void* op) {
  auto& out = *static_cast<std::map<std::string, NdArray>*>(op);
  H5Scope obj{H5Oopen(group, name, H5P_DEFAULT), H5Oclose};
  if (obj.id < 0 || H5Iget_type(obj.id) != H5I_DATASET) return 0;
  H5Scope ds{H5Dopen2(group, name, H5P_DEFAULT), H5Dclose};
  H5Scope type{H5Dget_type(ds.id), H5Tclose};
  const H5T_class_t cls = H5Tget_class(type.id);
  if (cls != H5T_FLOAT && cls != H5T_INTEGER) return 0;
  // MATLAB marks char / logical arrays with a MATLAB_class attribute
  if (H5Aexists(ds.id, "MATLAB_class") > 0) {
    H5Scope attr{H5Aopen(ds.id, "MATLAB_class", H5P_DEFAULT), H5Aclose};
    H5Scope atype{H5Aget_type(attr.id), H5Tclose};
    std::string value(H5Tget_size(atype.id), '\0');
    H5Aread(attr.id, atype.id, value.data());
    value = value.c_str();
    if (value == "char" || value == "cell" || value == "struct") return 0;
  }
  H5Scope space{H5Dget_space(ds.id), H5Sclose};
  const int rank = H5Sget_simple_extent_ndims(space.id);
  std::vector<hsize_t> dims(rank);
  H5Sget_simple_extent_dims(space.id, dims.data(), nullptr);
  NdArray stored;
  for (hsize_t d : dims) stored.shape.push_back(static_cast<std::size_t>(d));
  stored.values.resize(stored.size());
  if (H5Dread(ds.id, H5T_NATIVE_DOUBLE, H5S_ALL, H5S_ALL, H5P_DEFAULT, stored.values.data()) < 0) {
    throw std::runtime_error(std::string("cannot read HDF5 dataset ") + name);
  }
  // stored C-order dims are MATLAB's reversed; stored data is MATLAB's column-major buffer
  NdArray a;
  a.shape.assign(stored.shape.rbegin(), stored.shape.rend());
  a.values = fortran_to_c(stored.values, a.shape);
  out[name] = std::move(a);
  return 0;
}

std::map<std::string, NdArray> read_mat_v73(const fs::path& path) {
  H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
  H5Scope file{H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose};
  if (file.id < 0) throw std::runtime_error("cannot open HDF5 file " + path.string());
  std::map<std::string, NdArray> out;
  H5Literate(file.id, H5_INDEX_NAME, H5_ITER_INC, nullptr, collect_dataset, &out);
  return out;
}

const NdArray& pick(const std::map<std::string, NdArray>& vars, const std::string& key, std::size_t rank,
                    const fs::path& path) {
  if (!key.empty()) {
    auto it = vars.find(key);
    if (it == vars.end()) throw std::runtime_error(path.string() + " has no variable '" + key + "'");
    return it->second;
  }
  const NdArray* found = nullptr;
  for (const auto& [name, a] : vars) {
    std::size_t r = a.shape.size();
    while (r > rank && a.shape[r - 1] == 1) --r;
    if (r != rank) continue;
    if (found) throw std::runtime_error(path.string() + " holds several " + std::to_string(rank) + "-d variables; name one");
    found = &a;
  }
  if (!found) throw std::runtime_error(path.string() + " holds no " + std::to_string(rank) + "-d numeric variable");
  return *found;
}

NdArray read_any(const fs::path& path, const std::string& key, std::size_t rank) {
  const std::string ext = path.extension().string();
  if (ext == ".npy") return read_npy(path);
  if (ext == ".mat") {
    auto vars = read_mat(path);
    return pick(vars, key, rank, path);
  }
  throw std::runtime_error("unsupported input format: " + path.string() + " (expected .mat or .npy)");
}

}  // namespace

NdArray read_npy(const fs::path& path) {
  const std::vector<char> file = slurp(path);
  if (file.size() < 10 || std::memcmp(file.data(), "\x93NUMPY", 6) != 0) {
    throw std::runtime_error(path.string() + " is not an .npy file");
  }
  const int major = static_cast<unsigned char>(file[6]);
  std::size_t header_len, offset;
  if (major == 1) {
    header_len = load<std::uint16_t>(file.data() + 8);
    offset = 10;
  } else {
    header_len = load<std::uint32_t>(file.data() + 8);
    offset = 12;
  }
  if (offset + header_len > file.size()) throw std::runtime_error(path.string() + ": truncated header");
  const std::string header(file.data() + offset, header_len);
  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([<>|=])([fiub])(\d+)')"))) {
    throw std::runtime_error(path.string() + ": unsupported dtype");
  }
  if (m[1] == ">") throw std::runtime_error(path.string() + ": big-endian arrays are not supported");
  const char kind = m[2].str()[0];
  const int width = std::stoi(m[3]);
  if (kind == 'f' && width != 4 && width != 8) throw std::runtime_error(path.string() + ": unsupported float width");
  const bool fortran = std::regex_search(header, std::regex(R"('fortran_order'\s*:\s*True)"));
  if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) {
    throw std::runtime_error(path.string() + ": missing shape");
  }
  NdArray a;
  const std::string dims = m[1];
  const std::regex number(R"(\d+)");
  for (std::sregex_iterator it(dims.begin(), dims.end(), number), end; it != end; ++it) {
    a.shape.push_back(std::stoull(it->str()));
  }
  const std::size_t count = a.size();
  const std::size_t data_off = offset + header_len;
  if (data_off + count * width > file.size()) throw std::runtime_error(path.string() + ": truncated data");
  std::vector<double> v(count);
  widen(kind, width, file.data() + data_off, count, v.data());
  a.values = fortran ? fortran_to_c(v, a.shape) : std::move(v);
  return a;
}

void write_npy(const NdArray& array, const fs::path& path) {
  std::string shape = "(";
  for (std::size_t d : array.shape) shape += std::to_string(d) + ", ";
  if (array.shape.size() > 1) shape.resize(shape.size() - 2);
  else if (array.shape.size() == 1) shape.resize(shape.size() - 1);
  shape += ")";
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape + ", }";
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header += '\n';
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(array.values.data()), static_cast<std::streamsize>(array.values.size() * 8));
}

std::map<std::string, NdArray> read_mat(const fs::path& path) {
  const std::vector<char> file = slurp(path);
  if (file.size() >= 8 && std::memcmp(file.data(), "\x89HDF\r\n\x1a\n", 8) == 0) return read_mat_v73(path);
  if (file.size() >= 520 && std::memcmp(file.data() + 512, "\x89HDF\r\n\x1a\n", 8) == 0) return read_mat_v73(path);
  return read_mat_v5(file);
}

HsiCube cube_from_arrays(const NdArray& data, const NdArray& labels, const ConvertOptions& options) {
  if (data.shape.size() != 3) throw std::invalid_argument("data must be a 3-d array, got rank " + std::to_string(data.shape.size()));
  if (options.band_axis < 0 || options.band_axis > 2) throw std::invalid_argument("band axis must be 0, 1 or 2");
  std::vector<int> spatial;
  for (int a = 0; a < 3; ++a) {
    if (a != options.band_axis) spatial.push_back(a);
  }
  HsiCube cube;
  cube.name = options.name;
  cube.height = static_cast<int>(data.shape[spatial[0]]);
  cube.width = static_cast<int>(data.shape[spatial[1]]);
  cube.bands = static_cast<int>(data.shape[options.band_axis]);
  std::vector<std::size_t> lshape = labels.shape;
  while (lshape.size() > 2 && lshape.back() == 1) lshape.pop_back();
  if (lshape.size() != 2 || static_cast<int>(lshape[0]) != cube.height || static_cast<int>(lshape[1]) != cube.width) {
    throw std::invalid_argument("label map shape does not match the data's spatial shape " +
                                std::to_string(cube.height) + "x" + std::to_string(cube.width));
  }
  cube.data.resize(static_cast<std::size_t>(cube.height) * cube.width * cube.bands);
  const std::array<std::size_t, 3> strides{data.shape[1] * data.shape[2], data.shape[2], 1};
  for (int r = 0; r < cube.height; ++r) {
    for (int c = 0; c < cube.width; ++c) {
      for (int b = 0; b < cube.bands; ++b) {
        std::array<std::size_t, 3> idx{};
        idx[spatial[0]] = r;
        idx[spatial[1]] = c;
        idx[options.band_axis] = b;
        cube.data[(static_cast<std::size_t>(r) * cube.width + c) * cube.bands + b] =
            static_cast<float>(data.values[idx[0] * strides[0] + idx[1] * strides[1] + idx[2]]);
      }
    }
  }
  int max_label = 0;
  cube.labels.resize(labels.values.size());
  for (std::size_t i = 0; i < labels.values.size(); ++i) {
    const double v = labels.values[i];
    if (!(v >= 0.0) || v != std::floor(v) || v > 32767.0) {
      throw std::invalid_argument("labels must be non-negative integers, found " + std::to_string(v));
    }
    cube.labels[i] = static_cast<std::int16_t>(v);
    max_label = std::max(max_label, static_cast<int>(v));
  }
  if (!options.class_names.empty()) {
    if (static_cast<int>(options.class_names.size()) < max_label) {
      throw std::invalid_argument("got " + std::to_string(options.class_names.size()) + " class names for " +
                                  std::to_string(max_label) + " classes");
    }
    cube.class_names = options.class_names;
  } else {
    for (int c = 1; c <= max_label; ++c) cube.class_names.push_back("class_" + std::to_string(c));
  }
  cube.known_count = options.known_count;
  cube.validate();
  return cube;
}

HsiCube convert_dataset(const ConvertOptions& options) {
  if (options.data.empty()) throw std::invalid_argument("no data file given");
  const fs::path labels = options.labels.empty() ? options.data : options.labels;
  const NdArray data = read_any(options.data, options.data_key, 3);
  const NdArray lab = read_any(labels, options.labels_key, 2);
  ConvertOptions o = options;
  if (o.name.empty()) o.name = options.data.stem().string();
  return cube_from_arrays(data, lab, o);
}

}  // namespace hsiucd
