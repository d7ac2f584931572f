#include "msif/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>

#include "msif/errors.hpp"

namespace msif {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'I', 'F'};
constexpr std::uint32_t kVersion = 1;

// Plain little-endian fixed-width writes. The byte order is pinned here, not
// inherited from the host, so files move between machines.
void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_i64(std::ostream& os, std::int64_t v) {
  auto u = static_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t u;
  static_assert(sizeof(u) == sizeof(v));
  std::memcpy(&u, &v, 8);
  put_i64(os, static_cast<std::int64_t>(u));
}

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw CorruptFileError(path + ": truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::int64_t get_i64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw CorruptFileError(path + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<std::int64_t>(v);
}

double get_f64(std::istream& is, const std::string& path) {
  std::uint64_t u = static_cast<std::uint64_t>(get_i64(is, path));
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

std::string get_str(std::istream& is, const std::string& path) {
  std::uint32_t n = get_u32(is, path);
  if (n > (1u << 20)) throw CorruptFileError(path + ": implausible string length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw CorruptFileError(path + ": truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");

  f.write(kMagic, 4);
  put_u32(f, kVersion);

  put_u32(f, static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    put_str(f, k);
    put_str(f, v);
  }

  put_u32(f, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, data] : ckpt.tensors) {
    auto sit = ckpt.shapes.find(name);
    if (sit == ckpt.shapes.end())
      throw ValueError("checkpoint tensor " + name + " has no shape entry");
    std::int64_t n = 1;
    for (auto d : sit->second) n *= d;
    if (n != static_cast<std::int64_t>(data.size()))
      throw ValueError("checkpoint tensor " + name + " shape disagrees with its data size");
    put_str(f, name);
    put_u32(f, static_cast<std::uint32_t>(sit->second.size()));
    for (auto d : sit->second) put_i64(f, d);
    for (double x : data) put_f64(f, x);
  }
  f.flush();
  if (!f) throw IoError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFileError("cannot open checkpoint " + path);

  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw CorruptFileError(path + ": bad checkpoint magic");
  std::uint32_t version = get_u32(f, path);
  if (version != kVersion)
    throw VersionMismatchError(path + ": checkpoint version " + std::to_string(version) +
                               ", expected " + std::to_string(kVersion));

  Checkpoint ckpt;
  std::uint32_t meta_count = get_u32(f, path);
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string k = get_str(f, path);
    std::string v = get_str(f, path);
    ckpt.meta[k] = std::move(v);
  }

  std::uint32_t tensor_count = get_u32(f, path);
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    std::string name = get_str(f, path);
    if (ckpt.tensors.count(name))
      throw CorruptFileError(path + ": duplicate tensor " + name);
    std::uint32_t rank = get_u32(f, path);
    if (rank > 8) throw CorruptFileError(path + ": implausible tensor rank");
    std::vector<std::int64_t> shape(rank);
    std::int64_t n = 1;
    for (auto& d : shape) {
      d = get_i64(f, path);
      if (d < 0 || d > (1 << 28)) throw CorruptFileError(path + ": implausible dimension");
      n *= d;
    }
    std::vector<double> data(static_cast<std::size_t>(n));
    for (auto& x : data) x = get_f64(f, path);
    ckpt.shapes[name] = std::move(shape);
    ckpt.tensors[name] = std::move(data);
  }
  return ckpt;
}

}  // namespace msif
