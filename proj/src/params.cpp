#include "attsteer/params.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace attsteer {

namespace {

constexpr std::array<char, 5> kMagic{'C', 'A', 'P', 'T', '1'};
constexpr std::uint64_t kMaxRank = 16;
constexpr std::uint64_t kMaxName = 4096;

void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b{};
  for (std::size_t i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b.data(), b.size());
}

void put_f32(std::ostream& os, float f) {
  const auto v = std::bit_cast<std::uint32_t>(f);
  std::array<char, 4> b{};
  for (std::size_t i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b.data(), b.size());
}

bool get_u64(std::istream& is, std::uint64_t& v) {
  std::array<unsigned char, 8> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), b.size())) return false;
  v = 0;
  for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return true;
}

float get_f32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), b.size())) {
    throw CheckpointError("checkpoint truncated inside tensor data");
  }
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return std::bit_cast<float>(v);
}

}  // namespace

void write_checkpoint(std::ostream& os, const Params& params) {
  os.write(kMagic.data(), kMagic.size());
  for (const auto& [name, t] : params) {
    put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(os, t.rank());
    for (auto e : t.shape()) put_u64(os, e);
    for (auto v : t.values()) put_f32(os, v);
  }
  if (!os) throw CheckpointError("failed writing checkpoint");
}

Params read_checkpoint(std::istream& is) {
  std::array<char, 5> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  Params params;
  std::uint64_t name_len = 0;
  while (get_u64(is, name_len)) {
    if (name_len == 0 || name_len > kMaxName) throw CheckpointError("corrupt parameter name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name_len))) {
      throw CheckpointError("checkpoint truncated inside a name");
    }
    std::uint64_t rank = 0;
    if (!get_u64(is, rank) || rank == 0 || rank > kMaxRank) {
      throw CheckpointError("corrupt rank for '" + name + "'");
    }
    Shape shape(rank);
    for (auto& e : shape) {
      std::uint64_t v = 0;
      if (!get_u64(is, v) || v == 0) throw CheckpointError("corrupt extent for '" + name + "'");
      e = v;
    }
    std::vector<float> values(element_count(shape));
    for (auto& v : values) v = get_f32(is);
    if (!params.emplace(name, Tensor(shape, std::move(values))).second) {
      throw CheckpointError("duplicate parameter '" + name + "'");
    }
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const Params& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, params);
}

Params load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace attsteer
