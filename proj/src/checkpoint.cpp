#include "semlink/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>

#include "semlink/errors.hpp"

namespace semlink {

namespace {

constexpr std::array<char, 4> kMagic = {'S', 'L', 'N', 'K'};

template <typename U>
void write_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf.data(), buf.size());
}

template <typename U>
U read_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!in) throw IoError("unexpected end of container");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<std::uint64_t>(in)); }

void write_container(std::ostream& out, const std::vector<NamedTensor>& blocks) {
  out.write(kMagic.data(), kMagic.size());
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    write_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    write_u32(out, static_cast<std::uint32_t>(b.value.rows()));
    write_u32(out, static_cast<std::uint32_t>(b.value.cols()));
    for (double v : b.value.values()) write_f64(out, v);
  }
  if (!out) throw IoError("failed writing parameter container");
}

std::vector<NamedTensor> read_container(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("not a parameter container (bad magic)");
  const auto version = read_u32(in);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported container version " + std::to_string(version));
  }
  const auto count = read_u32(in);
  std::vector<NamedTensor> blocks;
  blocks.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor b;
    b.name.resize(read_u32(in));
    in.read(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    const auto rows = read_u32(in);
    const auto cols = read_u32(in);
    std::vector<double> data(static_cast<std::size_t>(rows) * cols);
    for (double& v : data) v = read_f64(in);
    b.value = Tensor2(rows, cols, std::move(data));
    blocks.push_back(std::move(b));
  }
  return blocks;
}

void save_container(const std::filesystem::path& path, const std::vector<NamedTensor>& blocks) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_container(out, blocks);
}

std::vector<NamedTensor> load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_container(in);
}

}  // namespace semlink
