#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "semlink/tensor.hpp"

namespace semlink {

// Flat binary parameter container:
//   "SLNK" | u32 version | u32 block count |
//   per block: u32 name length, UTF-8 name, u32 rows, u32 cols, rows*cols f64
// All integers and reals little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor2 value;
};

void write_container(std::ostream& out, const std::vector<NamedTensor>& blocks);
std::vector<NamedTensor> read_container(std::istream& in);

void save_container(const std::filesystem::path& path, const std::vector<NamedTensor>& blocks);
std::vector<NamedTensor> load_container(const std::filesystem::path& path);

// Little-endian primitives shared with the dataset file format.
void write_u32(std::ostream& out, std::uint32_t v);
void write_f64(std::ostream& out, double v);
std::uint32_t read_u32(std::istream& in);
double read_f64(std::istream& in);

}  // namespace semlink
