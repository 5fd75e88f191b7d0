#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "ctdistill/volume.hpp"

namespace ctd {

// CTK1 container, little-endian throughout:
//
//   offset  size  field
//        0     4  magic "CTK1"
//        4     4  u32 version (= 1)
//        8    12  u32 nx, ny, nz
//       20    12  f32 sx, sy, sz
//       32     1  u8 dtype
//       33     -  payload, z-major then y then x
inline constexpr std::size_t kCtkHeaderBytes = 33;
inline constexpr std::uint32_t kCtkVersion = 1;

enum class DType : std::uint8_t {
  kF32Hu = 0,
  kI16Hu = 1,
  kU8Labels = 2,
  kU16Labels = 3,
};

std::size_t dtype_size(DType dtype);
bool is_label_dtype(DType dtype);

struct CtkHeader {
  Dims dims;
  Spacing spacing;
  DType dtype = DType::kF32Hu;
};

/// Malformed or truncated CTK1 data. `offset()` is the byte offset at which
/// the problem was detected.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

using CtkObject = std::variant<VolumeF32, LabelMap>;

std::vector<std::byte> encode(const VolumeF32& v, DType dtype = DType::kF32Hu);
std::vector<std::byte> encode(const LabelMap& labels,
                              DType dtype = DType::kU16Labels);
CtkHeader decode_header(std::span<const std::byte> bytes);
CtkObject decode(std::span<const std::byte> bytes);

/// Reads a CTK1 file; dtype selects VolumeF32 (f32/i16) or LabelMap (u8/u16).
CtkObject read_volume(const std::filesystem::path& path);
CtkHeader read_header(const std::filesystem::path& path);
VolumeF32 read_hu_volume(const std::filesystem::path& path);
LabelMap read_label_map(const std::filesystem::path& path);

void write_volume(const VolumeF32& v, const std::filesystem::path& path,
                  DType dtype = DType::kF32Hu);
void write_volume(const LabelMap& labels, const std::filesystem::path& path,
                  DType dtype = DType::kU16Labels);

/// Sinograms are stored as f32 with nx = n_bins, ny = n_angles, nz = 1,
/// sx = bin spacing and sy = angular step (radians). Angles must be uniform.
void write_sinogram(const Sinogram& s, const std::filesystem::path& path);
Sinogram read_sinogram(const std::filesystem::path& path);

/// One-way importer for 16-bit raw data. The sidecar JSON holds
/// {"nx","ny","nz","sx","sy","sz","signed","slope","intercept"}; HU is
/// raw * slope + intercept.
VolumeF32 import_raw16(const std::filesystem::path& raw_path,
                       const std::filesystem::path& sidecar_path);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::byte> bytes);

}  // namespace ctd
