#include "ctdistill/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "json.hpp"

namespace ctd {

namespace {

constexpr std::array<char, 4> kMagic = {'C', 'T', 'K', '1'};

class ByteWriter {
 public:
  explicit ByteWriter(std::size_t reserve) { bytes_.reserve(reserve); }

  void u8(std::uint8_t v) { bytes_.push_back(std::byte{v}); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xFF));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  std::vector<std::byte> take() { return std::move(bytes_); }

 private:
  std::vector<std::byte> bytes_;
};

std::uint32_t load_u32(std::span<const std::byte> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  }
  return v;
}

std::uint16_t load_u16(std::span<const std::byte> b, std::size_t off) {
  return static_cast<std::uint16_t>(static_cast<std::uint16_t>(b[off]) |
                                    (static_cast<std::uint16_t>(b[off + 1]) << 8));
}

float load_f32(std::span<const std::byte> b, std::size_t off) {
  return std::bit_cast<float>(load_u32(b, off));
}

void write_header(ByteWriter& w, const Dims& dims, const Spacing& spacing,
                  DType dtype) {
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCtkVersion);
  w.u32(static_cast<std::uint32_t>(dims.nx));
  w.u32(static_cast<std::uint32_t>(dims.ny));
  w.u32(static_cast<std::uint32_t>(dims.nz));
  w.f32(spacing.sx);
  w.f32(spacing.sy);
  w.f32(spacing.sz);
  w.u8(static_cast<std::uint8_t>(dtype));
}

void check_dims_fit(const Dims& dims) {
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  if (dims.nx > kMax || dims.ny > kMax || dims.nz > kMax) {
    throw Error("dims exceed CTK1 u32 range");
  }
}

// Raw f32 payload without HU semantics, shared by volumes and sinograms.
std::vector<std::byte> encode_f32(const Dims& dims, const Spacing& spacing,
                                  std::span<const float> values) {
  check_dims_fit(dims);
  ByteWriter w(kCtkHeaderBytes + values.size() * 4);
  write_header(w, dims, spacing, DType::kF32Hu);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(fmt::format("refusing to serialize non-finite value at index {}", i));
    }
    w.f32(values[i]);
  }
  return w.take();
}

std::size_t payload_bytes(const CtkHeader& h) {
  return h.dims.count() * dtype_size(h.dtype);
}

void check_payload(std::span<const std::byte> bytes, const CtkHeader& h) {
  const std::size_t need = kCtkHeaderBytes + payload_bytes(h);
  if (bytes.size() < need) {
    throw FormatError(
        fmt::format("truncated payload: dims {} x {} B need {} bytes, file "
                    "ends at byte offset {}",
                    h.dims.str(), dtype_size(h.dtype), need, bytes.size()),
        bytes.size());
  }
  if (bytes.size() > need) {
    throw FormatError(fmt::format("{} trailing bytes after payload at offset {}",
                                  bytes.size() - need, need),
                      need);
  }
}

std::vector<float> decode_f32_payload(std::span<const std::byte> bytes,
                                      const CtkHeader& h) {
  std::vector<float> out(h.dims.count());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t off = kCtkHeaderBytes + 4 * i;
    out[i] = load_f32(bytes, off);
    if (!std::isfinite(out[i])) {
      throw FormatError(
          fmt::format("non-finite value at byte offset {}", off), off);
    }
  }
  return out;
}

}  // namespace

FormatError::FormatError(const std::string& what, std::size_t offset)
    : Error(what), offset_(offset) {}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32Hu: return 4;
    case DType::kI16Hu: return 2;
    case DType::kU8Labels: return 1;
    case DType::kU16Labels: return 2;
  }
  throw Error("unknown dtype");
}

bool is_label_dtype(DType dtype) {
  return dtype == DType::kU8Labels || dtype == DType::kU16Labels;
}

std::vector<std::byte> encode(const VolumeF32& v, DType dtype) {
  if (dtype == DType::kF32Hu) {
    return encode_f32(v.dims(), v.spacing(), v.data());
  }
  if (dtype != DType::kI16Hu) {
    throw Error("HU volumes must be written as f32 or i16");
  }
  check_dims_fit(v.dims());
  ByteWriter w(kCtkHeaderBytes + v.data().size() * 2);
  write_header(w, v.dims(), v.spacing(), dtype);
  for (float hu : v.data()) {
    const auto q = static_cast<std::int16_t>(std::lround(clamp_hu(hu)));
    w.u16(static_cast<std::uint16_t>(q));
  }
  return w.take();
}

std::vector<std::byte> encode(const LabelMap& labels, DType dtype) {
  if (!is_label_dtype(dtype)) {
    throw Error("label maps must be written as u8 or u16");
  }
  check_dims_fit(labels.dims());
  const std::uint16_t limit = dtype == DType::kU8Labels ? 255 : 65535;
  ByteWriter w(kCtkHeaderBytes + labels.data().size() * dtype_size(dtype));
  write_header(w, labels.dims(), labels.spacing(), dtype);
  for (std::uint16_t id : labels.data()) {
    if (id > limit) {
      throw Error(fmt::format("label {} exceeds dtype range (max {})", id, limit));
    }
    if (dtype == DType::kU8Labels) {
      w.u8(static_cast<std::uint8_t>(id));
    } else {
      w.u16(id);
    }
  }
  return w.take();
}

CtkHeader decode_header(std::span<const std::byte> bytes) {
  if (bytes.size() < 4 ||
      std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError("bad magic: expected \"CTK1\"", 0);
  }
  if (bytes.size() < kCtkHeaderBytes) {
    throw FormatError(fmt::format("truncated header: {} of {} bytes",
                                  bytes.size(), kCtkHeaderBytes),
                      bytes.size());
  }
  const std::uint32_t version = load_u32(bytes, 4);
  if (version != kCtkVersion) {
    throw FormatError(fmt::format("unsupported CTK version {}", version), 4);
  }
  CtkHeader h;
  h.dims = {load_u32(bytes, 8), load_u32(bytes, 12), load_u32(bytes, 16)};
  h.spacing = {load_f32(bytes, 20), load_f32(bytes, 24), load_f32(bytes, 28)};
  const auto code = static_cast<std::uint8_t>(bytes[32]);
  if (code > 3) {
    throw FormatError(fmt::format("unknown dtype code {}", code), 32);
  }
  h.dtype = static_cast<DType>(code);
  if (h.dims.nx == 0 || h.dims.ny == 0 || h.dims.nz == 0) {
    throw FormatError(fmt::format("zero dimension in {}", h.dims.str()), 8);
  }
  return h;
}

CtkObject decode(std::span<const std::byte> bytes) {
  const CtkHeader h = decode_header(bytes);
  check_payload(bytes, h);
  const std::size_t n = h.dims.count();
  switch (h.dtype) {
    case DType::kF32Hu:
      return VolumeF32(h.dims, h.spacing, decode_f32_payload(bytes, h));
    case DType::kI16Hu: {
      std::vector<float> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto raw = load_u16(bytes, kCtkHeaderBytes + 2 * i);
        values[i] = static_cast<float>(static_cast<std::int16_t>(raw));
      }
      return VolumeF32(h.dims, h.spacing, std::move(values));
    }
    case DType::kU8Labels: {
      std::vector<std::uint16_t> ids(n);
      for (std::size_t i = 0; i < n; ++i) {
        ids[i] = static_cast<std::uint8_t>(bytes[kCtkHeaderBytes + i]);
      }
      return LabelMap(h.dims, h.spacing, std::move(ids));
    }
    case DType::kU16Labels: {
      std::vector<std::uint16_t> ids(n);
      for (std::size_t i = 0; i < n; ++i) {
        ids[i] = load_u16(bytes, kCtkHeaderBytes + 2 * i);
      }
      return LabelMap(h.dims, h.spacing, std::move(ids));
    }
  }
  throw Error("unreachable dtype");
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()),
                           static_cast<std::streamsize>(size))) {
    throw Error(fmt::format("read failed: {}", path.string()));
  }
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::byte> bytes) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot open {} for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(fmt::format("write failed: {}", path.string()));
}

CtkObject read_volume(const std::filesystem::path& path) {
  return decode(read_file_bytes(path));
}

CtkHeader read_header(const std::filesystem::path& path) {
  return decode_header(read_file_bytes(path));
}

VolumeF32 read_hu_volume(const std::filesystem::path& path) {
  auto obj = read_volume(path);
  if (auto* v = std::get_if<VolumeF32>(&obj)) return std::move(*v);
  throw Error(fmt::format("{} holds labels, expected an HU volume", path.string()));
}

LabelMap read_label_map(const std::filesystem::path& path) {
  auto obj = read_volume(path);
  if (auto* l = std::get_if<LabelMap>(&obj)) return std::move(*l);
  throw Error(fmt::format("{} holds an HU volume, expected labels", path.string()));
}

void write_volume(const VolumeF32& v, const std::filesystem::path& path,
                  DType dtype) {
  write_file_bytes(path, encode(v, dtype));
}

void write_volume(const LabelMap& labels, const std::filesystem::path& path,
                  DType dtype) {
  write_file_bytes(path, encode(labels, dtype));
}

void write_sinogram(const Sinogram& s, const std::filesystem::path& path) {
  s.validate();
  double step = std::numbers::pi;
  if (s.n_angles >= 2) {
    step = s.angles[1] - s.angles[0];
    for (std::size_t a = 0; a < s.n_angles; ++a) {
      const double expect = s.angles[0] + step * static_cast<double>(a);
      if (std::abs(s.angles[a] - expect) > 1e-9) {
        throw Error("write_sinogram: angles must be uniformly spaced");
      }
    }
  }
  if (s.n_angles > 0 && s.angles[0] != 0.0) {
    throw Error("write_sinogram: first angle must be 0");
  }
  std::vector<float> values(s.data.begin(), s.data.end());
  const Dims dims{s.n_bins, s.n_angles, 1};
  const Spacing spacing{static_cast<float>(s.bin_spacing),
                        static_cast<float>(step), 1.0f};
  write_file_bytes(path, encode_f32(dims, spacing, values));
}

Sinogram read_sinogram(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const CtkHeader h = decode_header(bytes);
  if (h.dtype != DType::kF32Hu || h.dims.nz != 1) {
    throw Error("sinogram files must be f32 with nz = 1");
  }
  check_payload(bytes, h);
  const auto values = decode_f32_payload(bytes, h);
  std::vector<double> angles(h.dims.ny);
  for (std::size_t a = 0; a < angles.size(); ++a) {
    angles[a] = static_cast<double>(a) * static_cast<double>(h.spacing.sy);
  }
  Sinogram s(std::move(angles), h.dims.nx, h.spacing.sx);
  s.data.assign(values.begin(), values.end());
  return s;
}

VolumeF32 import_raw16(const std::filesystem::path& raw_path,
                       const std::filesystem::path& sidecar_path) {
  nlohmann::json meta;
  {
    std::ifstream in(sidecar_path);
    if (!in) throw Error(fmt::format("cannot open {}", sidecar_path.string()));
    meta = nlohmann::json::parse(in);
  }
  static const std::vector<std::string> kKeys = {
      "nx", "ny", "nz", "sx", "sy", "sz", "signed", "slope", "intercept"};
  for (const auto& [key, _] : meta.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
      throw Error(fmt::format("unknown sidecar key \"{}\"", key));
    }
  }
  const Dims dims{meta.at("nx").get<std::size_t>(),
                  meta.at("ny").get<std::size_t>(),
                  meta.value("nz", std::size_t{1})};
  const Spacing spacing{meta.value("sx", 1.0f), meta.value("sy", 1.0f),
                        meta.value("sz", 1.0f)};
  const bool is_signed = meta.value("signed", true);
  const double slope = meta.value("slope", 1.0);
  const double intercept = meta.value("intercept", 0.0);

  const auto bytes = read_file_bytes(raw_path);
  if (bytes.size() != dims.count() * 2) {
    throw FormatError(fmt::format("raw16 file has {} bytes, dims {} need {}",
                                  bytes.size(), dims.str(), dims.count() * 2),
                      bytes.size());
  }
  std::vector<float> hu(dims.count());
  for (std::size_t i = 0; i < hu.size(); ++i) {
    const std::uint16_t raw = load_u16(bytes, 2 * i);
    const double value = is_signed ? static_cast<std::int16_t>(raw) : raw;
    hu[i] = static_cast<float>(value * slope + intercept);
  }
  return VolumeF32(dims, spacing, std::move(hu));
}

}  // namespace ctd
