#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctd {

/// Raised when an input violates a documented precondition or invariant.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 12-bit CT convention. Every volume entering or leaving the toolkit is
/// clamped to this range.
inline constexpr float kHuMin = -1024.0f;
inline constexpr float kHuMax = 3071.0f;
inline constexpr double kHuDataRange = 4095.0;

inline constexpr double kAirHu = -1000.0;
inline constexpr double kDefaultMuWater = 0.019;  // mm^-1, ~70 keV

float clamp_hu(float hu);

struct Dims {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::size_t nz = 0;

  std::size_t count() const { return nx * ny * nz; }
  std::size_t slice_count() const { return nx * ny; }
  bool operator==(const Dims&) const = default;
  std::string str() const;
};

struct Spacing {
  float sx = 1.0f;
  float sy = 1.0f;
  float sz = 1.0f;
  bool operator==(const Spacing&) const = default;
};

/// Voxel values in HU, stored z-major then y then x.
class VolumeF32 {
 public:
  VolumeF32() = default;

  /// Zero-HU (water) volume.
  VolumeF32(Dims dims, Spacing spacing);

  /// Takes ownership of `data`. Rejects non-finite values and clamps the rest
  /// into [kHuMin, kHuMax].
  VolumeF32(Dims dims, Spacing spacing, std::vector<float> data);

  static VolumeF32 filled(Dims dims, Spacing spacing, float hu);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  std::span<const float> slice(std::size_t z) const;
  std::span<float> slice(std::size_t z);

  float at(std::size_t x, std::size_t y, std::size_t z = 0) const {
    return data_[(z * dims_.ny + y) * dims_.nx + x];
  }
  float& at(std::size_t x, std::size_t y, std::size_t z = 0) {
    return data_[(z * dims_.ny + y) * dims_.nx + x];
  }

  /// Re-applies the HU clamp after in-place edits.
  void clamp();

  bool operator==(const VolumeF32&) const = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<float> data_;
};

/// Integer region map aligned voxel-for-voxel with a VolumeF32. 0 is
/// background.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(Dims dims, Spacing spacing);
  LabelMap(Dims dims, Spacing spacing, std::vector<std::uint16_t> data);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::span<const std::uint16_t> data() const { return data_; }
  std::span<std::uint16_t> data() { return data_; }

  std::span<const std::uint16_t> slice(std::size_t z) const;

  std::uint16_t at(std::size_t x, std::size_t y, std::size_t z = 0) const {
    return data_[(z * dims_.ny + y) * dims_.nx + x];
  }
  std::uint16_t& at(std::size_t x, std::size_t y, std::size_t z = 0) {
    return data_[(z * dims_.ny + y) * dims_.nx + x];
  }

  std::uint16_t max_id() const;

  bool operator==(const LabelMap&) const = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<std::uint16_t> data_;
};

/// Square 2D attenuation image in mm^-1, row-major (row = y index).
struct Image2D {
  std::size_t n = 0;
  std::vector<double> data;

  Image2D() = default;
  explicit Image2D(std::size_t side) : n(side), data(side * side, 0.0) {}

  double& at(std::size_t x, std::size_t y) { return data[y * n + x]; }
  double at(std::size_t x, std::size_t y) const { return data[y * n + x]; }
};

/// Parallel-beam acquisition bound to a square image grid.
struct Geometry {
  std::size_t image_n = 256;
  double pixel_size = 1.0;  // mm
  std::size_t n_angles = 720;
  std::size_t n_bins = 0;   // 0 selects ceil(sqrt(2) * image_n)
  double bin_spacing = 0.0; // 0 selects pixel_size
  double mu_water = kDefaultMuWater;

  static Geometry for_image(std::size_t image_n, std::size_t n_angles = 720,
                            double pixel_size = 1.0);

  /// Fills defaulted fields and checks coverage. Throws ctd::Error.
  Geometry resolved() const;
  void validate() const;

  /// Uniform angles a*pi/n_angles, a = 0..n_angles-1.
  std::vector<double> angles() const;
};

/// Projection data over (angle, detector bin), in optical-depth units.
struct Sinogram {
  std::size_t n_angles = 0;
  std::size_t n_bins = 0;
  std::vector<double> angles;
  double bin_spacing = 1.0;
  std::vector<double> data;  // n_angles rows of n_bins

  Sinogram() = default;
  Sinogram(std::vector<double> angle_list, std::size_t bins, double spacing);

  std::span<double> row(std::size_t a) {
    return {data.data() + a * n_bins, n_bins};
  }
  std::span<const double> row(std::size_t a) const {
    return {data.data() + a * n_bins, n_bins};
  }

  void validate() const;
};

/// mu = mu_water * (1 + HU/1000), clamped at 0.
double hu_to_mu(double hu, double mu_water);
/// Inverse of hu_to_mu on the unclamped range, result clamped to HU range.
float mu_to_hu(double mu, double mu_water);

Image2D hu_to_mu(std::span<const float> slice, std::size_t n, double mu_water);
std::vector<float> mu_to_hu(const Image2D& img, double mu_water);

}  // namespace ctd
