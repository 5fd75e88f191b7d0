#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <utility>

#include "ctdistill/volume.hpp"

namespace ctd {

enum class PhantomKind { kSheppLogan, kLung };

/// Region IDs written by lung_phantom.
namespace label {
inline constexpr std::uint16_t kBackground = 0;
inline constexpr std::uint16_t kBody = 1;
inline constexpr std::uint16_t kLung = 2;
inline constexpr std::uint16_t kVessel = 3;
inline constexpr std::uint16_t kAirway = 4;
}  // namespace label

struct TissueHu {
  float body = 40.0f;
  float lung = -850.0f;
  float vessel = 50.0f;
  float airway = -1000.0f;
};

struct PhantomSpec {
  PhantomKind kind = PhantomKind::kLung;
  std::size_t n = 256;
  std::uint64_t seed = 0;
  std::size_t n_vessels = 12;
  int airway_depth = 4;
  TissueHu hu;
  float pixel_size = 1.0f;  // mm

  /// n >= 16, airway_depth in [0, 6], tissue HU inside the clamp range.
  void validate() const;
};

/// Ellipse in normalized image coordinates ([-1, 1] across the field of
/// view, y pointing up). `value` is the additive intensity.
struct Ellipse {
  double cx, cy;
  double semi_x, semi_y;
  double angle_deg;
  double value;

  bool contains(double x, double y) const;
};

/// The original ten Shepp-Logan ellipses.
const std::array<Ellipse, 10>& shepp_logan_ellipses();

/// Intensity of the analytic phantom at a normalized point, in the
/// original units (background 0, skull 2.0).
double shepp_logan_intensity(double x, double y);

/// Affine map from Shepp-Logan intensity to HU: 0 -> -1000, 2.0 -> +2000.
double shepp_logan_to_hu(double intensity);

/// Normalized coordinate of pixel centre (i, j) on an n x n grid; row 0 is
/// the top edge (y = +1).
std::pair<double, double> pixel_center(std::size_t i, std::size_t j,
                                       std::size_t n);

/// Single-slice phantom; each pixel is the sum of the ellipses containing its
/// centre.
VolumeF32 shepp_logan(std::size_t n, float pixel_size = 1.0f);

struct LabeledVolume {
  VolumeF32 volume;
  LabelMap labels;
};

/// Body ellipse with two lungs, random vessel disks and a binary airway tree.
/// Deterministic per seed; lung extents jitter by up to 5% with the seed.
LabeledVolume lung_phantom(const PhantomSpec& spec);

/// Dispatches on spec.kind. Shepp-Logan labels are 1 inside the skull
/// ellipse, 0 outside.
LabeledVolume make_phantom(const PhantomSpec& spec);

}  // namespace ctd
