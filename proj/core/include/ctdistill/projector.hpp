#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctdistill/volume.hpp"

namespace ctd {

// Parallel-beam conventions shared by every operator here:
//   pixel (i, j) centre:  x = (i - (n-1)/2) * pixel_size,
//                         y = ((n-1)/2 - j) * pixel_size   (row 0 on top)
//   bin b centre:         t = (b - (n_bins-1)/2) * bin_spacing
//   ray (theta, t):       { (x, y) : x cos(theta) + y sin(theta) = t }

struct FbpFilter {
  enum class Kind { kRamLak, kHann };
  Kind kind = Kind::kRamLak;
  double cutoff = 1.0;  // fraction of Nyquist, (0, 1]

  void validate() const;
};

/// Joseph ray-driven projection: each ray steps one pixel row (or column)
/// at a time and linearly interpolates along the other axis. Uses the
/// geometry's uniform angles unless `angles` is given.
Sinogram radon_forward(const Image2D& slice, const Geometry& geom);
Sinogram radon_forward(const Image2D& slice, const Geometry& geom,
                       std::span<const double> angles);

/// Exact transpose of radon_forward, evaluated pixel-by-pixel.
Image2D backproject(const Sinogram& s, const Geometry& geom);

/// Ramp-filters every projection (zero-padded FFT, optional Hann window).
/// Output rows are q = bin_spacing * (p conv h) with the band-limited ramp
/// kernel h.
Sinogram filter_projections(const Sinogram& s, const FbpFilter& filter);

/// Filtered back-projection to attenuation (mm^-1). Back-projection uses
/// linear interpolation in t and angular weight pi / n_angles of the
/// sinogram actually supplied.
Image2D fbp_attenuation(const Sinogram& s, const FbpFilter& filter,
                        const Geometry& geom);

/// fbp_attenuation converted to HU and clamped; returns a single-slice
/// volume with the geometry's pixel size.
VolumeF32 fbp(const Sinogram& s, const FbpFilter& filter, const Geometry& geom);

/// hu_to_mu followed by radon_forward on slice z.
Sinogram sinogram_of(const VolumeF32& v, std::size_t z, const Geometry& geom);
std::vector<Sinogram> sinogram_of(const VolumeF32& v, const Geometry& geom);

/// Keeps rows 0, k, 2k, ... of a sinogram.
Sinogram subsample_angles(const Sinogram& s, std::size_t k);

}  // namespace ctd
