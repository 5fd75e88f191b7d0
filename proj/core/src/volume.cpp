#include "ctdistill/volume.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace ctd {

float clamp_hu(float hu) { return std::clamp(hu, kHuMin, kHuMax); }

std::string Dims::str() const { return fmt::format("{}x{}x{}", nx, ny, nz); }

namespace {

void check_dims(const Dims& dims, const Spacing& spacing) {
  if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0) {
    throw Error(fmt::format("volume dims must be positive, got {}", dims.str()));
  }
  if (!(spacing.sx > 0) || !(spacing.sy > 0) || !(spacing.sz > 0)) {
    throw Error("voxel spacing must be positive");
  }
}

}  // namespace

VolumeF32::VolumeF32(Dims dims, Spacing spacing)
    : dims_(dims), spacing_(spacing) {
  check_dims(dims, spacing);
  data_.assign(dims.count(), 0.0f);
}

VolumeF32::VolumeF32(Dims dims, Spacing spacing, std::vector<float> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  check_dims(dims, spacing);
  if (data_.size() != dims.count()) {
    throw Error(fmt::format("volume {} needs {} values, got {}", dims.str(),
                            dims.count(), data_.size()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw Error(fmt::format("non-finite voxel at index {}", i));
    }
    data_[i] = clamp_hu(data_[i]);
  }
}

VolumeF32 VolumeF32::filled(Dims dims, Spacing spacing, float hu) {
  return VolumeF32(dims, spacing, std::vector<float>(dims.count(), hu));
}

std::span<const float> VolumeF32::slice(std::size_t z) const {
  return std::span<const float>(data_).subspan(z * dims_.slice_count(),
                                               dims_.slice_count());
}

std::span<float> VolumeF32::slice(std::size_t z) {
  return std::span<float>(data_).subspan(z * dims_.slice_count(),
                                         dims_.slice_count());
}

void VolumeF32::clamp() {
  for (auto& v : data_) {
    if (!std::isfinite(v)) throw Error("non-finite voxel produced");
    v = clamp_hu(v);
  }
}

LabelMap::LabelMap(Dims dims, Spacing spacing)
    : dims_(dims), spacing_(spacing) {
  check_dims(dims, spacing);
  data_.assign(dims.count(), 0);
}

LabelMap::LabelMap(Dims dims, Spacing spacing, std::vector<std::uint16_t> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  check_dims(dims, spacing);
  if (data_.size() != dims.count()) {
    throw Error(fmt::format("label map {} needs {} values, got {}", dims.str(),
                            dims.count(), data_.size()));
  }
}

std::span<const std::uint16_t> LabelMap::slice(std::size_t z) const {
  return std::span<const std::uint16_t>(data_).subspan(
      z * dims_.slice_count(), dims_.slice_count());
}

std::uint16_t LabelMap::max_id() const {
  return data_.empty() ? 0 : *std::max_element(data_.begin(), data_.end());
}

Geometry Geometry::for_image(std::size_t image_n, std::size_t n_angles,
                             double pixel_size) {
  Geometry g;
  g.image_n = image_n;
  g.n_angles = n_angles;
  g.pixel_size = pixel_size;
  return g.resolved();
}

Geometry Geometry::resolved() const {
  Geometry g = *this;
  if (g.n_bins == 0) {
    g.n_bins = static_cast<std::size_t>(
        std::ceil(std::sqrt(2.0) * static_cast<double>(g.image_n)));
  }
  if (g.bin_spacing <= 0.0) g.bin_spacing = g.pixel_size;
  g.validate();
  return g;
}

void Geometry::validate() const {
  if (image_n == 0) throw Error("geometry image_n must be positive");
  if (!(pixel_size > 0)) throw Error("geometry pixel_size must be positive");
  if (n_angles == 0) throw Error("geometry n_angles must be positive");
  if (!(mu_water > 0)) throw Error("geometry mu_water must be positive");
  if (!(bin_spacing > 0)) throw Error("geometry bin_spacing must be positive");
  const double diagonal =
      std::sqrt(2.0) * static_cast<double>(image_n) * pixel_size;
  // Small slack so ceil(sqrt(2) n) bins at unit spacing always qualify.
  if (static_cast<double>(n_bins) * bin_spacing < diagonal - 1e-9) {
    throw Error(fmt::format(
        "detector span {} mm does not cover image diagonal {} mm",
        static_cast<double>(n_bins) * bin_spacing, diagonal));
  }
}

std::vector<double> Geometry::angles() const {
  std::vector<double> out(n_angles);
  for (std::size_t a = 0; a < n_angles; ++a) {
    out[a] = static_cast<double>(a) * std::numbers::pi / static_cast<double>(n_angles);
  }
  return out;
}

Sinogram::Sinogram(std::vector<double> angle_list, std::size_t bins,
                   double spacing)
    : n_angles(angle_list.size()),
      n_bins(bins),
      angles(std::move(angle_list)),
      bin_spacing(spacing),
      data(n_angles * n_bins, 0.0) {
  validate();
}

void Sinogram::validate() const {
  if (angles.size() != n_angles) throw Error("sinogram angle count mismatch");
  if (data.size() != n_angles * n_bins) {
    throw Error("sinogram data length != n_angles * n_bins");
  }
  if (!(bin_spacing > 0)) throw Error("sinogram bin spacing must be positive");
  for (std::size_t a = 0; a < n_angles; ++a) {
    if (!(angles[a] >= 0.0 && angles[a] < std::numbers::pi)) {
      throw Error(fmt::format("sinogram angle {} outside [0, pi)", angles[a]));
    }
    if (a > 0 && !(angles[a] > angles[a - 1])) {
      throw Error("sinogram angles must be strictly increasing");
    }
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw Error("non-finite sinogram value");
  }
}

double hu_to_mu(double hu, double mu_water) {
  return std::max(0.0, mu_water * (1.0 + hu / 1000.0));
}

float mu_to_hu(double mu, double mu_water) {
  const double hu = 1000.0 * (mu / mu_water - 1.0);
  return clamp_hu(static_cast<float>(hu));
}

Image2D hu_to_mu(std::span<const float> slice, std::size_t n,
                 double mu_water) {
  if (slice.size() != n * n) throw Error("hu_to_mu: slice is not n x n");
  Image2D img(n);
  for (std::size_t i = 0; i < slice.size(); ++i) {
    img.data[i] = hu_to_mu(slice[i], mu_water);
  }
  return img;
}

std::vector<float> mu_to_hu(const Image2D& img, double mu_water) {
  std::vector<float> out(img.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(img.data[i])) throw Error("non-finite attenuation");
    out[i] = mu_to_hu(img.data[i], mu_water);
  }
  return out;
}

}  // namespace ctd
