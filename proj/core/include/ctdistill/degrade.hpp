#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ctdistill/projector.hpp"
#include "ctdistill/rng.hpp"
#include "ctdistill/volume.hpp"

namespace ctd {

enum class DegradeKind { kSparseView, kLowDose, kConventional, kMixed };
enum class LowDoseMode { kPaper, kTransmission };
enum class MixedMode { kSequential, kRandomChoice };

const char* to_string(DegradeKind kind);
const char* to_string(LowDoseMode mode);
const char* to_string(MixedMode mode);

struct DegradeSpec {
  DegradeKind kind = DegradeKind::kSparseView;

  // sparse view: keep every k-th angle
  std::size_t stride = 8;

  // low dose
  double alpha = 50.0;
  LowDoseMode mode = LowDoseMode::kPaper;
  double i0 = 1e4;  // photons per bin, transmission mode

  // conventional
  int scale = 2;
  double sigma_gauss = 20.0;  // HU
  double photon_scale = 1.0;

  // mixed
  std::vector<DegradeSpec> components;
  MixedMode mixed_mode = MixedMode::kRandomChoice;

  void validate() const;
};

/// Everything a degradation needs besides the volume and its parameters.
struct DegradeContext {
  Geometry geom;
  FbpFilter filter;
  std::uint64_t seed = 0;
  std::uint64_t case_index = 0;

  /// Stream for one operation on this case; slices use child("slice", z).
  RngStream stream(std::string_view op_tag) const;
};

/// Per slice: project, keep angles 0, k, 2k, ... and reconstruct with FBP
/// weighted for the retained count. k = 1 is the full-view reconstruction.
/// When `measured` is given it receives the retained sinogram of every slice.
VolumeF32 degrade_sparse_view(const VolumeF32& x, std::size_t k,
                              const Geometry& geom, const FbpFilter& filter,
                              std::vector<Sinogram>* measured = nullptr);

/// Poisson noise on the line integrals of one sinogram. Paper mode:
/// Poisson(alpha * p) / alpha. Transmission mode: I ~ Poisson(i0 e^-p),
/// p = -ln(max(I, 0.5) / i0).
Sinogram low_dose_sinogram(const Sinogram& p, const DegradeSpec& spec,
                           CounterRng& rng);

/// Per slice: project, add dose-dependent Poisson noise, reconstruct.
VolumeF32 degrade_low_dose(const VolumeF32& x, const DegradeSpec& spec,
                           const Geometry& geom, const FbpFilter& filter,
                           const RngStream& stream,
                           std::vector<Sinogram>* measured = nullptr);

/// Coarse-grid stage of the conventional degradation for one slice:
/// area-average downsample by `scale`, Gaussian noise in HU, then
/// signal-dependent Poisson noise on (HU + 1024) * photon_scale.
/// Returns a ceil(nx/scale) x ceil(ny/scale) image.
std::vector<float> conventional_coarse(std::span<const float> slice,
                                       std::size_t nx, std::size_t ny,
                                       const DegradeSpec& spec, CounterRng& rng);

/// Bilinear upsampling of a coarse grid back onto nx x ny pixel centres.
std::vector<float> upsample_bilinear(std::span<const float> coarse,
                                     std::size_t cx, std::size_t cy,
                                     std::size_t nx, std::size_t ny, int scale);

/// Image-domain degradation: conventional_coarse then upsample_bilinear,
/// clamped to the HU range.
VolumeF32 degrade_conventional(const VolumeF32& x, const DegradeSpec& spec,
                               const RngStream& stream);

/// Sequential mode threads the volume through every component in order.
/// Random-choice mode applies one component drawn uniformly per case.
VolumeF32 degrade_mixed(const VolumeF32& x, const DegradeSpec& spec,
                        const DegradeContext& ctx);

/// Index of the component random-choice mode picks for ctx.case_index.
std::size_t mixed_choice(const DegradeSpec& spec, const DegradeContext& ctx);

/// Dispatches on spec.kind. `measured` receives the per-slice sinograms the
/// output was reconstructed from, or is cleared when the last step acted in
/// the image domain.
VolumeF32 degrade(const VolumeF32& x, const DegradeSpec& spec,
                  const DegradeContext& ctx,
                  std::vector<Sinogram>* measured = nullptr);

}  // namespace ctd
