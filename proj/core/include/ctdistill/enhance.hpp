#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "ctdistill/projector.hpp"
#include "ctdistill/volume.hpp"

namespace ctd {

enum class EnhancerKind { kIdentity, kNlm, kTv, kSirt, kExternal };

const char* to_string(EnhancerKind kind);

struct NlmParams {
  int patch_radius = 2;
  int search_radius = 5;
  double h = 40.0;      // filtering strength, HU
  double sigma = 0.0;   // noise compensation, HU; 0 is classic NLM
};

struct TvParams {
  double lambda = 30.0;
  int iters = 100;
};

struct SirtParams {
  int iters = 50;
  double relaxation = 1.0;  // omega, (0, 2)
};

struct ExternalParams {
  /// Shell command; "{in}" and "{out}" are replaced by the exchange paths.
  std::string command;
};

struct EnhancerSpec {
  EnhancerKind kind = EnhancerKind::kIdentity;
  NlmParams nlm;
  TvParams tv;
  SirtParams sirt;
  ExternalParams external;

  void validate() const;

  /// Copy with one named numeric parameter replaced ("h", "sigma",
  /// "patch_radius", "search_radius", "lambda", "iters", "relaxation").
  EnhancerSpec with_param(const std::string& name, double value) const;
};

/// Non-local means per slice with mirror padding. Weights are
/// exp(-max(d2 - 2 sigma^2, 0) / h^2), d2 the mean squared patch difference.
VolumeF32 enhance_nlm(const VolumeF32& x, const NlmParams& params);

/// ROF denoising, min 0.5 |u - x|^2 + lambda TV(u) per slice, by Chambolle's
/// dual projection with a fixed iteration count. When `objective` is given it
/// receives the primal objective of the initial point and after every
/// iteration (summed over slices).
VolumeF32 enhance_tv(const VolumeF32& x, const TvParams& params,
                     std::vector<double>* objective = nullptr);

/// Primal ROF objective with isotropic forward-difference TV.
double tv_objective(std::span<const double> u, std::span<const double> f,
                    std::size_t nx, std::size_t ny, double lambda);

struct SirtResult {
  Image2D attenuation;
  VolumeF32 volume;               // HU, clamped
  std::vector<double> residuals;  // |A x_k - p|, k = 0..iters
};

/// x_{k+1} = x_k + omega C A^T R (p - A x_k) from x_0 = 0, with R and C the
/// inverse row and column sums of the projector. Throws if the residual
/// grows three iterations in a row.
SirtResult enhance_sirt(const Sinogram& s, const SirtParams& params,
                        const Geometry& geom);

/// Writes x to <exchange_dir>/in.ctk, runs the command and reads
/// <exchange_dir>/out.ctk back. Validates dims and finiteness.
VolumeF32 enhance_external(const VolumeF32& x, const ExternalParams& params,
                           const std::filesystem::path& exchange_dir);

struct EnhanceInputs {
  const VolumeF32* degraded = nullptr;
  /// Measured sinograms per slice, when the degradation produced them. SIRT
  /// reprojects the degraded volume otherwise.
  const std::vector<Sinogram>* sinograms = nullptr;
  const Geometry* geom = nullptr;
  std::filesystem::path exchange_dir;
};

VolumeF32 enhance(const EnhancerSpec& spec, const EnhanceInputs& inputs);

}  // namespace ctd
