#include "ctdistill/degrade.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace ctd {

const char* to_string(DegradeKind kind) {
  switch (kind) {
    case DegradeKind::kSparseView: return "sparse_view";
    case DegradeKind::kLowDose: return "low_dose";
    case DegradeKind::kConventional: return "conventional";
    case DegradeKind::kMixed: return "mixed";
  }
  return "?";
}

const char* to_string(LowDoseMode mode) {
  return mode == LowDoseMode::kPaper ? "paper" : "transmission";
}

const char* to_string(MixedMode mode) {
  return mode == MixedMode::kSequential ? "sequential" : "random";
}

void DegradeSpec::validate() const {
  switch (kind) {
    case DegradeKind::kSparseView:
      if (stride < 1) throw Error("sparse-view stride must be >= 1");
      break;
    case DegradeKind::kLowDose:
      if (mode == LowDoseMode::kPaper && !(alpha > 0.0 && std::isfinite(alpha))) {
        throw Error(fmt::format("low-dose alpha must be > 0, got {}", alpha));
      }
      if (mode == LowDoseMode::kTransmission && !(i0 >= 10.0 && std::isfinite(i0))) {
        throw Error(fmt::format("low-dose i0 must be >= 10, got {}", i0));
      }
      break;
    case DegradeKind::kConventional:
      if (scale < 2 || scale > 4) {
        throw Error(fmt::format("conventional scale must be 2, 3 or 4, got {}", scale));
      }
      if (!(sigma_gauss >= 0.0)) throw Error("sigma_gauss must be >= 0");
      if (!(photon_scale > 0.0)) throw Error("photon_scale must be > 0");
      break;
    case DegradeKind::kMixed:
      if (components.empty()) throw Error("mixed degradation needs components");
      for (const auto& c : components) c.validate();
      break;
  }
}

RngStream DegradeContext::stream(std::string_view op_tag) const {
  return RngStream::derive(seed, op_tag, case_index, 0);
}

VolumeF32 degrade_sparse_view(const VolumeF32& x, std::size_t k,
                              const Geometry& geom, const FbpFilter& filter,
                              std::vector<Sinogram>* measured) {
  if (k < 1) throw Error("sparse-view stride must be >= 1");
  const std::size_t kept = (geom.n_angles + k - 1) / k;
  if (kept < 2) {
    throw Error(fmt::format("sparse view keeps {} of {} angles at stride {}; need >= 2",
                            kept, geom.n_angles, k));
  }
  VolumeF32 out(x.dims(), x.spacing());
  if (measured) measured->clear();
  for (std::size_t z = 0; z < x.dims().nz; ++z) {
    Sinogram sparse = subsample_angles(sinogram_of(x, z, geom), k);
    const VolumeF32 rec = fbp(sparse, filter, geom);
    std::copy(rec.data().begin(), rec.data().end(), out.slice(z).begin());
    if (measured) measured->push_back(std::move(sparse));
  }
  return out;
}

Sinogram low_dose_sinogram(const Sinogram& p, const DegradeSpec& spec,
                           CounterRng& rng) {
  Sinogram out = p;
  if (spec.mode == LowDoseMode::kPaper) {
    for (auto& v : out.data) {
      v = rng.poisson(spec.alpha * std::max(v, 0.0)) / spec.alpha;
    }
  } else {
    for (auto& v : out.data) {
      const double counts = rng.poisson(spec.i0 * std::exp(-v));
      v = -std::log(std::max(counts, 0.5) / spec.i0);
    }
  }
  return out;
}

VolumeF32 degrade_low_dose(const VolumeF32& x, const DegradeSpec& spec,
                           const Geometry& geom, const FbpFilter& filter,
                           const RngStream& stream,
                           std::vector<Sinogram>* measured) {
  DegradeSpec checked = spec;
  checked.kind = DegradeKind::kLowDose;
  checked.validate();
  VolumeF32 out(x.dims(), x.spacing());
  if (measured) measured->clear();
  for (std::size_t z = 0; z < x.dims().nz; ++z) {
    CounterRng rng(stream.child("slice", z));
    Sinogram noisy = low_dose_sinogram(sinogram_of(x, z, geom), spec, rng);
    const VolumeF32 rec = fbp(noisy, filter, geom);
    std::copy(rec.data().begin(), rec.data().end(), out.slice(z).begin());
    if (measured) measured->push_back(std::move(noisy));
  }
  return out;
}

std::vector<float> conventional_coarse(std::span<const float> slice,
                                       std::size_t nx, std::size_t ny,
                                       const DegradeSpec& spec, CounterRng& rng) {
  const auto s = static_cast<std::size_t>(spec.scale);
  const std::size_t cx = (nx + s - 1) / s;
  const std::size_t cy = (ny + s - 1) / s;
  std::vector<float> coarse(cx * cy);
  for (std::size_t J = 0; J < cy; ++J) {
    for (std::size_t I = 0; I < cx; ++I) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t j = J * s; j < std::min(ny, (J + 1) * s); ++j) {
        for (std::size_t i = I * s; i < std::min(nx, (I + 1) * s); ++i) {
          sum += slice[j * nx + i];
          ++count;
        }
      }
      double v = sum / static_cast<double>(count);
      v = rng.normal(v, spec.sigma_gauss);
      const double shifted = std::max(0.0, v + 1024.0);
      v = rng.poisson(shifted * spec.photon_scale) / spec.photon_scale - 1024.0;
      coarse[J * cx + I] = static_cast<float>(v);
    }
  }
  return coarse;
}

std::vector<float> upsample_bilinear(std::span<const float> coarse,
                                     std::size_t cx, std::size_t cy,
                                     std::size_t nx, std::size_t ny, int scale) {
  const double s = scale;
  const double offset = (s - 1.0) / 2.0;
  auto axis = [&](std::size_t i, std::size_t c, std::size_t& i0, double& f) {
    const double u = std::clamp((static_cast<double>(i) - offset) / s, 0.0,
                                static_cast<double>(c - 1));
    i0 = std::min(static_cast<std::size_t>(u), c >= 2 ? c - 2 : 0);
    f = c >= 2 ? u - static_cast<double>(i0) : 0.0;
  };
  std::vector<float> out(nx * ny);
  for (std::size_t j = 0; j < ny; ++j) {
    std::size_t j0;
    double fy;
    axis(j, cy, j0, fy);
    const std::size_t j1 = std::min(j0 + 1, cy - 1);
    for (std::size_t i = 0; i < nx; ++i) {
      std::size_t i0;
      double fx;
      axis(i, cx, i0, fx);
      const std::size_t i1 = std::min(i0 + 1, cx - 1);
      const double top = (1.0 - fx) * coarse[j0 * cx + i0] + fx * coarse[j0 * cx + i1];
      const double bottom = (1.0 - fx) * coarse[j1 * cx + i0] + fx * coarse[j1 * cx + i1];
      out[j * nx + i] = static_cast<float>((1.0 - fy) * top + fy * bottom);
    }
  }
  return out;
}

VolumeF32 degrade_conventional(const VolumeF32& x, const DegradeSpec& spec,
                               const RngStream& stream) {
  DegradeSpec checked = spec;
  checked.kind = DegradeKind::kConventional;
  checked.validate();
  const auto& d = x.dims();
  const auto s = static_cast<std::size_t>(spec.scale);
  const std::size_t cx = (d.nx + s - 1) / s;
  const std::size_t cy = (d.ny + s - 1) / s;
  std::vector<float> values(d.count());
  for (std::size_t z = 0; z < d.nz; ++z) {
    CounterRng rng(stream.child("slice", z));
    const auto coarse = conventional_coarse(x.slice(z), d.nx, d.ny, spec, rng);
    const auto fine = upsample_bilinear(coarse, cx, cy, d.nx, d.ny, spec.scale);
    std::copy(fine.begin(), fine.end(), values.begin() + static_cast<long>(z * d.slice_count()));
  }
  return VolumeF32(d, x.spacing(), std::move(values));
}

namespace {

std::size_t pick_component(const DegradeSpec& spec, const RngStream& stream) {
  CounterRng rng(stream.child("choice", 0));
  const auto n = spec.components.size();
  return std::min(n - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)));
}

VolumeF32 degrade_with_stream(const VolumeF32& x, const DegradeSpec& spec,
                              const DegradeContext& ctx, const RngStream& stream,
                              std::vector<Sinogram>* measured);

VolumeF32 mixed_with_stream(const VolumeF32& x, const DegradeSpec& spec,
                            const DegradeContext& ctx, const RngStream& stream,
                            std::vector<Sinogram>* measured) {
  if (spec.mixed_mode == MixedMode::kRandomChoice) {
    const std::size_t pick = pick_component(spec, stream);
    return degrade_with_stream(x, spec.components[pick], ctx,
                               stream.child(to_string(spec.components[pick].kind), pick),
                               measured);
  }
  VolumeF32 current = x;
  for (std::size_t i = 0; i < spec.components.size(); ++i) {
    current = degrade_with_stream(current, spec.components[i], ctx,
                                  stream.child(to_string(spec.components[i].kind), i),
                                  measured);
  }
  return current;
}

VolumeF32 degrade_with_stream(const VolumeF32& x, const DegradeSpec& spec,
                              const DegradeContext& ctx, const RngStream& stream,
                              std::vector<Sinogram>* measured) {
  switch (spec.kind) {
    case DegradeKind::kSparseView:
      return degrade_sparse_view(x, spec.stride, ctx.geom, ctx.filter, measured);
    case DegradeKind::kLowDose:
      return degrade_low_dose(x, spec, ctx.geom, ctx.filter, stream, measured);
    case DegradeKind::kConventional:
      if (measured) measured->clear();
      return degrade_conventional(x, spec, stream);
    case DegradeKind::kMixed:
      return mixed_with_stream(x, spec, ctx, stream, measured);
  }
  throw Error("unknown degradation kind");
}

}  // namespace

VolumeF32 degrade_mixed(const VolumeF32& x, const DegradeSpec& spec,
                        const DegradeContext& ctx) {
  if (spec.components.empty()) throw Error("mixed degradation needs components");
  spec.validate();
  return mixed_with_stream(x, spec, ctx, ctx.stream("degrade.mixed"), nullptr);
}

std::size_t mixed_choice(const DegradeSpec& spec, const DegradeContext& ctx) {
  if (spec.components.empty()) throw Error("mixed degradation needs components");
  return pick_component(spec, ctx.stream("degrade.mixed"));
}

VolumeF32 degrade(const VolumeF32& x, const DegradeSpec& spec,
                  const DegradeContext& ctx, std::vector<Sinogram>* measured) {
  spec.validate();
  const std::string tag = fmt::format("degrade.{}", to_string(spec.kind));
  return degrade_with_stream(x, spec, ctx, ctx.stream(tag), measured);
}

}  // namespace ctd
