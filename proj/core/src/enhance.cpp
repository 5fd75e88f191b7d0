#include "ctdistill/enhance.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <fmt/format.h>

#include "ctdistill/io.hpp"
#include "ctdistill/parallel.hpp"

namespace ctd {

const char* to_string(EnhancerKind kind) {
  switch (kind) {
    case EnhancerKind::kIdentity: return "identity";
    case EnhancerKind::kNlm: return "nlm";
    case EnhancerKind::kTv: return "tv";
    case EnhancerKind::kSirt: return "sirt";
    case EnhancerKind::kExternal: return "external";
  }
  return "?";
}

void EnhancerSpec::validate() const {
  switch (kind) {
    case EnhancerKind::kIdentity:
      break;
    case EnhancerKind::kNlm:
      if (nlm.patch_radius < 0 || nlm.search_radius < 0) {
        throw Error("nlm radii must be >= 0");
      }
      if (!(nlm.h >= 0.0) || !(nlm.sigma >= 0.0)) {
        throw Error("nlm h and sigma must be >= 0");
      }
      break;
    case EnhancerKind::kTv:
      if (!(tv.lambda > 0.0)) throw Error(fmt::format("tv lambda must be > 0, got {}", tv.lambda));
      if (tv.iters < 0) throw Error("tv iters must be >= 0");
      break;
    case EnhancerKind::kSirt:
      if (sirt.iters < 0) throw Error("sirt iters must be >= 0");
      if (!(sirt.relaxation > 0.0 && sirt.relaxation < 2.0)) {
        throw Error(fmt::format("sirt relaxation must be in (0, 2), got {}", sirt.relaxation));
      }
      break;
    case EnhancerKind::kExternal:
      if (external.command.empty()) throw Error("external enhancer needs a command");
      break;
  }
}

EnhancerSpec EnhancerSpec::with_param(const std::string& name, double value) const {
  EnhancerSpec out = *this;
  if (name == "h") {
    out.nlm.h = value;
  } else if (name == "sigma") {
    out.nlm.sigma = value;
  } else if (name == "patch_radius") {
    out.nlm.patch_radius = static_cast<int>(value);
  } else if (name == "search_radius") {
    out.nlm.search_radius = static_cast<int>(value);
  } else if (name == "lambda") {
    out.tv.lambda = value;
  } else if (name == "iters") {
    if (kind == EnhancerKind::kTv) {
      out.tv.iters = static_cast<int>(value);
    } else {
      out.sirt.iters = static_cast<int>(value);
    }
  } else if (name == "relaxation") {
    out.sirt.relaxation = value;
  } else {
    throw Error(fmt::format("unknown enhancer parameter \"{}\"", name));
  }
  out.validate();
  return out;
}

namespace {

std::size_t reflect(long i, std::size_t n) {
  const long len = static_cast<long>(n);
  if (len == 1) return 0;
  while (i < 0 || i >= len) {
    if (i < 0) i = -i;
    if (i >= len) i = 2 * len - 2 - i;
  }
  return static_cast<std::size_t>(i);
}

std::vector<float> nlm_slice(std::span<const float> img, std::size_t nx,
                             std::size_t ny, const NlmParams& p) {
  const long pr = p.patch_radius;
  const long sr = p.search_radius;
  const long pad = pr + sr;
  const std::size_t pw = nx + 2 * static_cast<std::size_t>(pad);
  const std::size_t ph = ny + 2 * static_cast<std::size_t>(pad);
  std::vector<double> padded(pw * ph);
  for (std::size_t q = 0; q < ph; ++q) {
    const std::size_t sy = reflect(static_cast<long>(q) - pad, ny);
    for (std::size_t r = 0; r < pw; ++r) {
      padded[q * pw + r] = img[sy * nx + reflect(static_cast<long>(r) - pad, nx)];
    }
  }

  // Squared differences cover the output grid grown by the patch radius.
  const std::size_t dw = nx + 2 * static_cast<std::size_t>(pr);
  const std::size_t dh = ny + 2 * static_cast<std::size_t>(pr);
  const long side = 2 * pr + 1;
  const double patch_area = static_cast<double>(side * side);
  const double h2 = p.h * p.h;
  const double bias = 2.0 * p.sigma * p.sigma;

  std::vector<double> num(nx * ny, 0.0);
  std::vector<double> den(nx * ny, 0.0);
  std::vector<double> diff(dw * dh);
  std::vector<double> rows(nx * dh);

  for (long dy = -sr; dy <= sr; ++dy) {
    for (long dx = -sr; dx <= sr; ++dx) {
      for (std::size_t q = 0; q < dh; ++q) {
        const std::size_t y = q + static_cast<std::size_t>(sr);
        const std::size_t y2 = static_cast<std::size_t>(static_cast<long>(y) + dy);
        for (std::size_t r = 0; r < dw; ++r) {
          const std::size_t x = r + static_cast<std::size_t>(sr);
          const std::size_t x2 = static_cast<std::size_t>(static_cast<long>(x) + dx);
          const double d = padded[y * pw + x] - padded[y2 * pw + x2];
          diff[q * dw + r] = d * d;
        }
      }
      // Horizontal box sums of width 2pr+1.
      for (std::size_t q = 0; q < dh; ++q) {
        const double* src = diff.data() + q * dw;
        double acc = 0.0;
        for (long k = 0; k < side; ++k) acc += src[k];
        rows[q * nx] = acc;
        for (std::size_t i = 1; i < nx; ++i) {
          acc += src[i + static_cast<std::size_t>(side) - 1] - src[i - 1];
          rows[q * nx + i] = acc;
        }
      }
      // Vertical box sums, then weights.
      for (std::size_t i = 0; i < nx; ++i) {
        double acc = 0.0;
        for (long k = 0; k < side; ++k) acc += rows[static_cast<std::size_t>(k) * nx + i];
        for (std::size_t j = 0; j < ny; ++j) {
          if (j > 0) {
            acc += rows[(j + static_cast<std::size_t>(side) - 1) * nx + i] -
                   rows[(j - 1) * nx + i];
          }
          const double d2 = std::max(acc, 0.0) / patch_area;
          const double excess = std::max(d2 - bias, 0.0);
          double w;
          if (dx == 0 && dy == 0) {
            w = 1.0;
          } else if (h2 > 0.0) {
            w = std::exp(-excess / h2);
          } else {
            w = excess == 0.0 ? 1.0 : 0.0;
          }
          const std::size_t px = i + static_cast<std::size_t>(pad + dx);
          const std::size_t py = j + static_cast<std::size_t>(pad + dy);
          num[j * nx + i] += w * padded[py * pw + px];
          den[j * nx + i] += w;
        }
      }
    }
  }
  std::vector<float> out(nx * ny);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = static_cast<float>(num[k] / den[k]);
  return out;
}

void gradient(std::span<const double> u, std::size_t nx, std::size_t ny,
              std::vector<double>& gx, std::vector<double>& gy) {
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) {
      const std::size_t k = j * nx + i;
      gx[k] = i + 1 < nx ? u[k + 1] - u[k] : 0.0;
      gy[k] = j + 1 < ny ? u[k + nx] - u[k] : 0.0;
    }
  }
}

// Negative adjoint of the forward-difference gradient.
void divergence(const std::vector<double>& px, const std::vector<double>& py,
                std::size_t nx, std::size_t ny, std::vector<double>& div) {
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) {
      const std::size_t k = j * nx + i;
      double dx;
      if (nx == 1) {
        dx = 0.0;
      } else if (i == 0) {
        dx = px[k];
      } else if (i + 1 == nx) {
        dx = -px[k - 1];
      } else {
        dx = px[k] - px[k - 1];
      }
      double dy;
      if (ny == 1) {
        dy = 0.0;
      } else if (j == 0) {
        dy = py[k];
      } else if (j + 1 == ny) {
        dy = -py[k - nx];
      } else {
        dy = py[k] - py[k - nx];
      }
      div[k] = dx + dy;
    }
  }
}

}  // namespace

VolumeF32 enhance_nlm(const VolumeF32& x, const NlmParams& params) {
  EnhancerSpec spec;
  spec.kind = EnhancerKind::kNlm;
  spec.nlm = params;
  spec.validate();
  const auto& d = x.dims();
  std::vector<float> values(d.count());
  parallel_for(d.nz, [&](std::size_t z) {
    const auto out = nlm_slice(x.slice(z), d.nx, d.ny, params);
    std::copy(out.begin(), out.end(), values.begin() + static_cast<long>(z * d.slice_count()));
  });
  return VolumeF32(d, x.spacing(), std::move(values));
}

double tv_objective(std::span<const double> u, std::span<const double> f,
                    std::size_t nx, std::size_t ny, double lambda) {
  double fidelity = 0.0;
  double tv = 0.0;
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) {
      const std::size_t k = j * nx + i;
      const double r = u[k] - f[k];
      fidelity += r * r;
      const double gx = i + 1 < nx ? u[k + 1] - u[k] : 0.0;
      const double gy = j + 1 < ny ? u[k + nx] - u[k] : 0.0;
      tv += std::sqrt(gx * gx + gy * gy);
    }
  }
  return 0.5 * fidelity + lambda * tv;
}

VolumeF32 enhance_tv(const VolumeF32& x, const TvParams& params,
                     std::vector<double>* objective) {
  if (!(params.lambda > 0.0)) throw Error("tv lambda must be > 0");
  const auto& d = x.dims();
  const std::size_t n = d.slice_count();
  constexpr double kTau = 0.125;
  const auto iters = static_cast<std::size_t>(std::max(params.iters, 0));
  std::vector<std::vector<double>> per_slice_obj(d.nz);
  std::vector<float> values(d.count());

  parallel_for(d.nz, [&](std::size_t z) {
    const auto src = x.slice(z);
    std::vector<double> f(src.begin(), src.end());
    std::vector<double> px(n, 0.0), py(n, 0.0), div(n, 0.0), g(n), gx(n), gy(n);
    std::vector<double> u = f;
    auto& log = per_slice_obj[z];
    if (objective) log.push_back(tv_objective(u, f, d.nx, d.ny, params.lambda));
    for (std::size_t it = 0; it < iters; ++it) {
      for (std::size_t k = 0; k < n; ++k) g[k] = div[k] - f[k] / params.lambda;
      gradient(g, d.nx, d.ny, gx, gy);
      for (std::size_t k = 0; k < n; ++k) {
        const double norm = std::sqrt(gx[k] * gx[k] + gy[k] * gy[k]);
        px[k] = (px[k] + kTau * gx[k]) / (1.0 + kTau * norm);
        py[k] = (py[k] + kTau * gy[k]) / (1.0 + kTau * norm);
      }
      divergence(px, py, d.nx, d.ny, div);
      if (objective) {
        for (std::size_t k = 0; k < n; ++k) u[k] = f[k] - params.lambda * div[k];
        log.push_back(tv_objective(u, f, d.nx, d.ny, params.lambda));
      }
    }
    for (std::size_t k = 0; k < n; ++k) {
      values[z * n + k] = static_cast<float>(f[k] - params.lambda * div[k]);
    }
  });

  if (objective) {
    objective->assign(iters + 1, 0.0);
    for (const auto& log : per_slice_obj) {
      for (std::size_t k = 0; k < log.size(); ++k) (*objective)[k] += log[k];
    }
  }
  return VolumeF32(d, x.spacing(), std::move(values));
}

SirtResult enhance_sirt(const Sinogram& s, const SirtParams& params,
                        const Geometry& geom) {
  if (!(params.relaxation > 0.0 && params.relaxation < 2.0)) {
    throw Error(fmt::format("sirt relaxation must be in (0, 2), got {}", params.relaxation));
  }
  const std::size_t n = geom.image_n;
  Image2D ones(n);
  std::fill(ones.data.begin(), ones.data.end(), 1.0);
  const Sinogram row_sums = radon_forward(ones, geom, s.angles);
  Sinogram unit = s;
  std::fill(unit.data.begin(), unit.data.end(), 1.0);
  const Image2D col_sums = backproject(unit, geom);

  std::vector<double> row_inv(row_sums.data.size());
  for (std::size_t k = 0; k < row_inv.size(); ++k) {
    row_inv[k] = row_sums.data[k] > 1e-12 ? 1.0 / row_sums.data[k] : 0.0;
  }
  std::vector<double> col_inv(col_sums.data.size());
  for (std::size_t k = 0; k < col_inv.size(); ++k) {
    col_inv[k] = col_sums.data[k] > 1e-12 ? 1.0 / col_sums.data[k] : 0.0;
  }

  SirtResult result;
  result.attenuation = Image2D(n);
  Image2D& x = result.attenuation;
  int growth = 0;
  for (int it = 0; it <= params.iters; ++it) {
    Sinogram r = radon_forward(x, geom, s.angles);
    double norm2 = 0.0;
    for (std::size_t k = 0; k < r.data.size(); ++k) {
      r.data[k] = s.data[k] - r.data[k];
      norm2 += r.data[k] * r.data[k];
    }
    const double residual = std::sqrt(norm2);
    if (!result.residuals.empty() && residual > result.residuals.back()) {
      if (++growth >= 3) {
        throw Error(fmt::format(
            "sirt diverged: residual grew 3 consecutive iterations with relaxation omega={}",
            params.relaxation));
      }
    } else {
      growth = 0;
    }
    result.residuals.push_back(residual);
    if (it == params.iters) break;
    for (std::size_t k = 0; k < r.data.size(); ++k) r.data[k] *= row_inv[k];
    const Image2D update = backproject(r, geom);
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      x.data[k] += params.relaxation * col_inv[k] * update.data[k];
    }
  }
  const auto ps = static_cast<float>(geom.pixel_size);
  result.volume = VolumeF32({n, n, 1}, {ps, ps, ps}, mu_to_hu(x, geom.mu_water));
  return result;
}

VolumeF32 enhance_external(const VolumeF32& x, const ExternalParams& params,
                           const std::filesystem::path& exchange_dir) {
  if (params.command.empty()) throw Error("external enhancer needs a command");
  std::filesystem::create_directories(exchange_dir);
  const auto in_path = exchange_dir / "in.ctk";
  const auto out_path = exchange_dir / "out.ctk";
  std::filesystem::remove(out_path);
  write_volume(x, in_path);

  std::string cmd = params.command;
  auto replace_all = [&cmd](const std::string& key, const std::string& value) {
    for (std::size_t pos = cmd.find(key); pos != std::string::npos;
         pos = cmd.find(key, pos + value.size())) {
      cmd.replace(pos, key.size(), value);
    }
  };
  replace_all("{in}", in_path.string());
  replace_all("{out}", out_path.string());

  const int status = std::system(cmd.c_str());
  if (status == -1) throw Error("external enhancer: could not start shell");
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128;
  if (code != 0) {
    throw Error(fmt::format("external enhancer exited with status {}", code));
  }
  if (!std::filesystem::exists(out_path)) {
    throw Error(fmt::format("external enhancer wrote no {}", out_path.string()));
  }
  VolumeF32 out;
  try {
    out = read_hu_volume(out_path);
  } catch (const FormatError& e) {
    throw Error(fmt::format("external enhancer output rejected: {}", e.what()));
  }
  if (out.dims() != x.dims()) {
    throw Error(fmt::format("external enhancer dims mismatch: returned {} for input {}",
                            out.dims().str(), x.dims().str()));
  }
  return out;
}

VolumeF32 enhance(const EnhancerSpec& spec, const EnhanceInputs& inputs) {
  spec.validate();
  if (inputs.degraded == nullptr) throw Error("enhance: no input volume");
  const VolumeF32& x = *inputs.degraded;
  switch (spec.kind) {
    case EnhancerKind::kIdentity:
      return x;
    case EnhancerKind::kNlm:
      return enhance_nlm(x, spec.nlm);
    case EnhancerKind::kTv:
      return enhance_tv(x, spec.tv);
    case EnhancerKind::kSirt: {
      if (inputs.geom == nullptr) throw Error("sirt enhancer needs a geometry");
      const Geometry& geom = *inputs.geom;
      VolumeF32 out(x.dims(), x.spacing());
      for (std::size_t z = 0; z < x.dims().nz; ++z) {
        const Sinogram s = inputs.sinograms != nullptr && z < inputs.sinograms->size()
                               ? (*inputs.sinograms)[z]
                               : sinogram_of(x, z, geom);
        const SirtResult r = enhance_sirt(s, spec.sirt, geom);
        std::copy(r.volume.data().begin(), r.volume.data().end(), out.slice(z).begin());
      }
      return out;
    }
    case EnhancerKind::kExternal:
      return enhance_external(x, spec.external, inputs.exchange_dir);
  }
  throw Error("unknown enhancer kind");
}

}  // namespace ctd
