#include "ctdistill/projector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>

#include <fftw3.h>
#include <fmt/format.h>

#include "ctdistill/parallel.hpp"

namespace ctd {

namespace {

constexpr double kPi = std::numbers::pi;

struct AngleTrig {
  double c, s, m;  // cos, sin, max(|cos|, |sin|)
};

std::vector<AngleTrig> trig_table(std::span<const double> angles) {
  std::vector<AngleTrig> out(angles.size());
  for (std::size_t a = 0; a < angles.size(); ++a) {
    const double c = std::cos(angles[a]);
    const double s = std::sin(angles[a]);
    out[a] = {c, s, std::max(std::abs(c), std::abs(s))};
  }
  return out;
}

void check_image(const Image2D& img, const Geometry& geom) {
  if (img.n != geom.image_n || img.data.size() != img.n * img.n) {
    throw Error(fmt::format("geometry mismatch: image is {}x{}, geometry expects {}",
                            img.n, img.n, geom.image_n));
  }
}

void check_sinogram(const Sinogram& s, const Geometry& geom) {
  if (s.n_bins != geom.n_bins || std::abs(s.bin_spacing - geom.bin_spacing) > 1e-6) {
    throw Error(fmt::format(
        "geometry mismatch: sinogram has {} bins at {} mm, geometry expects {} at {} mm",
        s.n_bins, s.bin_spacing, geom.n_bins, geom.bin_spacing));
  }
  if (s.data.size() != s.n_angles * s.n_bins || s.angles.size() != s.n_angles) {
    throw Error("sinogram storage does not match its dimensions");
  }
}

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};
struct PlanDeleter {
  void operator()(fftw_plan p) const {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(p);
  }
};
using PlanPtr = std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDeleter>;

std::size_t padded_length(std::size_t n_bins) {
  return std::bit_ceil(std::max<std::size_t>(2 * n_bins, 2));
}

// Frequency response of the band-limited ramp kernel times the window, for
// bins 0..L/2.
std::vector<double> ramp_response(std::size_t length, double spacing,
                                  const FbpFilter& filter) {
  const std::size_t half = length / 2;
  std::unique_ptr<double, FftwDeleter> kernel(
      static_cast<double*>(fftw_malloc(sizeof(double) * length)));
  std::unique_ptr<fftw_complex, FftwDeleter> spectrum(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (half + 1))));
  double* h = kernel.get();
  for (std::size_t i = 0; i < length; ++i) {
    const long k = i <= half ? static_cast<long>(i)
                             : static_cast<long>(i) - static_cast<long>(length);
    if (k == 0) {
      h[i] = 1.0 / (4.0 * spacing * spacing);
    } else if (k % 2 != 0) {
      const double kd = static_cast<double>(k);
      h[i] = -1.0 / (kPi * kPi * kd * kd * spacing * spacing);
    } else {
      h[i] = 0.0;
    }
  }
  PlanPtr plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan.reset(fftw_plan_dft_r2c_1d(static_cast<int>(length), h, spectrum.get(),
                                    FFTW_ESTIMATE));
  }
  fftw_execute(plan.get());

  std::vector<double> response(half + 1);
  for (std::size_t k = 0; k <= half; ++k) {
    // Symmetric kernel: the spectrum is real up to rounding.
    const double f = static_cast<double>(k) / static_cast<double>(length);
    const double fc = 0.5 * filter.cutoff;
    double window = f <= fc + 1e-12 ? 1.0 : 0.0;
    if (filter.kind == FbpFilter::Kind::kHann && window > 0.0) {
      window = 0.5 * (1.0 + std::cos(kPi * f / fc));
    }
    response[k] = spectrum.get()[k][0] * window;
  }
  return response;
}

}  // namespace

void FbpFilter::validate() const {
  if (!(cutoff > 0.0 && cutoff <= 1.0)) {
    throw Error(fmt::format("filter cutoff must be in (0, 1], got {}", cutoff));
  }
}

Sinogram radon_forward(const Image2D& slice, const Geometry& geom) {
  const auto angles = geom.angles();
  return radon_forward(slice, geom, angles);
}

Sinogram radon_forward(const Image2D& slice, const Geometry& geom,
                       std::span<const double> angles) {
  check_image(slice, geom);
  Sinogram out(std::vector<double>(angles.begin(), angles.end()), geom.n_bins,
               geom.bin_spacing);
  const auto trig = trig_table(angles);
  const std::size_t n = geom.image_n;
  const double ps = geom.pixel_size;
  const double ci = (static_cast<double>(n) - 1.0) / 2.0;
  const double cb = (static_cast<double>(geom.n_bins) - 1.0) / 2.0;
  const long last = static_cast<long>(n) - 1;

  parallel_for(angles.size(), [&](std::size_t a) {
    const auto [c, s, m] = trig[a];
    auto row = out.row(a);
    const bool step_rows = std::abs(c) >= std::abs(s);
    // Along the ray the interpolated index is affine in the stepping index
    // k: u(k) = u0 + k * du, with |du| <= 1.
    const double du = step_rows ? s / c : c / s;
    // Row-major pixel stride along the interpolated axis and per step.
    const std::size_t inner = step_rows ? 1 : n;
    const std::size_t outer = step_rows ? n : 1;
    for (std::size_t b = 0; b < geom.n_bins; ++b) {
      const double t = (static_cast<double>(b) - cb) * geom.bin_spacing;
      const double u0 = step_rows ? t / (c * ps) - ci * s / c + ci
                                  : ci - t / (s * ps) - ci * c / s;
      // Steps whose u lies in (-1, n) can touch the image.
      long k_lo = 0;
      long k_hi = last;
      if (du != 0.0) {
        const double ka = (-1.0 - u0) / du;
        const double kb = (static_cast<double>(n) - u0) / du;
        k_lo = std::max(0L, static_cast<long>(std::floor(std::min(ka, kb))));
        k_hi = std::min(last, static_cast<long>(std::ceil(std::max(ka, kb))));
      } else if (u0 <= -1.0 || u0 >= static_cast<double>(n)) {
        k_hi = -1;
      }
      double acc = 0.0;
      for (long k = k_lo; k <= k_hi; ++k) {
        const double u = u0 + static_cast<double>(k) * du;
        const double fl = std::floor(u);
        const long i0 = static_cast<long>(fl);
        if (i0 < -1 || i0 > last) continue;
        const double f = u - fl;
        const double* base = slice.data.data() + static_cast<std::size_t>(k) * outer;
        if (i0 >= 0) acc += (1.0 - f) * base[static_cast<std::size_t>(i0) * inner];
        if (i0 + 1 <= last) acc += f * base[static_cast<std::size_t>(i0 + 1) * inner];
      }
      row[b] = acc * ps / m;
    }
  });
  return out;
}

Image2D backproject(const Sinogram& s, const Geometry& geom) {
  check_sinogram(s, geom);
  const std::size_t n = geom.image_n;
  const double ps = geom.pixel_size;
  const double ds = s.bin_spacing;
  const double ci = (static_cast<double>(n) - 1.0) / 2.0;
  const double cb = (static_cast<double>(s.n_bins) - 1.0) / 2.0;
  const long last_bin = static_cast<long>(s.n_bins) - 1;
  const auto trig = trig_table(s.angles);
  Image2D img(n);

  parallel_for(n, [&](std::size_t j) {
    const double y = (ci - static_cast<double>(j)) * ps;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = (static_cast<double>(i) - ci) * ps;
      double acc = 0.0;
      for (std::size_t a = 0; a < s.n_angles; ++a) {
        const auto [c, sn, m] = trig[a];
        const double tau = x * c + y * sn;
        const double width = m * ps;
        const long lo = std::max(0L, static_cast<long>(std::ceil((tau - width) / ds + cb)));
        const long hi = std::min(last_bin, static_cast<long>(std::floor((tau + width) / ds + cb)));
        const auto row = s.row(a);
        for (long b = lo; b <= hi; ++b) {
          const double t = (static_cast<double>(b) - cb) * ds;
          const double w = 1.0 - std::abs(t - tau) / width;
          if (w > 0.0) acc += w * row[static_cast<std::size_t>(b)] * ps / m;
        }
      }
      img.at(i, j) = acc;
    }
  });
  return img;
}

Sinogram filter_projections(const Sinogram& s, const FbpFilter& filter) {
  filter.validate();
  const std::size_t length = padded_length(s.n_bins);
  const std::size_t half = length / 2;
  const auto response = ramp_response(length, s.bin_spacing, filter);

  Sinogram out = s;
  if (s.n_angles == 0) return out;
  const std::size_t rows = s.n_angles;
  std::unique_ptr<double, FftwDeleter> buffer(
      static_cast<double*>(fftw_malloc(sizeof(double) * length * rows)));
  std::unique_ptr<fftw_complex, FftwDeleter> spectrum(static_cast<fftw_complex*>(
      fftw_malloc(sizeof(fftw_complex) * (half + 1) * rows)));
  PlanPtr forward;
  PlanPtr inverse;
  {
    std::lock_guard lock(fftw_planner_mutex());
    const int len = static_cast<int>(length);
    forward.reset(fftw_plan_many_dft_r2c(1, &len, static_cast<int>(rows), buffer.get(),
                                         nullptr, 1, len, spectrum.get(), nullptr, 1,
                                         static_cast<int>(half + 1), FFTW_ESTIMATE));
    inverse.reset(fftw_plan_many_dft_c2r(1, &len, static_cast<int>(rows), spectrum.get(),
                                         nullptr, 1, static_cast<int>(half + 1),
                                         buffer.get(), nullptr, 1, len, FFTW_ESTIMATE));
  }
  double* buf = buffer.get();
  std::fill(buf, buf + length * rows, 0.0);
  for (std::size_t a = 0; a < rows; ++a) {
    const auto row = s.row(a);
    std::copy(row.begin(), row.end(), buf + a * length);
  }
  fftw_execute(forward.get());
  fftw_complex* spec = spectrum.get();
  for (std::size_t a = 0; a < rows; ++a) {
    for (std::size_t k = 0; k <= half; ++k) {
      spec[a * (half + 1) + k][0] *= response[k];
      spec[a * (half + 1) + k][1] *= response[k];
    }
  }
  fftw_execute(inverse.get());
  const double scale = s.bin_spacing / static_cast<double>(length);
  for (std::size_t a = 0; a < rows; ++a) {
    auto row = out.row(a);
    for (std::size_t b = 0; b < s.n_bins; ++b) row[b] = buf[a * length + b] * scale;
  }
  return out;
}

Image2D fbp_attenuation(const Sinogram& s, const FbpFilter& filter,
                        const Geometry& geom) {
  check_sinogram(s, geom);
  if (s.n_angles < 2) {
    throw Error(fmt::format("fbp needs at least 2 angles, got {}", s.n_angles));
  }
  const Sinogram q = filter_projections(s, filter);
  const std::size_t n = geom.image_n;
  const double ps = geom.pixel_size;
  const double ds = s.bin_spacing;
  const double ci = (static_cast<double>(n) - 1.0) / 2.0;
  const double cb = (static_cast<double>(s.n_bins) - 1.0) / 2.0;
  const long last_bin = static_cast<long>(s.n_bins) - 1;
  const auto trig = trig_table(s.angles);
  const double weight = kPi / static_cast<double>(s.n_angles);
  Image2D img(n);

  parallel_for(n, [&](std::size_t j) {
    const double y = (ci - static_cast<double>(j)) * ps;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = (static_cast<double>(i) - ci) * ps;
      double acc = 0.0;
      for (std::size_t a = 0; a < s.n_angles; ++a) {
        const double u = (x * trig[a].c + y * trig[a].s) / ds + cb;
        const double fl = std::floor(u);
        const long b0 = static_cast<long>(fl);
        if (b0 < -1 || b0 > last_bin) continue;
        const double f = u - fl;
        const auto row = q.row(a);
        if (b0 >= 0) acc += (1.0 - f) * row[static_cast<std::size_t>(b0)];
        if (b0 + 1 <= last_bin) acc += f * row[static_cast<std::size_t>(b0 + 1)];
      }
      img.at(i, j) = acc * weight;
    }
  });
  return img;
}

VolumeF32 fbp(const Sinogram& s, const FbpFilter& filter, const Geometry& geom) {
  const Image2D mu = fbp_attenuation(s, filter, geom);
  const auto ps = static_cast<float>(geom.pixel_size);
  return VolumeF32({geom.image_n, geom.image_n, 1}, {ps, ps, ps},
                   mu_to_hu(mu, geom.mu_water));
}

Sinogram sinogram_of(const VolumeF32& v, std::size_t z, const Geometry& geom) {
  const auto& d = v.dims();
  if (d.nx != geom.image_n || d.ny != geom.image_n) {
    throw Error(fmt::format("geometry mismatch: slice {}x{} vs image_n {}", d.nx,
                            d.ny, geom.image_n));
  }
  if (z >= d.nz) throw Error("slice index out of range");
  return radon_forward(hu_to_mu(v.slice(z), geom.image_n, geom.mu_water), geom);
}

std::vector<Sinogram> sinogram_of(const VolumeF32& v, const Geometry& geom) {
  std::vector<Sinogram> out;
  out.reserve(v.dims().nz);
  for (std::size_t z = 0; z < v.dims().nz; ++z) out.push_back(sinogram_of(v, z, geom));
  return out;
}

Sinogram subsample_angles(const Sinogram& s, std::size_t k) {
  if (k == 0) throw Error("angle stride must be positive");
  std::vector<double> angles;
  for (std::size_t a = 0; a < s.n_angles; a += k) angles.push_back(s.angles[a]);
  Sinogram out(std::move(angles), s.n_bins, s.bin_spacing);
  for (std::size_t r = 0; r < out.n_angles; ++r) {
    const auto src = s.row(r * k);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace ctd
