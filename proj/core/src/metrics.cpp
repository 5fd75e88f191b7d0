#include "ctdistill/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ctdistill/phantom.hpp"
#include "ctdistill/segment.hpp"

namespace ctd {

namespace {

void check_same(const Dims& a, const Dims& b, const char* what) {
  if (a != b) {
    throw Error(fmt::format("{}: dims mismatch {} vs {}", what, a.str(), b.str()));
  }
}

}  // namespace

double psnr(std::span<const float> a, std::span<const float> b, double data_range) {
  if (a.size() != b.size()) {
    throw Error(fmt::format("psnr: size mismatch {} vs {}", a.size(), b.size()));
  }
  if (a.empty()) throw Error("psnr: empty input");
  double sse = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    sse += d * d;
  }
  if (sse == 0.0) return kPsnrCap;
  const double mse = sse / static_cast<double>(a.size());
  return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / mse));
}

double psnr(const VolumeF32& a, const VolumeF32& b, double data_range) {
  check_same(a.dims(), b.dims(), "psnr");
  return psnr(a.data(), b.data(), data_range);
}

std::vector<double> gaussian_window(int size, double sigma) {
  if (size < 1 || !(sigma > 0.0)) throw Error("gaussian window needs size >= 1 and sigma > 0");
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double u = i - c;
    w[static_cast<std::size_t>(i)] = std::exp(-u * u / (2.0 * sigma * sigma));
    total += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= total;
  return w;
}

double ssim_slice(std::span<const float> a, std::span<const float> b,
                  std::size_t nx, std::size_t ny, const SsimParams& params) {
  const auto win = static_cast<std::size_t>(params.window);
  if (nx < win || ny < win) {
    throw Error(fmt::format("ssim: image {}x{} smaller than {}x{} window", nx, ny, win, win));
  }
  if (a.size() != nx * ny || b.size() != nx * ny) throw Error("ssim: size mismatch");
  const auto w = gaussian_window(params.window, params.sigma);
  const double c1 = (params.k1 * params.data_range) * (params.k1 * params.data_range);
  const double c2 = (params.k2 * params.data_range) * (params.k2 * params.data_range);
  const std::size_t ox = nx - win + 1;
  const std::size_t oy = ny - win + 1;

  // Separable filtering of a, b, a^2, b^2, ab over valid positions.
  std::vector<double> h(5 * ox * ny);
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < ox; ++i) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t k = 0; k < win; ++k) {
        const double va = a[j * nx + i + k];
        const double vb = b[j * nx + i + k];
        sa += w[k] * va;
        sb += w[k] * vb;
        saa += w[k] * (va * va);
        sbb += w[k] * (vb * vb);
        sab += w[k] * (va * vb);
      }
      double* dst = h.data() + 5 * (j * ox + i);
      dst[0] = sa;
      dst[1] = sb;
      dst[2] = saa;
      dst[3] = sbb;
      dst[4] = sab;
    }
  }
  double total = 0.0;
  for (std::size_t j = 0; j < oy; ++j) {
    for (std::size_t i = 0; i < ox; ++i) {
      double m[5] = {0, 0, 0, 0, 0};
      for (std::size_t k = 0; k < win; ++k) {
        const double* src = h.data() + 5 * ((j + k) * ox + i);
        for (int q = 0; q < 5; ++q) m[q] += w[k] * src[q];
      }
      const double mu_a = m[0];
      const double mu_b = m[1];
      const double var_a = m[2] - mu_a * mu_a;
      const double var_b = m[3] - mu_b * mu_b;
      const double cov = m[4] - mu_a * mu_b;
      total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    }
  }
  return total / static_cast<double>(ox * oy);
}

double ssim(const VolumeF32& a, const VolumeF32& b, const SsimParams& params) {
  check_same(a.dims(), b.dims(), "ssim");
  const auto& d = a.dims();
  double total = 0.0;
  for (std::size_t z = 0; z < d.nz; ++z) {
    total += ssim_slice(a.slice(z), b.slice(z), d.nx, d.ny, params);
  }
  return total / static_cast<double>(d.nz);
}

PixelLoss l_pp(const VolumeF32& a, const VolumeF32& b) {
  check_same(a.dims(), b.dims(), "l_pp");
  PixelLoss out;
  for (std::size_t k = 0; k < a.data().size(); ++k) {
    out.sum += std::fabs(static_cast<double>(a.data()[k]) - static_cast<double>(b.data()[k]));
  }
  out.mean = out.sum / static_cast<double>(a.data().size());
  return out;
}

std::vector<RegionStats> region_stats(const VolumeF32& x, const LabelMap& labels) {
  check_same(x.dims(), labels.dims(), "region_stats");
  const std::size_t ids = static_cast<std::size_t>(labels.max_id()) + 1;
  std::vector<std::size_t> count(ids, 0);
  std::vector<double> sum(ids, 0.0);
  for (std::size_t k = 0; k < x.data().size(); ++k) {
    const auto id = labels.data()[k];
    ++count[id];
    sum[id] += x.data()[k];
  }
  std::vector<double> sq(ids, 0.0);
  for (std::size_t k = 0; k < x.data().size(); ++k) {
    const auto id = labels.data()[k];
    const double d = x.data()[k] - sum[id] / static_cast<double>(count[id]);
    sq[id] += d * d;
  }
  std::vector<RegionStats> out;
  for (std::size_t id = 1; id < ids; ++id) {
    if (count[id] == 0) continue;
    const auto c = static_cast<double>(count[id]);
    out.push_back({static_cast<std::uint16_t>(id), count[id], sum[id] / c, std::sqrt(sq[id] / c)});
  }
  return out;
}

double l_hu(const VolumeF32& a, const VolumeF32& b, const LabelMap& labels) {
  check_same(a.dims(), labels.dims(), "l_hu");
  check_same(b.dims(), labels.dims(), "l_hu");
  const auto sa = region_stats(a, labels);
  const auto sb = region_stats(b, labels);
  double total = 0.0;
  for (std::size_t r = 0; r < sa.size(); ++r) total += std::fabs(sa[r].mean_hu - sb[r].mean_hu);
  return total;
}

SegAgreement seg_agreement(const LabelMap& a, const LabelMap& b) {
  check_same(a.dims(), b.dims(), "seg_agreement");
  const std::size_t ids = static_cast<std::size_t>(std::max(a.max_id(), b.max_id())) + 1;
  std::vector<std::size_t> na(ids, 0), nb(ids, 0), both(ids, 0);
  std::size_t equal = 0;
  for (std::size_t k = 0; k < a.data().size(); ++k) {
    const auto la = a.data()[k];
    const auto lb = b.data()[k];
    ++na[la];
    ++nb[lb];
    if (la == lb) {
      ++both[la];
      ++equal;
    }
  }
  SegAgreement out;
  for (std::size_t id = 1; id < ids; ++id) {
    if (na[id] + nb[id] == 0) continue;
    out.dice[static_cast<std::uint16_t>(id)] =
        2.0 * static_cast<double>(both[id]) / static_cast<double>(na[id] + nb[id]);
  }
  out.label_agreement = static_cast<double>(equal) / static_cast<double>(a.data().size());
  return out;
}

SegAgreement seg_agreement(const VolumeF32& a, const VolumeF32& b) {
  check_same(a.dims(), b.dims(), "seg_agreement");
  return seg_agreement(threshold_segment(a), threshold_segment(b));
}

double pearson_r(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 3) {
    throw UndefinedResult(fmt::format("pearson_r needs >= 3 pairs, got {}", pairs.size()));
  }
  double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
  double n = 0.0;
  for (const auto& [x, y] : pairs) {
    n += 1.0;
    const double dx = x - mx;
    const double dy = y - my;
    mx += dx / n;
    my += dy / n;
    sxx += dx * (x - mx);
    syy += dy * (y - my);
    sxy += dx * (y - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw UndefinedResult("pearson_r: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CaseMetrics evaluate_case(const VolumeF32& x, const VolumeF32& truth,
                          const LabelMap& truth_labels) {
  CaseMetrics m;
  m.ssim = ssim(x, truth);
  m.psnr_db = psnr(x, truth);
  const auto loss = l_pp(x, truth);
  m.l_pp_mean = loss.mean;
  m.l_pp_sum = loss.sum;
  m.l_hu = l_hu(x, truth, truth_labels);
  const auto seg = seg_agreement(x, truth);
  auto dice = [&seg](std::uint16_t id) {
    const auto it = seg.dice.find(id);
    return it == seg.dice.end() ? 1.0 : it->second;
  };
  m.dice_lung = dice(label::kLung);
  m.dice_airway = dice(label::kAirway);
  m.label_agreement = seg.label_agreement;
  return m;
}

}  // namespace ctd
