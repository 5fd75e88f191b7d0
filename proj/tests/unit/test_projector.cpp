#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ctdistill/metrics.hpp"
#include "ctdistill/parallel.hpp"
#include "ctdistill/phantom.hpp"
#include "ctdistill/projector.hpp"
#include "analytic.hpp"
#include "test_util.hpp"

using namespace ctd;

namespace {

Image2D random_image(std::size_t n, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Image2D img(n);
  for (auto& v : img.data) v = d(gen);
  return img;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

double adjoint_error(std::size_t n, std::mt19937_64& gen) {
  const auto g = Geometry::for_image(n, 2 * n).resolved();
  const auto x = random_image(n, gen);
  Sinogram y(g.angles(), g.n_bins, g.bin_spacing);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (auto& v : y.data) v = d(gen);
  const auto ax = radon_forward(x, g);
  const auto aty = backproject(y, g);
  return std::abs(dot(ax.data, y.data) - dot(x.data, aty.data)) /
         (norm(ax.data) * norm(y.data));
}

double fbp_psnr(const VolumeF32& truth, std::size_t n_angles) {
  const auto g = Geometry::for_image(truth.dims().nx, n_angles).resolved();
  const auto s = sinogram_of(truth, 0, g);
  return psnr(fbp(s, {}, g), truth);
}

}  // namespace

TEST(Radon, ZeroInZeroOut) {
  const auto g = Geometry::for_image(32, 16).resolved();
  const auto s = radon_forward(Image2D(32), g);
  for (double v : s.data) EXPECT_EQ(v, 0.0);
  const auto b = backproject(s, g);
  for (double v : b.data) EXPECT_EQ(v, 0.0);
}

TEST(Radon, Linearity) {
  std::mt19937_64 gen(1);
  const auto g = Geometry::for_image(32, 24).resolved();
  const auto x = random_image(32, gen);
  const auto y = random_image(32, gen);
  Image2D z(32);
  for (std::size_t i = 0; i < z.data.size(); ++i) z.data[i] = 2.5 * x.data[i] - 0.75 * y.data[i];
  const auto px = radon_forward(x, g), py = radon_forward(y, g), pz = radon_forward(z, g);
  double scale = 0.0;
  for (double v : pz.data) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < pz.data.size(); ++i) {
    EXPECT_NEAR(pz.data[i], 2.5 * px.data[i] - 0.75 * py.data[i], 1e-9 * scale);
  }
}

TEST(Radon, AdjointDotTest) {
  std::mt19937_64 gen(2024);
  for (std::size_t n : {16u, 32u, 64u}) {
    for (int k = 0; k < 5; ++k) EXPECT_LE(adjoint_error(n, gen), 1e-3) << n;
  }
}

TEST(Radon, DiskChordLength) {
  EXPECT_LE(ctd_test::disk_chord_max_rel_error(256, 80.0, 0.02, 36), 0.01);
}

TEST(Radon, WaterCylinderCentralRay) {
  const std::size_t n = 256;
  auto g = Geometry::for_image(n, 8);
  g.n_bins = 363;  // odd, so one bin sits on the centre
  g = g.resolved();
  const auto s = radon_forward(ctd_test::disk(n, 50.0, g.mu_water), g);
  for (std::size_t a = 0; a < s.n_angles; ++a) EXPECT_NEAR(s.row(a)[181], 1.9, 0.019);
}

TEST(Radon, SinogramOfIsRadonOfMu) {
  PhantomSpec ps;
  ps.n = 64;
  const auto p = lung_phantom(ps);
  const auto g = Geometry::for_image(64, 30).resolved();
  const auto a = sinogram_of(p.volume, 0, g);
  const auto b = radon_forward(hu_to_mu(p.volume.slice(0), 64, g.mu_water), g);
  EXPECT_EQ(a.data, b.data);

  const auto air = VolumeF32::filled({64, 64, 1}, {1, 1, 1}, -1000.0f);
  for (double v : sinogram_of(air, 0, g).data) EXPECT_EQ(v, 0.0);
}

TEST(Backproject, SingleRayIsAStrip) {
  const std::size_t n = 64;
  const auto g = Geometry::for_image(n, 12).resolved();
  Sinogram s(g.angles(), g.n_bins, g.bin_spacing);
  const std::size_t a = 2, b = g.n_bins / 2 + 7;
  s.row(a)[b] = 1.0;
  const auto img = backproject(s, g);
  const double theta = s.angles[a];
  const double t = (double(b) - (double(g.n_bins) - 1.0) / 2.0) * g.bin_spacing;
  const double c = (double(n) - 1.0) / 2.0;
  std::size_t on_line = 0;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const double x = double(i) - c, y = c - double(j);
      const double dist = std::abs(x * std::cos(theta) + y * std::sin(theta) - t);
      if (img.at(i, j) != 0.0) EXPECT_LT(dist, 1.5) << i << "," << j;
      if (dist < 0.1) {
        EXPECT_GT(img.at(i, j), 0.0);
        ++on_line;
      }
    }
  }
  EXPECT_GT(on_line, 0u);
}

TEST(Fbp, ZeroSinogramIsAir) {
  const auto g = Geometry::for_image(32, 16).resolved();
  Sinogram s(g.angles(), g.n_bins, g.bin_spacing);
  const auto v = fbp(s, {}, g);
  for (float x : v.data()) EXPECT_EQ(x, -1000.0f);
}

TEST(Fbp, NeedsTwoAngles) {
  const auto g = Geometry::for_image(32, 16).resolved();
  Sinogram s(std::vector<double>{0.0}, g.n_bins, g.bin_spacing);
  EXPECT_THROW(fbp(s, {}, g), Error);
  FbpFilter f;
  f.cutoff = 0.0;
  EXPECT_THROW(f.validate(), Error);
}

TEST(Fbp, SheppLoganRegressionBound) {
  EXPECT_GE(fbp_psnr(shepp_logan(256), 720), ctd_test::kFbpPsnrThresholdDb);
}

TEST(Fbp, MoreAnglesImprovePsnr) {
  const auto truth = shepp_logan(256);
  EXPECT_GT(fbp_psnr(truth, 720), fbp_psnr(truth, 360));
}

TEST(Fbp, HannSmoothsNoise) {
  const std::size_t n = 128;
  VolumeF32 water = VolumeF32::filled({n, n, 1}, {1, 1, 1}, -1000.0f);
  const double c = (double(n) - 1.0) / 2.0;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (std::hypot(double(i) - c, double(j) - c) <= 50.0) water.at(i, j) = 0.0f;
    }
  }
  const auto g = Geometry::for_image(n, 180).resolved();
  auto s = sinogram_of(water, 0, g);
  std::mt19937_64 gen(4);
  std::normal_distribution<double> d(0.0, 0.05);
  for (auto& v : s.data) v += d(gen);
  auto centre_std = [&](const VolumeF32& v) {
    double sum = 0.0, sq = 0.0;
    std::size_t m = 0;
    for (std::size_t j = 54; j < 74; ++j) {
      for (std::size_t i = 54; i < 74; ++i) {
        sum += v.at(i, j);
        sq += double(v.at(i, j)) * v.at(i, j);
        ++m;
      }
    }
    const double mean = sum / double(m);
    return std::sqrt(sq / double(m) - mean * mean);
  };
  FbpFilter hann{FbpFilter::Kind::kHann, 1.0};
  EXPECT_LT(centre_std(fbp(s, hann, g)), 0.8 * centre_std(fbp(s, {}, g)));
}

TEST(Radon, RotationByQuarterTurnPermutesRows) {
  const std::size_t n = 64;
  PhantomSpec ps;
  ps.n = n;
  const auto f = lung_phantom(ps).volume;
  std::vector<float> rot(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) rot[j * n + i] = f.at(n - 1 - j, i);
  }
  const VolumeF32 gvol({n, n, 1}, {1, 1, 1}, rot);
  const auto geom = Geometry::for_image(n, 16).resolved();
  const auto pf = sinogram_of(f, 0, geom);
  const auto pg = sinogram_of(gvol, 0, geom);
  const std::size_t quarter = 8, nb = geom.n_bins;
  double max_ref = 0.0;
  for (double v : pf.data) max_ref = std::max(max_ref, v);
  for (std::size_t a = 0; a < 16; ++a) {
    for (std::size_t b = 0; b < nb; ++b) {
      const double expect = a >= quarter ? pf.row(a - quarter)[b] : pf.row(a + quarter)[nb - 1 - b];
      EXPECT_NEAR(pg.row(a)[b], expect, 1e-2 * max_ref) << a << "," << b;
    }
  }
}

TEST(Radon, ThreadCountInvariant) {
  const auto truth = shepp_logan(128);
  const auto g = Geometry::for_image(128, 90).resolved();
  set_num_threads(1);
  const auto s1 = sinogram_of(truth, 0, g);
  const auto r1 = fbp(s1, {}, g);
  set_num_threads(7);
  const auto s7 = sinogram_of(truth, 0, g);
  const auto r7 = fbp(s7, {}, g);
  set_num_threads(0);
  EXPECT_EQ(s1.data, s7.data);
  EXPECT_EQ(r1, r7);
}

TEST(Radon, SubsampleAnglesKeepsEveryKth) {
  const auto g = Geometry::for_image(32, 24).resolved();
  Sinogram s(g.angles(), g.n_bins, g.bin_spacing);
  for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] = double(i);
  const auto sub = subsample_angles(s, 8);
  ASSERT_EQ(sub.n_angles, 3u);
  for (std::size_t a = 0; a < 3; ++a) {
    EXPECT_EQ(sub.angles[a], s.angles[8 * a]);
    for (std::size_t b = 0; b < s.n_bins; ++b) EXPECT_EQ(sub.row(a)[b], s.row(8 * a)[b]);
  }
}

TEST(Radon, GeometryMismatchThrows) {
  const auto g = Geometry::for_image(32, 8).resolved();
  EXPECT_THROW(radon_forward(Image2D(16), g), Error);
}
