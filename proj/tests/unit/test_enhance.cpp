#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "ctdistill/enhance.hpp"
#include "ctdistill/io.hpp"
#include "ctdistill/metrics.hpp"
#include "ctdistill/parallel.hpp"
#include "ctdistill/phantom.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace ctd;

namespace {

VolumeF32 lung(std::size_t n, std::uint64_t seed = 1) {
  PhantomSpec s;
  s.n = n;
  s.seed = seed;
  return lung_phantom(s).volume;
}

// Direct NLM: loops over every pixel, every search offset and every patch
// element, with mirror indexing (-1 -> 1).
std::vector<double> brute_nlm(const VolumeF32& v, int pr, int sr, double h, double sigma) {
  const long nx = long(v.dims().nx), ny = long(v.dims().ny);
  auto mirror = [](long i, long n) {
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
    return i;
  };
  auto px = [&](long x, long y) { return double(v.at(mirror(x, nx), mirror(y, ny))); };
  std::vector<double> out(std::size_t(nx * ny));
  for (long y = 0; y < ny; ++y) {
    for (long x = 0; x < nx; ++x) {
      double num = 0, den = 0;
      for (long dy = -sr; dy <= sr; ++dy) {
        for (long dx = -sr; dx <= sr; ++dx) {
          double d2 = 0;
          for (long py = -pr; py <= pr; ++py) {
            for (long pxo = -pr; pxo <= pr; ++pxo) {
              const double d = px(x + pxo, y + py) - px(x + dx + pxo, y + dy + py);
              d2 += d * d;
            }
          }
          d2 /= double((2 * pr + 1) * (2 * pr + 1));
          const double w = (dx == 0 && dy == 0)
                               ? 1.0
                               : std::exp(-std::max(d2 - 2 * sigma * sigma, 0.0) / (h * h));
          num += w * px(x + dx, y + dy);
          den += w;
        }
      }
      out[std::size_t(y * nx + x)] = num / den;
    }
  }
  return out;
}

double brute_tv_objective(const VolumeF32& u, const VolumeF32& f, double lambda) {
  const std::size_t nx = u.dims().nx, ny = u.dims().ny;
  double fid = 0, tv = 0;
  for (std::size_t y = 0; y < ny; ++y) {
    for (std::size_t x = 0; x < nx; ++x) {
      const double r = double(u.at(x, y)) - f.at(x, y);
      fid += r * r;
      const double gx = x + 1 < nx ? double(u.at(x + 1, y)) - u.at(x, y) : 0.0;
      const double gy = y + 1 < ny ? double(u.at(x, y + 1)) - u.at(x, y) : 0.0;
      tv += std::sqrt(gx * gx + gy * gy);
    }
  }
  return 0.5 * fid + lambda * tv;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("ctd_enh_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Nlm, ConstantIsFixedPoint) {
  const auto x = VolumeF32::filled({24, 24, 1}, {1, 1, 1}, 123.0f);
  EXPECT_EQ(enhance_nlm(x, {}), x);
}

TEST(Nlm, MatchesBruteForce) {
  const auto x = ctd_test::random_volume(13, 11, 5, -200.0f, 200.0f);
  for (const NlmParams p : {NlmParams{1, 2, 60.0, 0.0}, NlmParams{2, 3, 150.0, 40.0}}) {
    const auto fast = enhance_nlm(x, p);
    const auto ref = brute_nlm(x, p.patch_radius, p.search_radius, p.h, p.sigma);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(fast.data()[i], ref[i], 1e-3) << i;
  }
}

TEST(Nlm, TinyHLeavesInputUnchanged) {
  const auto x = ctd_test::random_volume(32, 32, 6);
  NlmParams p;
  p.h = 1e-6;
  const auto out = enhance_nlm(x, p);
  for (std::size_t i = 0; i < out.data().size(); ++i) {
    ASSERT_NEAR(out.data()[i], x.data()[i], 1e-3);
  }
}

TEST(Nlm, DenoisesGaussianNoise) {
  const auto truth = lung(256);
  const auto noisy = ctd_test::add_gaussian(truth, 30.0, 17);
  const double gain = psnr(enhance_nlm(noisy, {}), truth) - psnr(noisy, truth);
  EXPECT_GE(gain, ctd_test::kNlmRequiredGainDb);
  EXPECT_GE(gain, ctd_test::kNlmRegressionGainDb);
}

TEST(Nlm, TranslationEquivariantAwayFromBorder) {
  const auto base = ctd_test::add_gaussian(lung(64), 30.0, 3);
  const std::size_t n = 64, shift = 3;
  std::vector<float> moved(n * n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) moved[y * n + x] = base.at(x >= shift ? x - shift : 0, y);
  }
  const VolumeF32 mv({n, n, 1}, {1, 1, 1}, moved);
  NlmParams p;
  const auto a = enhance_nlm(base, p);
  const auto b = enhance_nlm(mv, p);
  const std::size_t band = std::size_t(p.patch_radius + p.search_radius);
  for (std::size_t y = band; y + band < n; ++y) {
    for (std::size_t x = band + shift; x + band < n; ++x) {
      ASSERT_FLOAT_EQ(b.at(x, y), a.at(x - shift, y)) << x << "," << y;
    }
  }
}

TEST(Nlm, ThreadCountInvariant) {
  const auto s = ctd_test::add_gaussian(lung(48), 30.0, 1);
  std::vector<float> data;
  for (int z = 0; z < 4; ++z) data.insert(data.end(), s.data().begin(), s.data().end());
  const VolumeF32 x({48, 48, 4}, {1, 1, 1}, data);
  set_num_threads(1);
  const auto a = enhance_nlm(x, {});
  set_num_threads(4);
  const auto b = enhance_nlm(x, {});
  set_num_threads(0);
  EXPECT_EQ(a, b);
}

TEST(Tv, TinyLambdaLeavesInputUnchanged) {
  const auto x = ctd_test::random_volume(32, 32, 8);
  const auto out = enhance_tv(x, {1e-6, 100});
  for (std::size_t i = 0; i < out.data().size(); ++i) {
    ASSERT_NEAR(out.data()[i], x.data()[i], 1e-4);
  }
}

TEST(Tv, ObjectiveMatchesDirectFormula) {
  const auto f = ctd_test::random_volume(9, 7, 1);
  const auto u = ctd_test::random_volume(9, 7, 2);
  std::vector<double> ud(u.data().begin(), u.data().end());
  std::vector<double> fd(f.data().begin(), f.data().end());
  EXPECT_NEAR(tv_objective(ud, fd, 9, 7, 3.5), brute_tv_objective(u, f, 3.5),
              1e-9 * brute_tv_objective(u, f, 3.5));
}

TEST(Tv, ObjectiveMonotone) {
  const auto noisy = ctd_test::add_gaussian(lung(96), 40.0, 2);
  std::vector<double> obj;
  enhance_tv(noisy, {30.0, 100}, &obj);
  ASSERT_EQ(obj.size(), 101u);
  for (std::size_t k = 1; k <= 10; ++k) EXPECT_LT(obj[k], obj[k - 1]) << k;
  for (std::size_t k = 1; k < obj.size(); ++k) {
    EXPECT_LE(obj[k], obj[k - 1] * (1.0 + 1e-12)) << k;
  }
}

TEST(Tv, LargeLambdaFlattensRegions) {
  PhantomSpec s;
  s.n = 96;
  s.n_vessels = 0;
  s.airway_depth = 0;
  const auto p = lung_phantom(s);
  const auto noisy = ctd_test::add_gaussian(p.volume, 40.0, 9);
  const auto out = enhance_tv(noisy, {200.0, 200});
  const auto before = region_stats(noisy, p.labels);
  const auto after = region_stats(out, p.labels);
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t r = 0; r < before.size(); ++r) {
    EXPECT_LT(after[r].std_hu, before[r].std_hu) << before[r].region_id;
  }
}

TEST(Sirt, ZeroSinogramGivesZeroImage) {
  const auto g = Geometry::for_image(32, 16).resolved();
  Sinogram s(g.angles(), g.n_bins, g.bin_spacing);
  const auto r = enhance_sirt(s, {10, 1.0}, g);
  for (double v : r.attenuation.data) EXPECT_EQ(v, 0.0);
  for (float v : r.volume.data()) EXPECT_EQ(v, -1000.0f);
}

TEST(Sirt, ResidualMonotoneNoiseless) {
  const auto x = shepp_logan(64);
  const auto g = Geometry::for_image(64, 48).resolved();
  const auto r = enhance_sirt(sinogram_of(x, 0, g), {50, 1.0}, g);
  ASSERT_EQ(r.residuals.size(), 51u);
  for (std::size_t k = 1; k < r.residuals.size(); ++k) {
    EXPECT_LE(r.residuals[k], r.residuals[k - 1]) << k;
  }
  EXPECT_LT(r.residuals.back(), 0.2 * r.residuals.front());
}

TEST(Sirt, CloseToFbpAtSameAngles) {
  const auto x = shepp_logan(128);
  const auto g = Geometry::for_image(128, 32).resolved();
  const auto s = sinogram_of(x, 0, g);
  const double p_fbp = psnr(fbp(s, {}, g), x);
  const double p_sirt = psnr(enhance_sirt(s, {}, g).volume, x);
  EXPECT_GE(p_sirt, p_fbp - 1.0);
}

TEST(Sirt, RelaxationOutsideRangeNamesOmega) {
  const auto g = Geometry::for_image(16, 8).resolved();
  Sinogram s(g.angles(), g.n_bins, g.bin_spacing);
  try {
    enhance_sirt(s, {5, 2.0}, g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("relaxation"), std::string::npos);
  }
}

TEST(Sirt, UsesSuppliedSinograms) {
  const auto x = shepp_logan(64);
  const auto g = Geometry::for_image(64, 40).resolved();
  std::vector<Sinogram> sinos = {sinogram_of(x, 0, g)};
  const auto air = VolumeF32::filled({64, 64, 1}, {1, 1, 1}, -1000.0f);
  EnhancerSpec spec;
  spec.kind = EnhancerKind::kSirt;
  spec.sirt.iters = 20;
  EnhanceInputs in;
  in.degraded = &air;
  in.sinograms = &sinos;
  in.geom = &g;
  const auto out = enhance(spec, in);
  EXPECT_EQ(out, enhance_sirt(sinos[0], spec.sirt, g).volume);
  EXPECT_GT(psnr(out, x), psnr(air, x) + 5.0);
}

TEST(External, CopyIsIdentity) {
  const auto dir = temp_dir("copy");
  const auto x = lung(32);
  const auto out = enhance_external(x, {"cp {in} {out}"}, dir);
  EXPECT_EQ(out, x);
  EXPECT_TRUE(fs::exists(dir / "in.ctk"));
}

TEST(External, NonZeroExitIsError) {
  const auto dir = temp_dir("exit");
  EXPECT_THROW(enhance_external(lung(32), {"exit 1"}, dir), Error);
}

TEST(External, MissingOutputIsError) {
  const auto dir = temp_dir("missing");
  EXPECT_THROW(enhance_external(lung(32), {"true"}, dir), Error);
}

TEST(External, DimsMismatchNamesBothShapes) {
  const auto dir = temp_dir("dims");
  write_volume(VolumeF32({128, 128, 1}, {1, 1, 1}), dir / "small.ctk");
  const std::string cmd = "cp " + (dir / "small.ctk").string() + " {out}";
  try {
    enhance_external(lung(256), {cmd}, dir / "x");
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("128x128x1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("256x256x1"), std::string::npos) << msg;
  }
}

TEST(External, NanOutputRejected) {
  const auto dir = temp_dir("nan");
  auto bytes = encode(VolumeF32({4, 4, 1}, {1, 1, 1}));
  const float nan = std::nanf("");
  std::memcpy(bytes.data() + kCtkHeaderBytes + 8, &nan, 4);
  write_file_bytes(dir / "bad.ctk", bytes);
  const std::string cmd = "cp " + (dir / "bad.ctk").string() + " {out}";
  EXPECT_THROW(enhance_external(VolumeF32({4, 4, 1}, {1, 1, 1}), {cmd}, dir / "x"), Error);
}

TEST(Enhance, OutputsFiniteAndClamped) {
  const auto x = ctd_test::random_volume(32, 32, 12, -1024.0f, 3071.0f);
  const auto g = Geometry::for_image(32, 30).resolved();
  EnhanceInputs in;
  in.degraded = &x;
  in.geom = &g;
  for (auto kind : {EnhancerKind::kIdentity, EnhancerKind::kNlm, EnhancerKind::kTv,
                    EnhancerKind::kSirt}) {
    EnhancerSpec spec;
    spec.kind = kind;
    spec.sirt.iters = 10;
    const auto out = enhance(spec, in);
    for (float v : out.data()) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GE(v, kHuMin);
      ASSERT_LE(v, kHuMax);
    }
  }
}

TEST(EnhancerSpec, WithParam) {
  EnhancerSpec nlm;
  nlm.kind = EnhancerKind::kNlm;
  EXPECT_EQ(nlm.with_param("h", 80).nlm.h, 80.0);
  EXPECT_EQ(nlm.with_param("patch_radius", 1).nlm.patch_radius, 1);
  EnhancerSpec tv;
  tv.kind = EnhancerKind::kTv;
  EXPECT_EQ(tv.with_param("iters", 7).tv.iters, 7);
  EnhancerSpec sirt;
  sirt.kind = EnhancerKind::kSirt;
  EXPECT_EQ(sirt.with_param("iters", 7).sirt.iters, 7);
  EXPECT_EQ(sirt.with_param("relaxation", 0.5).sirt.relaxation, 0.5);
  EXPECT_THROW(nlm.with_param("nope", 1), Error);
}

TEST(EnhancerSpec, Validation) {
  EnhancerSpec s;
  s.kind = EnhancerKind::kTv;
  s.tv.lambda = 0;
  EXPECT_THROW(s.validate(), Error);
  s.kind = EnhancerKind::kExternal;
  EXPECT_THROW(s.validate(), Error);
  s.kind = EnhancerKind::kNlm;
  s.nlm.patch_radius = -1;
  EXPECT_THROW(s.validate(), Error);
}
