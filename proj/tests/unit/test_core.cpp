#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "ctdistill/config.hpp"
#include "ctdistill/io.hpp"
#include "ctdistill/parallel.hpp"
#include "ctdistill/rng.hpp"
#include "ctdistill/volume.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace ctd;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("ctd_core_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put_u32(std::vector<std::byte>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(std::byte((v >> (8 * i)) & 0xFF));
}

void put_f32(std::vector<std::byte>& b, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(b, v);
}

// Hand-assembled CTK1 image, independent of encode().
std::vector<std::byte> ctk_bytes(std::uint32_t nx, std::uint32_t ny, std::uint32_t nz,
                                 std::uint8_t dtype, const std::vector<float>& f32) {
  std::vector<std::byte> b;
  for (char c : std::string("CTK1")) b.push_back(std::byte(c));
  put_u32(b, 1);
  put_u32(b, nx);
  put_u32(b, ny);
  put_u32(b, nz);
  put_f32(b, 1.0f);
  put_f32(b, 1.0f);
  put_f32(b, 1.0f);
  b.push_back(std::byte(dtype));
  for (float f : f32) put_f32(b, f);
  return b;
}

}  // namespace

TEST(Volume, ClampsOnIngest) {
  VolumeF32 v({2, 1, 1}, {1, 1, 1}, {-5000.0f, 9000.0f});
  EXPECT_EQ(v.at(0, 0), kHuMin);
  EXPECT_EQ(v.at(1, 0), kHuMax);
}

TEST(Volume, RejectsNonFiniteAndBadShape) {
  EXPECT_THROW(VolumeF32({2, 1, 1}, {1, 1, 1}, {0.0f, NAN}), Error);
  EXPECT_THROW(VolumeF32({2, 2, 1}, {1, 1, 1}, {0.0f}), Error);
  EXPECT_THROW(VolumeF32({0, 2, 1}, {1, 1, 1}), Error);
}

TEST(HuMu, Examples) {
  EXPECT_DOUBLE_EQ(hu_to_mu(-1000.0, 0.019), 0.0);
  EXPECT_DOUBLE_EQ(hu_to_mu(0.0, 0.019), 0.019);
  EXPECT_NEAR(hu_to_mu(1000.0, 0.019), 0.038, 1e-15);
  EXPECT_EQ(mu_to_hu(0.019, 0.019), 0.0f);
  EXPECT_EQ(mu_to_hu(0.0, 0.019), -1000.0f);
  EXPECT_DOUBLE_EQ(hu_to_mu(-1024.0, 0.019), 0.0);  // clamped at 0
}

TEST(HuMu, RoundTripOnValidRange) {
  double prev = -1.0;
  for (int hu = -1000; hu <= 3071; ++hu) {
    const double mu = hu_to_mu(hu, 0.019);
    EXPECT_GE(mu, prev);
    prev = mu;
    EXPECT_NEAR(mu_to_hu(mu, 0.019), float(hu), 1e-3f) << hu;
  }
}

TEST(Ctk, ZeroVolumeDecodesFromHandBuiltBytes) {
  auto obj = decode(ctk_bytes(2, 2, 1, 0, {0, 0, 0, 0}));
  const auto& v = std::get<VolumeF32>(obj);
  EXPECT_EQ(v.dims(), (Dims{2, 2, 1}));
  for (float x : v.data()) EXPECT_EQ(x, 0.0f);
}

TEST(Ctk, EncodeMatchesHandBuiltLayout) {
  VolumeF32 v({2, 2, 1}, {1, 1, 1}, {1, 2, 3, 4});
  EXPECT_EQ(encode(v), ctk_bytes(2, 2, 1, 0, {1, 2, 3, 4}));
}

TEST(Ctk, FileSizeIsHeaderPlusPayload) {
  auto dir = temp_dir("size");
  write_volume(VolumeF32({4, 4, 1}, {1, 1, 1}), dir / "z.ctk");
  EXPECT_EQ(fs::file_size(dir / "z.ctk"), kCtkHeaderBytes + 64);
  EXPECT_EQ(kCtkHeaderBytes, 33u);
}

TEST(Ctk, TruncatedPayloadReportsOffset) {
  auto bytes = ctk_bytes(3, 3, 1, 0, std::vector<float>(8, 0.0f));
  try {
    decode(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), kCtkHeaderBytes + 8 * 4);
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(Ctk, BadMagicAndNonFinite) {
  auto bytes = ctk_bytes(1, 1, 1, 0, {0.0f});
  bytes[0] = std::byte('X');
  try {
    decode(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  auto nan_bytes = ctk_bytes(2, 1, 1, 0, {0.0f, NAN});
  try {
    decode(nan_bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), kCtkHeaderBytes + 4);
  }
}

TEST(Ctk, RoundTripAllDtypes) {
  auto dir = temp_dir("rt");
  auto v = ctd_test::random_volume(7, 5, 11);
  write_volume(v, dir / "f.ctk");
  EXPECT_EQ(read_hu_volume(dir / "f.ctk"), v);

  std::vector<float> ints(35);
  for (std::size_t i = 0; i < ints.size(); ++i) ints[i] = float(int(i) * 37 - 600);
  VolumeF32 vi({7, 5, 1}, {0.5f, 0.5f, 2.0f}, ints);
  write_volume(vi, dir / "i.ctk", DType::kI16Hu);
  EXPECT_EQ(read_hu_volume(dir / "i.ctk"), vi);

  LabelMap lab({3, 2, 2}, {1, 1, 1}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 255});
  write_volume(lab, dir / "u8.ctk", DType::kU8Labels);
  EXPECT_EQ(read_label_map(dir / "u8.ctk"), lab);
  lab.at(0, 0, 0) = 300;
  write_volume(lab, dir / "u16.ctk", DType::kU16Labels);
  EXPECT_EQ(read_label_map(dir / "u16.ctk"), lab);

  // Payload bytes survive a read/write cycle unchanged.
  auto before = read_file_bytes(dir / "f.ctk");
  write_volume(read_hu_volume(dir / "f.ctk"), dir / "f2.ctk");
  EXPECT_EQ(read_file_bytes(dir / "f2.ctk"), before);
}

TEST(Ctk, RewriteIsByteIdentical) {
  auto dir = temp_dir("sha");
  auto v = ctd_test::random_volume(16, 16, 3);
  write_volume(v, dir / "a.ctk");
  write_volume(v, dir / "b.ctk");
  auto a = read_file_bytes(dir / "a.ctk");
  auto b = read_file_bytes(dir / "b.ctk");
  auto as_sv = [](const std::vector<std::byte>& x) {
    return std::string_view(reinterpret_cast<const char*>(x.data()), x.size());
  };
  EXPECT_EQ(sha256_hex(as_sv(a)), sha256_hex(as_sv(b)));
}

TEST(Ctk, LabelExceedsDtypeRange) {
  LabelMap lab({2, 1, 1}, {1, 1, 1}, {1, 300});
  try {
    encode(lab, DType::kU8Labels);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("exceeds dtype range"), std::string::npos);
  }
}

TEST(Ctk, SinogramRoundTrip) {
  auto dir = temp_dir("sino");
  Geometry g = Geometry::for_image(16, 12).resolved();
  Sinogram s(g.angles(), g.n_bins, g.bin_spacing);
  for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] = 0.25 * double(i % 17);
  write_sinogram(s, dir / "s.ctk");
  auto r = read_sinogram(dir / "s.ctk");
  EXPECT_EQ(r.n_angles, s.n_angles);
  EXPECT_EQ(r.n_bins, s.n_bins);
  for (std::size_t a = 0; a < s.n_angles; ++a) EXPECT_NEAR(r.angles[a], s.angles[a], 1e-6);
  for (std::size_t i = 0; i < s.data.size(); ++i) EXPECT_FLOAT_EQ(r.data[i], s.data[i]);
}

TEST(Ctk, ImportRaw16) {
  auto dir = temp_dir("raw");
  {
    std::ofstream raw(dir / "x.raw", std::ios::binary);
    const std::int16_t vals[4] = {0, 100, -100, 2000};
    raw.write(reinterpret_cast<const char*>(vals), sizeof vals);
    std::ofstream side(dir / "x.json");
    side << R"({"nx":2,"ny":2,"nz":1,"sx":0.7,"sy":0.7,"sz":1.5,"signed":true,"slope":1.0,"intercept":-1024})";
  }
  auto v = import_raw16(dir / "x.raw", dir / "x.json");
  EXPECT_EQ(v.dims(), (Dims{2, 2, 1}));
  EXPECT_FLOAT_EQ(v.at(0, 0), -1024.0f);
  EXPECT_FLOAT_EQ(v.at(1, 0), -924.0f);
  EXPECT_FLOAT_EQ(v.at(0, 1), -1024.0f);  // -1124 clamped
  EXPECT_FLOAT_EQ(v.at(1, 1), 976.0f);
}

TEST(Geometry, DefaultsAndCoverage) {
  auto g = Geometry::for_image(256).resolved();
  EXPECT_EQ(g.n_bins, std::size_t(std::ceil(std::sqrt(2.0) * 256)));
  EXPECT_DOUBLE_EQ(g.bin_spacing, 1.0);
  Geometry bad = g;
  bad.n_bins = 100;
  EXPECT_THROW(bad.validate(), Error);
  auto ang = g.angles();
  ASSERT_EQ(ang.size(), 720u);
  EXPECT_DOUBLE_EQ(ang[0], 0.0);
  EXPECT_LT(ang.back(), M_PI);
}

TEST(Rng, DeterministicAndDistinctStreams) {
  auto s = RngStream::derive(42, "low_dose", 3, 7);
  EXPECT_EQ(s, RngStream::derive(42, "low_dose", 3, 7));
  CounterRng a(s), b(s);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());

  std::set<std::uint64_t> ids;
  for (std::uint64_t c = 0; c < 20; ++c) {
    for (std::uint64_t z = 0; z < 50; ++z) {
      ids.insert(RngStream::derive(42, "low_dose", c, z).stream_id);
    }
  }
  EXPECT_EQ(ids.size(), 1000u);
  EXPECT_NE(RngStream::derive(42, "a", 0, 0), RngStream::derive(42, "b", 0, 0));
  EXPECT_NE(s.child("x", 0), s.child("x", 1));
  CounterRng c(RngStream::derive(43, "low_dose", 3, 7));
  CounterRng d(s);
  EXPECT_NE(c(), d());
}

TEST(Rng, UniformMoments) {
  CounterRng r(RngStream::derive(1, "u", 0, 0));
  double m = 0, m2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    m += u;
    m2 += u * u;
  }
  m /= n;
  m2 /= n;
  EXPECT_NEAR(m, 0.5, 0.005);
  EXPECT_NEAR(m2 - m * m, 1.0 / 12.0, 0.002);
}

TEST(Parallel, CoversEveryIndexOnce) {
  for (std::size_t t : {1u, 3u, 8u}) {
    set_num_threads(t);
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
  set_num_threads(0);
}

TEST(Parallel, RethrowsAfterJoin) {
  set_num_threads(4);
  std::atomic<int> done{0};
  EXPECT_THROW(parallel_for(64,
                            [&](std::size_t i) {
                              if (i == 5) throw Error("boom");
                              done++;
                            }),
               Error);
  EXPECT_LE(done.load(), 63);
  set_num_threads(0);
}
