#include <benchmark/benchmark.h>

#include "ctdistill/metrics.hpp"
#include "ctdistill/phantom.hpp"

namespace {

void BM_Ssim(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = ctd::shepp_logan(n);
  ctd::PhantomSpec s;
  s.n = n;
  const auto b = ctd::lung_phantom(s).volume;
  for (auto _ : state) benchmark::DoNotOptimize(ctd::ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(128)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_Psnr(benchmark::State& state) {
  const auto a = ctd::shepp_logan(512);
  ctd::PhantomSpec s;
  s.n = 512;
  const auto b = ctd::lung_phantom(s).volume;
  for (auto _ : state) benchmark::DoNotOptimize(ctd::psnr(a, b));
}
BENCHMARK(BM_Psnr)->Unit(benchmark::kMicrosecond);

}  // namespace
