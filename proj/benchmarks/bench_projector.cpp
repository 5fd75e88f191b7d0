#include <benchmark/benchmark.h>

#include "ctdistill/phantom.hpp"
#include "ctdistill/projector.hpp"

namespace {

void BM_RadonForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto g = ctd::Geometry::for_image(n, 180).resolved();
  const auto truth = ctd::shepp_logan(n);
  for (auto _ : state) benchmark::DoNotOptimize(ctd::sinogram_of(truth, 0, g));
}
BENCHMARK(BM_RadonForward)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Backproject(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto g = ctd::Geometry::for_image(n, 180).resolved();
  const auto s = ctd::sinogram_of(ctd::shepp_logan(n), 0, g);
  for (auto _ : state) benchmark::DoNotOptimize(ctd::backproject(s, g));
}
BENCHMARK(BM_Backproject)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Fbp(benchmark::State& state) {
  const std::size_t n = 256;
  const auto g = ctd::Geometry::for_image(n, static_cast<std::size_t>(state.range(0))).resolved();
  const auto s = ctd::sinogram_of(ctd::shepp_logan(n), 0, g);
  for (auto _ : state) benchmark::DoNotOptimize(ctd::fbp(s, {}, g));
}
BENCHMARK(BM_Fbp)->Arg(90)->Arg(360)->Arg(720)->Unit(benchmark::kMillisecond);

}  // namespace
