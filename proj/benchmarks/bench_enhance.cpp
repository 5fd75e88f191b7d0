#include <benchmark/benchmark.h>

#include <random>

#include "ctdistill/enhance.hpp"
#include "ctdistill/phantom.hpp"

namespace {

ctd::VolumeF32 noisy_lung(std::size_t n) {
  ctd::PhantomSpec s;
  s.n = n;
  const auto truth = ctd::lung_phantom(s).volume;
  std::mt19937_64 gen(1);
  std::normal_distribution<double> d(0.0, 30.0);
  std::vector<float> v(truth.data().begin(), truth.data().end());
  for (auto& x : v) x = static_cast<float>(x + d(gen));
  return ctd::VolumeF32(truth.dims(), truth.spacing(), std::move(v));
}

void BM_Nlm(benchmark::State& state) {
  const auto x = noisy_lung(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ctd::enhance_nlm(x, {}));
}
BENCHMARK(BM_Nlm)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Tv(benchmark::State& state) {
  const auto x = noisy_lung(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ctd::enhance_tv(x, {30.0, 100}));
}
BENCHMARK(BM_Tv)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace
