#include "ctdistill/rng.hpp"

#include <cmath>
#include <random>

#include "ctdistill/volume.hpp"

namespace ctd {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

RngStream RngStream::derive(std::uint64_t seed, std::string_view op_tag,
                            std::uint64_t case_index,
                            std::uint64_t slice_index) {
  std::uint64_t id = splitmix64_mix(fnv1a64(op_tag));
  id = splitmix64_mix(id + kGolden * (case_index + 1));
  id = splitmix64_mix(id ^ (kGolden * (slice_index + 1)));
  return {seed, id};
}

RngStream RngStream::child(std::string_view tag, std::uint64_t index) const {
  std::uint64_t id = splitmix64_mix(stream_id ^ fnv1a64(tag));
  id = splitmix64_mix(id + kGolden * (index + 1));
  return {seed, id};
}

CounterRng::CounterRng(RngStream stream)
    : key_(splitmix64_mix(stream.seed ^ splitmix64_mix(stream.stream_id))) {}

CounterRng::result_type CounterRng::operator()() {
  ++counter_;
  return splitmix64_mix(key_ + counter_ * kGolden);
}

double CounterRng::uniform() {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double CounterRng::normal(double mean, double stddev) {
  if (stddev == 0.0) return mean;
  std::normal_distribution<double> dist(mean, stddev);
  return dist(*this);
}

double CounterRng::poisson(double mean) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) {
    throw Error("poisson mean must be finite and non-negative");
  }
  if (mean == 0.0) return 0.0;
  if (mean > 0x1.0p52) {
    return std::max(0.0, std::round(normal(mean, std::sqrt(mean))));
  }
  std::poisson_distribution<std::int64_t> dist(mean);
  return static_cast<double>(dist(*this));
}

}  // namespace ctd
