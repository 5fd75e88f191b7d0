#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace ctd {

/// Identifies one independent random stream. Streams are derived from the
/// run seed plus an operation tag and the (case, slice) being processed, so
/// no two slices ever draw from the same sequence.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;

  static RngStream derive(std::uint64_t seed, std::string_view op_tag,
                          std::uint64_t case_index, std::uint64_t slice_index);

  /// Child stream for a nested operation (e.g. one component of a mixed
  /// degradation).
  RngStream child(std::string_view tag, std::uint64_t index) const;

  bool operator==(const RngStream&) const = default;
};

std::uint64_t splitmix64_mix(std::uint64_t z);
std::uint64_t fnv1a64(std::string_view text);

/// SplitMix64 used as a counter-based generator: output i of a stream is
/// splitmix64_mix(key + (i + 1) * 0x9E3779B97F4A7C15), where key mixes seed
/// and stream_id. Satisfies UniformRandomBitGenerator, so the standard
/// distributions can draw from it. Sequences are reproducible within this
/// implementation; distribution algorithms are those of the linked C++
/// standard library.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(RngStream stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double normal(double mean, double stddev);
  /// Poisson draw with the given mean, returned as double. Means above 2^52
  /// fall back to a normal approximation.
  double poisson(double mean);

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace ctd
