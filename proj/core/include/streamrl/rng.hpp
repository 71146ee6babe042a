// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>

namespace streamrl::rng {

/// SplitMix64 generator. The algorithm is fixed here rather than taken from
/// <random> so that replays are byte-identical across platforms and standard
/// library versions.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [lo, hi], inclusive.
  std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw std::invalid_argument("next_int: empty range");
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  /// Standard normal via Box-Muller. Burns two uniforms per draw; fine at
  /// desk scale and keeps the stream rule trivial to document.
  double next_gaussian() {
    const double u1 = 1.0 - next_double();  // (0, 1]
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  std::uint64_t state_;
};

/// Stream-splitting rule. Substream `index` of `seed` is an independent
/// SplitMix64 seeded with derive_stream(seed, index). Trajectory i of a
/// sampling call, sequence i of a simulation, and stream i of a scripted
/// protocol run all use this rule, so cross-module comparisons can line
/// their streams up exactly.
inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t index) {
  SplitMix64 g(seed ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
  return g.next_u64();
}

/// Draw an index from a categorical distribution given its probabilities.
/// CDF walk in a fixed order; probs must sum to ~1.
inline int sample_categorical(SplitMix64& gen, std::span<const double> probs) {
  const double u = gen.next_double();
  double cum = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    cum += probs[k];
    if (u < cum) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;  // rounding slack
}

}  // namespace streamrl::rng
