#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace balmkt {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// A block is a pure function of (key, counter), so any draw can be recomputed
/// from its coordinates. Paths never share state and results do not depend on
/// how paths are scheduled across workers.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57;
  static constexpr std::uint32_t kW0 = 0x9E3779B9;
  static constexpr std::uint32_t kW1 = 0xBB67AE85;
};

/// Independent substreams of the simulation. Brownian drivers and jump clocks
/// draw from different streams so that switching jumps off leaves the
/// Brownian path untouched.
enum class Stream : std::uint32_t { Brownian = 1, JumpClock = 2, JumpMark = 3, Auxiliary = 4 };

/// Draws addressed by (seed, stream, path, step, index).
class PathRng {
 public:
  PathRng(std::uint64_t seed, Stream stream, std::uint64_t path)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(static_cast<std::uint32_t>(stream)),
        path_(path) {}

  /// Two uniforms in (0, 1) from block `index` of `step`.
  std::array<double, 2> uniform_pair(std::uint64_t step, std::uint32_t index) const {
    // The path index shares a word with the stream id: 24 bits of stream
    // headroom are more than enough, paths get 40 bits.
    const Philox4x32::Counter ctr = {index, static_cast<std::uint32_t>(step),
                                     static_cast<std::uint32_t>(path_),
                                     (static_cast<std::uint32_t>(path_ >> 32) << 8) ^ stream_ ^
                                         (static_cast<std::uint32_t>(step >> 32) << 24)};
    const auto out = Philox4x32::block(ctr, key_);
    return {to_open_unit(out[0], out[1]), to_open_unit(out[2], out[3])};
  }

  double uniform(std::uint64_t step, std::uint32_t index = 0) const { return uniform_pair(step, index)[0]; }

  /// Fills `out[0..n)` with independent standard normals (Box-Muller on block pairs).
  template <class OutIt>
  void normals(std::uint64_t step, std::size_t n, OutIt out) const {
    for (std::size_t k = 0; k < n; k += 2) {
      const auto u = uniform_pair(step, static_cast<std::uint32_t>(k / 2));
      const double radius = std::sqrt(-2.0 * std::log(u[0]));
      const double angle = 2.0 * std::numbers::pi * u[1];
      out[k] = radius * std::cos(angle);
      if (k + 1 < n) out[k + 1] = radius * std::sin(angle);
    }
  }

  /// Exponential(1) variate.
  double exponential(std::uint64_t step, std::uint32_t index = 0) const { return -std::log(uniform(step, index)); }

 private:
  // 53 random bits mapped to the open interval (0, 1).
  static double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint32_t stream_;
  std::uint64_t path_;
};

}  // namespace balmkt
