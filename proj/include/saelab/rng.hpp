#pragma once

#include <array>
#include <cstdint>

namespace saelab {

/// Purpose tags for independent random streams. Every consumer of randomness
/// in the library draws from exactly one of these so that, for example,
/// changing the number of samples never perturbs the dictionary draw.
enum class Stream : std::uint32_t {
  Dictionary = 1,
  ClusterDraw = 2,
  SupportDraw = 3,
  Values = 4,
  ModelInit = 5,
  BatchOrder = 6,
  RoundTrip = 7,
  SubsetSample = 8,
};

/// Philox4x32-10 block function: maps a 128-bit counter and a 64-bit key to
/// 128 pseudo-random bits.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Counter-based generator. The key is derived from (seed, stream) and the
/// counter from (substream, position), so any draw is addressable without
/// replaying earlier ones and substreams never overlap.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, Stream stream, std::uint64_t substream = 0);

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Uniform integer in [0, bound). Unbiased (rejection).
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal via Box-Muller; caches the second variate.
  double normal();

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~std::uint64_t{0}; }
  result_type operator()() { return next_u64(); }

 private:
  std::array<std::uint32_t, 2> key_{};
  std::uint64_t substream_ = 0;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace saelab
