#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace steinpf {

/// Random stream used throughout the library.
///
/// Each stream is a std::mt19937_64 whose seed is derived from a key
/// (seed, tag, index) by SplitMix64 mixing. The harness opens one stream per
/// (run, backend, step) so that backends never share generator state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Stream keyed by a base seed, a tag hash and an index.
  static Rng substream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index);

  double normal() { return normal_(engine_); }
  /// Uniform on [0, 1).
  double uniform() { return uniform_(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

/// FNV-1a hash, used to turn backend/series names into stream tags.
std::uint64_t stream_tag(std::string_view name);

}  // namespace steinpf
