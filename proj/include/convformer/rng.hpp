#pragma once

#include <cstdint>

namespace convformer {

/// SplitMix64 generator. The raw u64 stream and the [0,1) doubles built
/// from its top 53 bits are exact integer/bit operations, so a given seed
/// reproduces the same stream on every platform. normal() uses an
/// Irwin-Hall sum of 12 uniforms, which keeps that exactness (plain
/// additions only) at the cost of tails truncated to +-6 sigma; that is
/// all weight initialization and data synthesis need.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// i in [0, n), n >= 1. Modulo bias is irrelevant at the n this
  /// project uses (dataset sizes, pixel coordinates).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    double acc = 0.0;
    for (int i = 0; i < 12; ++i) acc += uniform();
    return mean + stddev * (acc - 6.0);
  }

  double truncated_normal(double stddev, double limit_sigmas = 2.0) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double v = normal(0.0, 1.0);
      if (v > -limit_sigmas && v < limit_sigmas) return v * stddev;
    }
    return 0.0;
  }

  /// Derives an independent stream; used to give each substream (dataset
  /// item, module, run) its own generator.
  Rng fork(std::uint64_t stream_id) {
    Rng child(state_ ^ (0xd1b54a32d192ed03ULL * (stream_id + 1)));
    child.next_u64();
    return child;
  }

private:
  std::uint64_t state_;
};

/// FNV-1a 64-bit hash over a byte string.
inline std::uint64_t fnv1a64(const char* bytes, std::uint64_t len) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint64_t i = 0; i < len; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace convformer
