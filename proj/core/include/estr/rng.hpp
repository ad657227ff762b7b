#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace estr {

// Deterministic 64-bit PRNG (splitmix64). All randomness in the project flows
// from one root seed through named sub-streams so that independent phases
// (training, masking, decoding, probing) never share a stream. splitmix64 is
// used instead of std::mt19937_64 + std::uniform_* because the standard
// distributions are not bit-portable across library implementations, and
// reruns must reproduce outputs byte for byte.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Derives an independent stream: hash the stream name into the seed.
  Rng(std::uint64_t seed, std::string_view stream)
      : state_(mix(seed ^ fnv1a64(stream))) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // Uniform in [0, n). Rejection-free multiply-shift would bias tiny amounts;
  // n here is always small (vocab/position counts), so use 128-bit multiply.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  int next_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(next_below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  // Uniform double in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  float next_float() { return static_cast<float>(next_double()); }

  // Uniform in [-s, s].
  float next_symmetric(float s) {
    return s * (2.0f * next_float() - 1.0f);
  }

  // Standard normal via Box-Muller (deterministic, no cached spare).
  double next_normal();

  // Draw an index from unnormalized non-negative weights.
  int next_categorical(const std::vector<double>& weights);

  static std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

inline double Rng::next_normal() {
  // Box-Muller; draw until the radius is usable.
  double u1 = next_double();
  while (u1 <= 1e-300) u1 = next_double();
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline int Rng::next_categorical(const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = next_double() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u <= 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace estr
