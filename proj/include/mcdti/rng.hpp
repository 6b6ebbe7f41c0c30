#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mcdti::rng {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// Finalizer from splitmix64; bijective on 64-bit words.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

// Derives a stream key from a seed and up to three stream ids.
// Distinct id tuples map to statistically independent streams, so
// concurrent consumers can draw without coordination.
inline constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a = 0,
                                          std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t k = mix64(seed + kGolden);
  k = mix64(k ^ (a + kGolden));
  k = mix64(k ^ (b + 2 * kGolden));
  k = mix64(k ^ (c + 3 * kGolden));
  return k;
}

// Counter-based generator: state advances by a fixed gamma and each output
// is the splitmix64 finalizer of the counter. Identical keys reproduce the
// identical sequence on any platform.
class Stream {
 public:
  explicit Stream(std::uint64_t key) : state_(key) {}

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix64(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log argument.
  double next_unit_open() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  bool bernoulli(double p_true) { return next_unit() < p_true; }

  // Standard normal via Box-Muller; second deviate is cached.
  double next_gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = next_unit_open();
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(t);
    has_cached_ = true;
    return r * std::cos(t);
  }

  // Uniform integer in [0, n); n > 0.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Stream-id domains. Keeping the tags distinct guarantees that weight
// initialization, per-step training masks, MC-pass masks, and noise draws
// never alias each other.
enum class Domain : std::uint64_t {
  WeightInit = 1,
  TrainDropout = 2,
  McDropout = 3,
  PhantomTissue = 4,
  PhantomNoise = 5,
  Shuffle = 6,
  Split = 7,
};

inline Stream make_stream(std::uint64_t seed, Domain d, std::uint64_t a = 0,
                          std::uint64_t b = 0) {
  return Stream(stream_key(seed, static_cast<std::uint64_t>(d), a, b));
}

}  // namespace mcdti::rng
