#pragma once

#include <cmath>
#include <cstdint>

namespace orlab {

// Counter-based deterministic generator with O(1) splitting. Every draw is a
// pure function of (base seed, draw index), so a child stream obtained via
// split() does not depend on how much the parent has already consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : base_(seed) {}

  std::uint64_t next_u64() { return mix(base_ + kGamma * ++draws_); }

  // Child stream derived from the base seed and a split counter only.
  Rng split() { return Rng(mix(base_ ^ kSplitTag) ^ mix(kGamma * ++splits_)); }

  // Indexed derivation that does not mutate this stream.
  Rng child(std::uint64_t index) const {
    return Rng(mix(base_ ^ kChildTag) ^ mix(kGamma * (index + 1)));
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling keeps it exactly uniform.
  std::int64_t uniform_int(std::int64_t n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % un + 1) % un;
    std::uint64_t r = next_u64();
    while (r > limit) r = next_u64();
    return static_cast<std::int64_t>(r % un);
  }

  // Standard normal via Box-Muller; the paired value is cached.
  double gauss() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    cached_ = r * std::sin(kTwoPi * u2);
    has_cached_ = true;
    return r * std::cos(kTwoPi * u2);
  }

  std::uint64_t base_seed() const { return base_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kSplitTag = 0xC2B2AE3D27D4EB4Full;
  static constexpr std::uint64_t kChildTag = 0x165667B19E3779F9ull;

  // splitmix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t base_;
  std::uint64_t draws_ = 0;
  std::uint64_t splits_ = 0;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace orlab
