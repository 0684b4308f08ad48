#pragma once
#include <cmath>
#include <cstdint>

namespace ntkflow {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Counter-based 64-bit generator. A (seed, stream) pair selects an
// independent stream; the output is a pure function of (seed, stream,
// counter), so draws do not depend on evaluation order across streams.
// Normals come from Box-Muller over two consecutive counter values,
// making sequences bit-reproducible across platforms.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(detail::splitmix64(seed) ^
             detail::splitmix64(stream * 0xD2B74407B1CE6E93ULL + 1)) {}

  std::uint64_t next_u64() { return detail::splitmix64(key_ + (ctr_++) * 0x9E3779B97F4A7C15ULL); }

  // Uniform in (0, 1), never exactly 0.
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace ntkflow
