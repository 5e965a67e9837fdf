#ifndef RRPSR_COMMON_HPP
#define RRPSR_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace rrpsr {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyScene : Error { using Error::Error; };
struct DoubleNoise : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct RankDeficient : Error { using Error::Error; };
struct DegenerateSupport : Error { using Error::Error; };
struct NonScalarLoss : Error { using Error::Error; };
struct NonFiniteGradient : Error { using Error::Error; };
struct UnknownEstimator : Error { using Error::Error; };
struct CheckpointError : Error { using Error::Error; };
struct DatasetError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

constexpr double kInfDb = std::numeric_limits<double>::infinity();

/// Deterministic 64-bit generator (splitmix64). Used everywhere instead of
/// std:: distributions so that streams are identical across platforms and
/// library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0,1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  /// Standard normal via Box-Muller (pairs cached).
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  /// Independent child stream keyed by (this stream's seed, index).
  Rng child(std::uint64_t index) const {
    Rng h(state_ ^ (0x2545f4914f6cdd1dULL * (index + 1)));
    std::uint64_t s = h.next_u64();
    return Rng(s);
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

/// FNV-1a 64-bit, used for file checksums and config hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace rrpsr

#endif
