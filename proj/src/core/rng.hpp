#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace tict {

// splitmix64, used to derive independent stream seeds from (base, index) pairs.
inline uint64_t mix_seed(uint64_t base, uint64_t index) {
  uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic random stream. The engine is std::mt19937_64 (bit-exact across
// platforms); all distribution transforms are implemented here because the
// standard <random> distributions are not portable across library vendors.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) {
    // multiply-shift rejection-free mapping is biased for huge n; n here is
    // always tiny (class counts, bank sizes), so modulo bias is negligible,
    // but use rejection anyway to keep the contract exact.
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = eng_();
      if (r >= threshold) return r % n;
    }
  }

  int below_int(int n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

  // standard normal via Box-Muller; one value per call, no caching so the
  // draw count stays predictable.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool coin() { return (eng_() & 1u) != 0; }

  // Engine state as the standard's textual serialization (space-separated
  // decimals), bit-exact and portable; used by checkpoints.
  std::string state_string() const {
    std::ostringstream ss;
    ss << eng_;
    return ss.str();
  }

  // Restores a state produced by state_string(); false on malformed input.
  bool set_state_string(const std::string& s) {
    std::istringstream ss(s);
    ss >> eng_;
    return !ss.fail();
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace tict
