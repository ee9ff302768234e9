#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>

namespace hisa {

/// Deterministic random source. mt19937_64 is fully specified by the standard,
/// and the value mappings below avoid std::*_distribution, whose output is
/// implementation-defined. Same seed, same stream, on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    return static_cast<int>(gen_() % static_cast<std::uint64_t>(n));
  }

  /// Standard normal via Box-Muller; caches the paired draw.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Full state as text, for checkpoints. Includes the cached Box-Muller
  /// draw (as raw bits, to survive the text round-trip exactly) so a
  /// restored stream continues exactly where it stopped.
  std::string save_state() const {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &spare_, sizeof(bits));
    std::ostringstream os;
    os << gen_ << " " << (has_spare_ ? 1 : 0) << " " << bits;
    return os.str();
  }

  void restore_state(const std::string& state) {
    std::istringstream is(state);
    int flag = 0;
    std::uint64_t bits = 0;
    is >> gen_ >> flag >> bits;
    std::memcpy(&spare_, &bits, sizeof(bits));
    has_spare_ = flag != 0;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hisa
