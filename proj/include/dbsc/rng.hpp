#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dbsc {

// Seeded random source with hand-rolled output transforms. std::uniform_real_distribution
// and std::normal_distribution are implementation-defined, so drawing through them would
// not be reproducible bit-for-bit across standard libraries; these transforms are.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform on [0, 1) with 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586476925286766559 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // Uniform integer in [0, n). Rejection-free modulo is fine here: n is tiny
  // relative to 2^64, so the bias is far below anything observable.
  int uniform_int(int n) {
    return static_cast<int>(gen_() % static_cast<std::uint64_t>(n));
  }

  std::uint64_t raw() { return gen_(); }

private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dbsc
