#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "sarl/core.hpp"

namespace sarl {

/// splitmix64 finaliser; used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Named stream identifiers for the seed-splitting scheme.
///
/// A run seed `s` produces the stream seed `splitmix64(s ^ splitmix64(tag))`
/// for each tag. Environment generation and trajectory sampling draw from
/// different tags so that changing one never perturbs the other.
enum class Stream : std::uint64_t {
  environment = 1,
  trajectory = 2,
  probe = 3,
};

constexpr std::uint64_t derive_seed(std::uint64_t seed, Stream stream) noexcept {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream)));
}

/// Reproducible generator. The engine is std::mt19937_64, whose output
/// sequence is fixed by the standard; the variate transforms below are
/// written out by hand because the std distributions are implementation
/// defined.
class Rng {
 public:
  static constexpr std::string_view name = "mt19937_64";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Index drawn from an unnormalised-safe probability vector by inverse CDF.
  /// Falls through to the last index with positive mass on round-off.
  Index categorical(const Eigen::Ref<const Vector>& probs) {
    const double u = uniform();
    double cumulative = 0.0;
    Index last_positive = 0;
    for (Index i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      last_positive = i;
      cumulative += probs[i];
      if (u < cumulative) return i;
    }
    return last_positive;
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sarl
