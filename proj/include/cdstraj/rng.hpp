#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace cdstraj {

/// Seeded generator with platform-independent uniform/normal draws.
/// std::normal_distribution caches a spare value outside the engine, which
/// would break checkpointed RNG state, so draws are derived here directly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller; consumes two engine outputs per call.
  double normal();

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

/// Mixes a seed with a stream index into a fresh, well-spread seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace cdstraj
