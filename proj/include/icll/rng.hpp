#pragma once

#include <cstdint>
#include <optional>
#include <random>

namespace icll {

// Seeded random stream. The bit source is std::mt19937_64, whose state
// transition is fixed by the C++ standard, so the raw u64 sequence is identical
// on every conforming platform. Uniform doubles use the top 53 bits; Gaussian
// samples come from the Box-Muller transform on that stream (pairs are
// generated together and the second value is cached).
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  // [0, 1)
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Independent child seed for a numbered sub-stream (splitmix64 finalizer over
  // seed and stream index). Used to give every evaluation function / worker
  // task its own stream so results do not depend on scheduling.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace icll
