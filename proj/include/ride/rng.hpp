#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ride {

/// Seeded random stream. Every random decision in the library goes through
/// one of these so that a single seed reproduces a whole run.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Independent stream derived from this stream's seed and a name.
  [[nodiscard]] Rng substream(std::string_view name) const;

  [[nodiscard]] std::uint64_t seed() const { return seed_; }

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Inclusive on both ends.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace ride
