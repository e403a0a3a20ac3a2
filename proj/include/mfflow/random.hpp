#pragma once

#include <cstdint>
#include <random>

namespace mfflow {

/// Seeded random stream. The pair (seed, stream) fully determines the
/// sequence; distinct stream ids are decorrelated through std::seed_seq.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  /// A fresh source on a different stream of the same seed.
  RandomSource substream(std::uint64_t stream) const { return RandomSource(seed_, stream); }

  double normal();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  int sign();        // uniform on {-1, +1}
  double gamma(double shape);
  /// Beta(a, b) as G1 / (G1 + G2) with independent Gamma draws.
  double beta(double a, double b);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace mfflow
