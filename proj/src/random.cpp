#include "mfflow/random.hpp"

namespace mfflow {

namespace {

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x6d66666cU};
  return std::mt19937_64(seq);
}

}  // namespace

RandomSource::RandomSource(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(make_engine(seed, stream)) {}

double RandomSource::normal() { return normal_(engine_); }

double RandomSource::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

double RandomSource::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

int RandomSource::sign() { return (engine_() >> 63) != 0U ? 1 : -1; }

double RandomSource::gamma(double shape) {
  return std::gamma_distribution<double>(shape, 1.0)(engine_);
}

double RandomSource::beta(double a, double b) {
  for (;;) {
    const double g1 = gamma(a);
    const double g2 = gamma(b);
    const double total = g1 + g2;
    if (total > 0.0) return g1 / total;
  }
}

}  // namespace mfflow
