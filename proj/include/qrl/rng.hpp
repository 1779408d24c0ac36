#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "qrl/stats.hpp"
#include "qrl/types.hpp"

namespace qrl {

/// Independent random roles. Each role gets a key-separated substream so
/// adding draws to one role never shifts another.
enum class Stream : std::uint32_t {
  covariates = 1,
  copula = 2,
  censoring = 3,
  fr_multipliers = 4,
  ifr_multipliers = 5,
  rbs_multipliers = 6,
  rbs_gaussian = 7,
  derive = 8,
  probe = 9,
};

/// Philox4x32-10 counter-based generator (Salmon et al., SC 2011).
///
/// A stream is addressed by (seed, replicate, purpose, unit): the 64-bit seed
/// forms the key, counter word 2 holds the unit id (cluster or observation),
/// counter word 3 packs (replicate << 8) | purpose, and words 0-1 advance as
/// draws are consumed. Any stream can therefore be regenerated in isolation,
/// which makes results independent of worker scheduling. Replicate indices
/// must stay below 2^24.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint32_t replicate, Stream purpose,
      std::uint32_t unit)
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        tag_unit_(unit),
        tag_hi_((replicate << 8) | static_cast<std::uint32_t>(purpose)) {}

  /// Next 64 random bits.
  std::uint64_t next_u64() {
    if (avail_ < 2) refill();
    const std::uint64_t lo = buffer_[4 - avail_];
    const std::uint64_t hi = buffer_[5 - avail_];
    avail_ -= 2;
    return (hi << 32) | lo;
  }

  /// Uniform strictly inside (0,1): 53 random bits offset by half an ulp.
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  /// Unit-rate exponential.
  double exponential() { return -std::log(uniform()); }

  double normal() { return normal_quantile(uniform()); }

  double normal(double mu, double sd) { return mu + sd * normal(); }

  int bernoulli(double p) { return uniform() < p ? 1 : 0; }

  /// Gamma(shape, scale 1) by Marsaglia-Tsang squeeze, with the power boost
  /// for shape < 1.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw ValidationError("gamma: shape must be positive");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  /// Logarithmic-series variate with pmf proportional to p^k/k, k >= 1,
  /// where p = 1 - exp(-theta), theta > 0 (Kemp's algorithm). Used as the
  /// Frank copula frailty.
  double log_series(double theta) {
    if (!(theta > 0.0))
      throw ValidationError("log_series: theta must be positive");
    const double p = -std::expm1(-theta);
    const double u2 = uniform();
    if (u2 > p) return 1.0;
    const double u1 = uniform();
    const double q = -std::expm1(-u1 * theta);
    if (u2 < q * q) return std::floor(1.0 + std::log(u2) / std::log(q));
    if (u2 > q) return 1.0;
    return 2.0;
  }

 private:
  static void one_round(std::uint32_t counter[4], const std::uint32_t key[2]) {
    const std::uint64_t prod0 = 0xD2511F53ull * counter[0];
    const std::uint64_t prod1 = 0xCD9E8D57ull * counter[2];
    const auto lo0 = static_cast<std::uint32_t>(prod0);
    const auto hi0 = static_cast<std::uint32_t>(prod0 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(prod1);
    const auto hi1 = static_cast<std::uint32_t>(prod1 >> 32);
    const std::uint32_t r0 = hi1 ^ counter[1] ^ key[0];
    const std::uint32_t r2 = hi0 ^ counter[3] ^ key[1];
    counter[0] = r0;
    counter[1] = lo1;
    counter[2] = r2;
    counter[3] = lo0;
  }

  void refill() {
    std::uint32_t counter[4] = {static_cast<std::uint32_t>(index_),
                                static_cast<std::uint32_t>(index_ >> 32),
                                tag_unit_, tag_hi_};
    std::uint32_t key[2] = {key_[0], key_[1]};
    for (int round = 0; round < 10; ++round) {
      one_round(counter, key);
      if (round < 9) {
        key[0] += 0x9E3779B9u;
        key[1] += 0xBB67AE85u;
      }
    }
    for (int i = 0; i < 4; ++i) buffer_[i] = counter[i];
    ++index_;
    avail_ = 4;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint32_t tag_unit_ = 0;
  std::uint32_t tag_hi_ = 0;
  std::uint64_t index_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int avail_ = 0;
};

/// Deterministically derives an independent 64-bit sub-seed, used to hand
/// each (replicate, method) its own seed without coordinating streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t salt_a,
                                 std::uint32_t salt_b) {
  Rng rng(seed, salt_a, Stream::derive, salt_b);
  return rng.next_u64();
}

}  // namespace qrl
