#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace rmflow {

/// Deterministic, platform-independent PRNG (xoshiro256** seeded by
/// splitmix64, normals via Box-Muller). We avoid <random> distributions
/// because their output is implementation-defined, and fixed seeds must
/// reproduce identical streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform on [0, 1).
  double uniform();

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi);

  /// Standard normal.
  double normal();

  /// Normal with given mean / stddev.
  double normal(double mu, double sigma);

  void fill_normal(std::span<double> out);
  std::vector<double> normal_vec(int n);

  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream keyed by (a, b). Streams derived from the
  /// same seed and keys are identical across runs and threads, which is
  /// what makes per-sample parallelism reproducible.
  Rng child(std::uint64_t a, std::uint64_t b = 0) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rmflow
