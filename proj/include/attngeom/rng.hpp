#pragma once

#include <cstdint>
#include <vector>

#include "attngeom/matrix.hpp"

namespace attngeom {

/// Deterministic random stream. Hand-rolled gaussian (Box-Muller) so the
/// byte-for-byte sequence is identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform in (0, 1).
  double uniform();

  /// Standard normal.
  double gaussian();

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  bool bernoulli(double p) { return uniform() < p; }

  /// Independent substream; deterministic in (seed, stream). Substreams with
  /// distinct stream ids are safe to consume in parallel.
  Rng fork(std::uint64_t stream) const;

  Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double sigma = 1.0);

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace attngeom
