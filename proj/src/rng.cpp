#include "attngeom/rng.hpp"

#include <cmath>

namespace attngeom {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), state_(splitmix64(seed)) {
  if (state_ == 0) state_ = 0x6a09e667f3bcc909ULL;
}

std::uint64_t Rng::next_u64() {
  // xorshift64* with a splitmix-initialized state.
  std::uint64_t x = state_;
  x ^= x >> 12;
  x ^= x << 25;
  x ^= x >> 27;
  state_ = x;
  return x * 0x2545f4914f6cdd1dULL;
}

double Rng::uniform() {
  // 53 random bits into (0, 1); never returns exactly 0 or 1.
  const std::uint64_t bits = next_u64() >> 11;
  return (static_cast<double>(bits) + 0.5) * (1.0 / 9007199254740992.0);
}

double Rng::gaussian() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 6.283185307179586476925286766559 * u2;
  cached_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::index(std::size_t n) {
  // Rejection sampling for an unbiased draw.
  const std::uint64_t limit = ~0ULL - (~0ULL % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

Rng Rng::fork(std::uint64_t stream) const {
  return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x51ed270b7a4fca11ULL)));
}

Matrix Rng::gaussian_matrix(std::size_t rows, std::size_t cols, double sigma) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = sigma * gaussian();
  return m;
}

}  // namespace attngeom
