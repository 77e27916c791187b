#include "rmflow/rng.hpp"

#include <cmath>

namespace rmflow {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& w : s_) w = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  // 53 random bits -> [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

double Rng::normal(double mu, double sigma) { return mu + sigma * normal(); }

void Rng::fill_normal(std::span<double> out) {
  for (auto& v : out) v = normal();
}

std::vector<double> Rng::normal_vec(int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  fill_normal(v);
  return v;
}

std::uint64_t Rng::below(std::uint64_t n) { return next_u64() % n; }

Rng Rng::child(std::uint64_t a, std::uint64_t b) const {
  std::uint64_t x = seed_;
  std::uint64_t h = splitmix64(x);
  x = h ^ (a + 0x632be59bd9b4e019ULL);
  h = splitmix64(x);
  x = h ^ (b + 0x9e3779b97f4a7c15ULL);
  h = splitmix64(x);
  return Rng(h);
}

}  // namespace rmflow
