#include "bandits/rng.hpp"

#include <cmath>

namespace bandits::rng {

namespace {
constexpr uint64_t GOLDEN = 0x9e3779b97f4a7c15ULL;

// splitmix64 finalizer; used both to mix the key and as the output function
inline uint64_t mix64(uint64_t z) {
  z += GOLDEN;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

Stream make_stream(uint64_t master, uint64_t replica, uint64_t round, uint64_t purpose) {
  uint64_t k = mix64(master);
  k = mix64(k ^ (replica * GOLDEN));
  k = mix64(k ^ (round * GOLDEN));
  k = mix64(k ^ (purpose * GOLDEN));
  return Stream{k, 0, 0.0, false};
}

uint64_t Stream::next_u64() { return mix64(key ^ (++ctr) * GOLDEN); }

double Stream::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Stream::next_unit_open() {
  // (0,1): shift into the open interval for safe log()
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Stream::next_symmetric() { return 2.0 * next_unit() - 1.0; }

uint64_t Stream::next_below(uint64_t n) {
  if (n <= 1) return 0;
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Stream::next_normal(double sd) {
  if (has_spare) {
    has_spare = false;
    return spare * sd;
  }
  const double u1 = next_unit_open();
  const double u2 = next_unit();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 6.283185307179586476925286766559 * u2;
  spare = r * std::sin(a);
  has_spare = true;
  return r * std::cos(a) * sd;
}

double Stream::next_trunc_normal(double sigma, double R) {
  // per-coordinate rejection; acceptance prob >= erf(R/(sigma*sqrt(2))) > 0
  double z;
  do {
    z = next_normal(sigma);
  } while (!(std::fabs(z) <= R));
  return z;
}

}  // namespace bandits::rng
