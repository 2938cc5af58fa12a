#pragma once
// Counter-based RNG. Every stream is keyed by (master seed, replica, round,
// purpose) so environment draws, exploration draws and noise draws never share
// a stream and replicas can run in parallel while staying bit-reproducible.
#include <cstdint>

namespace bandits::rng {

// purpose tags for stream derivation
enum Purpose : uint64_t {
  USER_DRAW = 1,
  ARM_GEN = 2,
  NOISE = 3,
  EXPLORE = 4,
  INIT = 5,
};

struct Stream {
  uint64_t key = 0;
  uint64_t ctr = 0;
  // box-muller produces pairs; keep the spare
  double spare = 0.0;
  bool has_spare = false;

  uint64_t next_u64();
  double next_unit();                 // uniform in [0,1)
  double next_unit_open();            // uniform in (0,1)
  double next_symmetric();            // uniform in (-1,1)
  uint64_t next_below(uint64_t n);    // uniform in [0,n), unbiased
  double next_normal(double sd);
  double next_trunc_normal(double sigma, double R);  // |x| <= R, rejection
};

Stream make_stream(uint64_t master, uint64_t replica, uint64_t round, uint64_t purpose);

}  // namespace bandits::rng
