#pragma once
// Ground-truth environment: hidden user clustering, per-round user arrival and
// arm-set generation (stochastic i.i.d. or smoothed adversarial), reward
// sampling, and the regret oracle.
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bandits/linalg.hpp"
#include "bandits/rng.hpp"

namespace bandits::env {

enum class GenKind { Pool, Sphere, Cube, PointMass, SmoothedGrid, SmoothedSpiteful };

struct ContextGen {
  GenKind kind = GenKind::Sphere;
  int K = 20;       // arms per round
  int d = 0;
  double L = 1.0;   // norm bound on emitted arms
  double lambda_x = 0.0;     // min eigenvalue of E[x x^T] (exact or MC estimate)
  long long lambda_x_samples = 0;  // 0 = analytic/exact
  std::vector<la::Vec> pool;       // Pool arms, or the mu grid for SmoothedGrid
  la::Vec point;                   // PointMass
  double sigma = 0.0, R = 0.0;     // smoothed perturbation scale / truncation

  bool smoothed() const {
    return kind == GenKind::SmoothedGrid || kind == GenKind::SmoothedSpiteful;
  }
};

ContextGen make_sphere_gen(int d, int K);
ContextGen make_cube_gen(int d, int K);  // lambda_x Monte-Carlo estimated (1e6 samples)
ContextGen make_pool_gen(std::vector<la::Vec> pool, int K);  // lambda_x exact from the pool
ContextGen make_point_gen(la::Vec x, int K);
ContextGen make_smoothed_grid(std::vector<la::Vec> mus, int K, double sigma, double R);
ContextGen make_smoothed_spiteful(int d, int K, double sigma, double R);

struct NoiseSpec {
  double sigma = 0.1;   // reward noise sd (Gaussian, 1-sub-Gaussian for sigma<=1)
  bool clamp = false;   // clamp rewards to [-1,1] (off by default, see README)
};

struct EnvModel {
  int u = 0, d = 0, m = 0;
  std::vector<int> partition;    // user -> cluster, size u, values in [0,m)
  std::vector<la::Vec> prefs;    // m preference vectors, ||theta|| <= 1
  double gap = 0.0;              // min pairwise distance between prefs (0 if m==1)
  NoiseSpec noise;
  ContextGen gen;
};

struct RoundInput {
  long long t = 0;
  int user = 0;
  std::vector<la::Vec> arms;
};

// per-round derived streams: one purpose each for user draw, arm generation,
// reward noise, and policy exploration
struct RoundRng {
  rng::Stream user, arms, noise, explore;
};
RoundRng round_rng(uint64_t master, uint64_t replica, long long t);

// mutable per-run generator state (spiteful adversary digest, pool scratch)
struct GenState {
  la::SymMatrix digest;       // sum of emitted arm outer products
  std::vector<int> scratch;   // pool subsampling
  explicit GenState(int d = 0) : digest(d) {}
};

RoundInput next_round(const EnvModel& e, long long t, RoundRng& rr, GenState& gs);
la::Vec sample_truncated_gaussian(double sigma, double R, int d, rng::Stream& st);
double reward(const EnvModel& e, int user, const la::Vec& x, RoundRng& rr);
double instant_regret(const EnvModel& e, const RoundInput& in, int chosen);

// Synthetic generation: u_raw raw unit vectors, `selected` of them become the
// active population re-indexed 0..selected-1, randomly partitioned into m
// balanced groups whose preference vector is the member mean. Returns the env
// (gen = Pool over `total_arms` unit vectors) and the pool itself.
std::pair<EnvModel, std::vector<la::Vec>> make_synthetic(int u_raw, int d, int total_arms,
                                                         int m, int selected,
                                                         rng::Stream& st);

struct ParseError : std::runtime_error {
  int line;  // 1-based
  ParseError(const std::string& msg, int line_no)
      : std::runtime_error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
};

EnvModel load_features(const std::string& path);
void save_features(const EnvModel& e, const std::string& path);

void validate_env(const EnvModel& e);  // throws std::runtime_error on violation

}  // namespace bandits::env
