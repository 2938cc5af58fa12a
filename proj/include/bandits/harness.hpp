#pragma once
// Experiment engine: runs (policy x seed) grids against one environment,
// records traces, aggregates regret curves, and hosts the verification
// checks (eigenvalue growth, confidence coverage, aggregation consistency).
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bandits/agents.hpp"
#include "bandits/env.hpp"

namespace bandits::hn {

struct RunConfig {
  // environment (either env_file or a synthetic description)
  std::string env_file;            // ENVV1 feature file; empty -> synthesize
  std::string gen = "pool";        // pool | sphere | cube | smoothed-grid | smoothed-spiteful
  int u_raw = 40;                  // raw synthetic population
  int selected = 20;               // active users drawn from the population
  int m = 4;                       // ground-truth clusters
  int d = 10;
  int total_arms = 200;            // synthetic pool size
  int K = 20;                      // arms presented per round
  uint64_t env_seed = 12345;       // synthetic-generation stream
  double noise_sigma = 0.1;
  bool clamp_rewards = false;
  double smoothed_sigma = 0.31622776601683794;  // sqrt(0.1)
  double smoothed_R = 0.0;         // truncation radius; 0 -> 3 sigma

  // run grid
  std::vector<std::string> policies{"UniCLUB"};
  long long T = 10000;
  std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
  double lambda = 1.0;
  double delta = 0.1;
  double c1 = 1.0;                 // smoothed-diversity constant
  int alpha = 2;                   // phase exponent
  double exploration_scale = 1.0;
  double threshold_scale = 1.0;
  long long snapshot_every = 0;    // 0 -> max(1, T/100)
  std::string out_dir = "out";
};

void validate_config(const RunConfig& cfg);  // throws std::invalid_argument with key path

// env from file or synthetic per cfg, arm generator swapped in per cfg.gen
env::EnvModel build_env(const RunConfig& cfg);

// confidence parameters for one policy on one environment (beta included;
// SA variants get the smoothed lambda_x / L substitution first)
cl::ConfidenceParams params_for(const RunConfig& cfg, const env::EnvModel& e, ag::PolicyKind k);

struct RunTrace {
  std::string policy;
  uint64_t seed = 0;
  long long T = 0;
  std::vector<int> users, arms;      // per round, 0-based
  la::Vec rewards, regrets, cum_regrets;
  std::vector<std::pair<long long, std::vector<std::vector<int>>>> snapshots;
  std::vector<std::vector<int>> final_partition;
  double recovery = 0.0;
  double wall_seconds = 0.0;
};

RunTrace run_one(const RunConfig& cfg, const env::EnvModel& e, ag::PolicyKind kind,
                 uint64_t seed);

// compensated (Kahan) prefix sum in ascending index order; run_one accumulates
// cumulative regret with exactly this routine
la::Vec kahan_prefix_sum(const la::Vec& x);

// Rand index of two labelings: fraction of pairs classified consistently.
// Single-element (or empty) inputs have no pairs and score 1.
double rand_index(const std::vector<int>& a, const std::vector<int>& b);
std::vector<int> partition_labels(const std::vector<std::vector<int>>& parts, int u);
double recovery_rate(const RunTrace& tr, const env::EnvModel& e);

struct AggregateReport {
  std::string policy;
  long long T = 0;
  std::vector<uint64_t> seeds;       // ascending
  la::Vec mean_curve, halfwidth_curve;  // halfwidth = sd_{n-1} / sqrt(n), 0 for n=1
  double recovery_rate = 0.0;        // mean over seeds
  double exploration_scale = 1.0;
  double threshold_scale = 1.0;
  double mean_wall_seconds = 0.0;
};

AggregateReport aggregate(const std::vector<RunTrace>& traces);

struct GridOutput {
  std::vector<AggregateReport> reports;          // one per policy, config order
  std::vector<std::vector<RunTrace>> traces;     // [policy][seed index, ascending]
};

// runs every (policy, seed) pair, parallel over pairs, capped by
// BANDIT_CLUSTERS_THREADS; deterministic regardless of the cap
GridOutput run_grid(const RunConfig& cfg, const env::EnvModel& e);

int thread_cap();  // BANDIT_CLUSTERS_THREADS, else the OpenMP default

// ---- verification checks ----

struct EigenGrowthReport {
  bool precondition_met = false;   // n_rounds >= (8L^2/lambda_x) log(u d/delta), u=1
  long long n_rounds = 0;
  long long threshold_rounds = 0;
  int trials = 0;
  int violations = 0;              // lambda_min(S) < lambda_x n/2 at the end
  double violation_rate = 0.0;
  double delta = 0.0;
  bool pass = false;               // precondition met and rate <= delta
};

// n_rounds = 0 runs each trial exactly to the computed threshold round count.
EigenGrowthReport verify_eigengrowth(const env::ContextGen& gen, int trials,
                                     long long n_rounds, double delta, uint64_t seed);

struct CoverageReport {
  long long checked = 0;     // UCB rounds with ground-truth-correct clustering
  long long violations = 0;  // |pred - x . theta| > width
  double rate = 0.0;
  double delta = 0.0;
  double bound = 0.0;        // delta + 3 sqrt(delta (1-delta) / checked)
  bool pass = false;
};

// beta_override >= 0 replaces the computed beta (probe hook); negative keeps it
CoverageReport verify_coverage(RunConfig cfg, const env::EnvModel& e, ag::PolicyKind kind,
                               double delta, double beta_override = -1.0);

// ---- artifacts ----

// header t,user,arm,reward,regret,cum_regret; one row per round; t is 1-based;
// floats as %.17g; LF line endings
void write_trace_csv(const RunTrace& tr, const std::string& path);
// one {"round": t, "clusters": [[...], ...]} object per line
void write_snapshots(const RunTrace& tr, const std::string& path);
// aggregate report plus the fully resolved config
void write_aggregate_json(const AggregateReport& rep, const RunConfig& cfg,
                          const std::string& path);

std::string trace_path(const RunConfig& cfg, const std::string& policy, uint64_t seed);
std::string snapshot_path(const RunConfig& cfg, const std::string& policy, uint64_t seed);
std::string aggregate_path(const RunConfig& cfg, const std::string& policy);

}  // namespace bandits::hn
