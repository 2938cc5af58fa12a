// harness: compensated sums, rand index, aggregation, run determinism,
// thread-cap independence, artifact byte formats, verification checks
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bandits/harness.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace bandits;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir() {
  const fs::path p = fs::temp_directory_path() / "bandit_harness_test";
  fs::create_directories(p);
  return p;
}

// small synthetic config that runs in milliseconds
hn::RunConfig small_cfg() {
  hn::RunConfig cfg;
  cfg.u_raw = 10;
  cfg.selected = 5;
  cfg.m = 2;
  cfg.d = 4;
  cfg.total_arms = 30;
  cfg.K = 5;
  cfg.env_seed = 9;
  cfg.noise_sigma = 0.1;
  cfg.T = 300;
  cfg.seeds = {2, 5};
  cfg.policies = {"CLUB", "LinUCBInd"};
  cfg.threshold_scale = 0.07;
  cfg.out_dir = (temp_dir() / "out").string();
  return cfg;
}

bool traces_equal(const hn::RunTrace& a, const hn::RunTrace& b) {
  return a.policy == b.policy && a.seed == b.seed && a.T == b.T && a.users == b.users &&
         a.arms == b.arms && a.rewards == b.rewards && a.regrets == b.regrets &&
         a.cum_regrets == b.cum_regrets && a.snapshots == b.snapshots &&
         a.final_partition == b.final_partition && a.recovery == b.recovery;
}

}  // namespace

TEST_CASE("kahan prefix sum matches a long-double oracle") {
  rng::Stream st = rng::make_stream(41, 0, 0, rng::INIT);
  la::Vec x(2000);
  for (double& v : x) v = st.next_symmetric() * std::pow(10.0, static_cast<double>(st.next_below(9)));
  const la::Vec got = hn::kahan_prefix_sum(x);
  REQUIRE(got.size() == x.size());
  long double run = 0.0L;
  long double abs_sum = 0.0L;
  for (size_t i = 0; i < x.size(); ++i) {
    run += x[i];
    abs_sum += std::abs(x[i]);
    CHECK(std::abs(static_cast<long double>(got[i]) - run) <=
          1e-15L * std::max(abs_sum, 1.0L));
  }
}

TEST_CASE("kahan prefix sum keeps sub-ulp increments naive addition drops") {
  // four half-ulp increments on 1.0: the true sum 1 + 2^-51 is representable,
  // the compensation recovers it exactly, while naive accumulation rounds
  // each add back to 1.0 (dyadic values make every step exact to trace)
  const double tick = std::ldexp(1.0, -53);
  const la::Vec x = {1.0, tick, tick, tick, tick};
  double naive = 0.0;
  for (double v : x) naive += v;
  CHECK(naive == 1.0);  // the defect the compensated sum exists to fix
  const la::Vec got = hn::kahan_prefix_sum(x);
  CHECK(got.back() == 1.0 + std::ldexp(1.0, -51));
  CHECK(hn::kahan_prefix_sum({}).empty());
  CHECK(hn::kahan_prefix_sum({3.5}) == la::Vec{3.5});
}

TEST_CASE("rand index: frozen cases and a pair-scan oracle") {
  CHECK(hn::rand_index({0, 0, 1}, {5, 5, 9}) == 1.0);  // relabeling is invisible
  CHECK(hn::rand_index({0, 0, 0}, {0, 1, 2}) == 0.0);  // every pair disagrees
  CHECK(hn::rand_index({}, {}) == 1.0);
  CHECK(hn::rand_index({7}, {3}) == 1.0);
  CHECK_THROWS_AS(hn::rand_index({0, 1}, {0}), std::invalid_argument);

  rng::Stream st = rng::make_stream(42, 0, 0, rng::INIT);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 25;
    std::vector<int> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = static_cast<int>(st.next_below(4));
      b[i] = static_cast<int>(st.next_below(4));
    }
    long long agree = 0, total = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        ++total;
        const bool same_a = a[i] == a[j], same_b = b[i] == b[j];
        if (same_a == same_b) ++agree;
      }
    CHECK(hn::rand_index(a, b) == static_cast<double>(agree) / static_cast<double>(total));
  }
}

TEST_CASE("partition labels and recovery rate") {
  CHECK(hn::partition_labels({{2, 0}, {1}}, 3) == std::vector<int>{0, 1, 0});
  env::EnvModel e;
  e.u = 4;
  e.partition = {0, 0, 1, 1};
  hn::RunTrace tr;
  tr.final_partition = {{0, 1}, {2, 3}};
  CHECK(hn::recovery_rate(tr, e) == 1.0);
  tr.final_partition = {{0, 1, 2, 3}};
  // one giant cluster vs two pairs: the 2 within-pair agreements survive,
  // the 4 cross pairs disagree -> 2/6
  CHECK(hn::recovery_rate(tr, e) == doctest::Approx(2.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("aggregate averages curves over seeds, sorted ascending") {
  auto mk = [](uint64_t seed, double final_regret, double rec, double wall) {
    hn::RunTrace tr;
    tr.policy = "CLUB";
    tr.seed = seed;
    tr.T = 1;
    tr.cum_regrets = {final_regret};
    tr.recovery = rec;
    tr.wall_seconds = wall;
    return tr;
  };
  // seeds arrive out of order on purpose
  const std::vector<hn::RunTrace> traces = {mk(3, 3.0, 1.0, 0.2), mk(1, 1.0, 0.5, 0.4),
                                            mk(2, 2.0, 0.9, 0.6)};
  const hn::AggregateReport rep = hn::aggregate(traces);
  CHECK(rep.policy == "CLUB");
  CHECK(rep.T == 1);
  CHECK(rep.seeds == std::vector<uint64_t>{1, 2, 3});
  CHECK(rep.mean_curve == la::Vec{2.0});
  // sd_{n-1} = sqrt((1+0+1)/2) = 1, halfwidth = 1/sqrt(3)
  CHECK(rep.halfwidth_curve[0] == 1.0 / std::sqrt(3.0));
  CHECK(rep.recovery_rate == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(rep.mean_wall_seconds == doctest::Approx(0.4).epsilon(1e-15));

  // a single seed has no spread estimate
  const hn::AggregateReport solo = hn::aggregate({mk(7, 5.0, 1.0, 0.1)});
  CHECK(solo.halfwidth_curve == la::Vec{0.0});
  CHECK_THROWS_AS(hn::aggregate({}), std::invalid_argument);
  auto longer = mk(4, 1.0, 1.0, 0.1);
  longer.T = 2;
  longer.cum_regrets = {1.0, 2.0};
  CHECK_THROWS_AS(hn::aggregate({mk(1, 1.0, 1.0, 0.1), longer}), std::invalid_argument);
}

TEST_CASE("config validation rejects malformed settings by key") {
  hn::RunConfig cfg = small_cfg();
  cfg.T = 0;
  CHECK_THROWS_AS(hn::validate_config(cfg), std::invalid_argument);
  cfg = small_cfg();
  cfg.policies = {};
  CHECK_THROWS_AS(hn::validate_config(cfg), std::invalid_argument);
  cfg = small_cfg();
  cfg.policies = {"NotAPolicy"};
  CHECK_THROWS_AS(hn::validate_config(cfg), std::invalid_argument);
  cfg = small_cfg();
  cfg.gen = "dodecahedron";
  CHECK_THROWS_AS(hn::validate_config(cfg), std::invalid_argument);
  cfg = small_cfg();
  cfg.K = 0;
  CHECK_THROWS_AS(hn::validate_config(cfg), std::invalid_argument);
  cfg = small_cfg();
  cfg.selected = cfg.u_raw + 1;
  CHECK_THROWS_AS(hn::build_env(cfg), std::invalid_argument);
  cfg = small_cfg();
  cfg.K = cfg.total_arms + 1;  // pool cannot serve more arms than it holds
  CHECK_THROWS_AS(hn::build_env(cfg), std::invalid_argument);
}

TEST_CASE("build_env synthesizes a valid environment per config") {
  const hn::RunConfig cfg = small_cfg();
  const env::EnvModel e = hn::build_env(cfg);
  CHECK(e.u == cfg.selected);
  CHECK(e.d == cfg.d);
  CHECK(e.m == cfg.m);
  CHECK(e.gen.kind == env::GenKind::Pool);
  CHECK(e.gen.K == cfg.K);
  CHECK(static_cast<int>(e.gen.pool.size()) == cfg.total_arms);
  CHECK(e.noise.sigma == cfg.noise_sigma);
  CHECK_NOTHROW(env::validate_env(e));
  // same seed, same environment
  const env::EnvModel e2 = hn::build_env(cfg);
  CHECK(e2.partition == e.partition);
  CHECK(e2.prefs == e.prefs);
  CHECK(e2.gap == e.gap);

  hn::RunConfig sph = cfg;
  sph.gen = "sphere";
  const env::EnvModel es = hn::build_env(sph);
  CHECK(es.gen.kind == env::GenKind::Sphere);
  CHECK(es.gen.lambda_x == 1.0 / cfg.d);
  CHECK(es.partition == e.partition);  // generator swap leaves the users alone
}

TEST_CASE("params_for wires env quantities into the confidence parameters") {
  const hn::RunConfig cfg = small_cfg();
  const env::EnvModel e = hn::build_env(cfg);
  const cl::ConfidenceParams p = hn::params_for(cfg, e, ag::PolicyKind::Club);
  CHECK(p.lambda == cfg.lambda);
  CHECK(p.delta == cfg.delta);
  CHECK(p.L == e.gen.L);
  CHECK(p.lambda_x == e.gen.lambda_x);
  CHECK(p.u == e.u);
  CHECK(p.d == e.d);
  CHECK(p.T_horizon == cfg.T);
  CHECK(p.threshold_scale == cfg.threshold_scale);
  REQUIRE(p.gamma.has_value());
  CHECK(*p.gamma == e.gap);
  CHECK(p.beta == cl::compute_beta(e.d, cfg.T, e.gen.L, cfg.lambda, cfg.delta));

  // smoothed policies swap diversity and norm bounds before computing beta
  const cl::ConfidenceParams q = hn::params_for(cfg, e, ag::PolicyKind::SaClub);
  const double sig = cfg.smoothed_sigma;
  const cl::ConfidenceParams want =
      ag::smoothed_params(p, sig, 3.0 * sig, static_cast<double>(e.gen.K), e.d, cfg.c1);
  CHECK(q.lambda_x == want.lambda_x);
  CHECK(q.L == want.L);
  CHECK(q.beta == cl::compute_beta(e.d, cfg.T, want.L, cfg.lambda, cfg.delta));
}

TEST_CASE("run_one is deterministic and accumulates regret with the kahan sum") {
  const hn::RunConfig cfg = small_cfg();
  const env::EnvModel e = hn::build_env(cfg);
  const hn::RunTrace a = hn::run_one(cfg, e, ag::PolicyKind::Club, 7);
  const hn::RunTrace b = hn::run_one(cfg, e, ag::PolicyKind::Club, 7);
  CHECK(traces_equal(a, b));

  CHECK(a.T == cfg.T);
  CHECK(static_cast<long long>(a.rewards.size()) == cfg.T);
  CHECK(a.cum_regrets == hn::kahan_prefix_sum(a.regrets));
  for (long long t = 0; t < cfg.T; ++t) {
    CHECK(a.users[t] >= 0);
    CHECK(a.users[t] < e.u);
    CHECK(a.arms[t] >= 0);
    CHECK(a.arms[t] < cfg.K);
    CHECK(a.regrets[t] >= 0.0);
    CHECK(std::isfinite(a.rewards[t]));
  }
  // snapshots are sampled every max(1, T/100) rounds by default and always
  // include the final round
  REQUIRE_FALSE(a.snapshots.empty());
  CHECK(a.snapshots.back().first == cfg.T);
  CHECK(a.snapshots.back().second == a.final_partition);

  // a different seed plays a different trajectory
  const hn::RunTrace c = hn::run_one(cfg, e, ag::PolicyKind::Club, 8);
  CHECK(c.rewards != a.rewards);
}

TEST_CASE("run_grid reproduces run_one, bitwise, for every cell") {
  const hn::RunConfig cfg = small_cfg();
  const env::EnvModel e = hn::build_env(cfg);
  const hn::GridOutput grid = hn::run_grid(cfg, e);
  REQUIRE(grid.traces.size() == cfg.policies.size());
  REQUIRE(grid.reports.size() == cfg.policies.size());
  for (size_t pi = 0; pi < cfg.policies.size(); ++pi) {
    const ag::PolicyKind kind = ag::policy_kind_from_string(cfg.policies[pi]);
    REQUIRE(grid.traces[pi].size() == cfg.seeds.size());
    for (size_t si = 0; si < cfg.seeds.size(); ++si)
      CHECK(traces_equal(grid.traces[pi][si], hn::run_one(cfg, e, kind, cfg.seeds[si])));
    CHECK(grid.reports[pi].policy == cfg.policies[pi]);
    CHECK(grid.reports[pi].seeds == cfg.seeds);
  }
}

TEST_CASE("thread cap honors the environment variable; results ignore it") {
  const hn::RunConfig cfg = small_cfg();
  const env::EnvModel e = hn::build_env(cfg);

  setenv("BANDIT_CLUSTERS_THREADS", "3", 1);
  CHECK(hn::thread_cap() == 3);
  const hn::GridOutput wide = hn::run_grid(cfg, e);
  setenv("BANDIT_CLUSTERS_THREADS", "1", 1);
  CHECK(hn::thread_cap() == 1);
  const hn::GridOutput narrow = hn::run_grid(cfg, e);
  unsetenv("BANDIT_CLUSTERS_THREADS");
  CHECK(hn::thread_cap() >= 1);

  for (size_t pi = 0; pi < wide.traces.size(); ++pi)
    for (size_t si = 0; si < wide.traces[pi].size(); ++si)
      CHECK(traces_equal(wide.traces[pi][si], narrow.traces[pi][si]));
}

TEST_CASE("trace CSV bytes are exactly specified") {
  hn::RunTrace tr;
  tr.policy = "CLUB";
  tr.seed = 7;
  tr.T = 2;
  tr.users = {0, 3};
  tr.arms = {1, 0};
  tr.rewards = {0.5, -0.25};
  tr.regrets = {0.0, 0.125};
  tr.cum_regrets = {0.0, 0.125};
  const std::string path = (temp_dir() / "trace.csv").string();
  hn::write_trace_csv(tr, path);
  CHECK(slurp(path) ==
        "t,user,arm,reward,regret,cum_regret\n"
        "1,0,1,0.5,0,0\n"
        "2,3,0,-0.25,0.125,0.125\n");

  // %.17g keeps full precision on non-dyadic values: the value round-trips
  tr.rewards[0] = 0.1 + 0.2;
  hn::write_trace_csv(tr, path);
  const std::string body = slurp(path);
  CHECK(body.find("0.30000000000000004") != std::string::npos);
}

TEST_CASE("snapshot JSONL bytes are exactly specified") {
  hn::RunTrace tr;
  tr.snapshots = {{10, {{0, 1}, {2}}}, {20, {{0}, {1}, {2}}}};
  const std::string path = (temp_dir() / "snaps.jsonl").string();
  hn::write_snapshots(tr, path);
  CHECK(slurp(path) ==
        "{\"round\":10,\"clusters\":[[0,1],[2]]}\n"
        "{\"round\":20,\"clusters\":[[0],[1],[2]]}\n");
}

TEST_CASE("aggregate JSON carries the report and resolved config in fixed order") {
  const hn::RunConfig cfg = small_cfg();
  const env::EnvModel e = hn::build_env(cfg);
  hn::RunConfig one = cfg;
  one.policies = {"CLUB"};
  one.seeds = {2, 5};
  std::vector<hn::RunTrace> traces;
  for (uint64_t s : one.seeds) traces.push_back(hn::run_one(one, e, ag::PolicyKind::Club, s));
  const hn::AggregateReport rep = hn::aggregate(traces);
  const std::string path = (temp_dir() / "agg.json").string();
  hn::write_aggregate_json(rep, one, path);

  const nlohmann::ordered_json j = nlohmann::ordered_json::parse(slurp(path));
  std::vector<std::string> keys;
  for (const auto& item : j.items()) keys.push_back(item.key());
  CHECK(keys == std::vector<std::string>{"policy", "T", "seeds", "mean_curve",
                                         "halfwidth_curve", "recovery_rate",
                                         "exploration_scale", "threshold_scale",
                                         "mean_wall_seconds", "config"});
  CHECK(j["policy"] == "CLUB");
  CHECK(j["T"] == one.T);
  CHECK(j["seeds"] == std::vector<uint64_t>{2, 5});
  CHECK(j["mean_curve"].size() == static_cast<size_t>(one.T));
  // the config block echoes every resolved setting flat, by field name
  CHECK(j["config"]["T"] == one.T);
  CHECK(j["config"]["policies"] == std::vector<std::string>{"CLUB"});
  CHECK(j["config"]["env_seed"] == one.env_seed);
  CHECK(j["config"]["threshold_scale"] == one.threshold_scale);
  CHECK(j["config"]["out_dir"] == one.out_dir);
}

TEST_CASE("artifact paths follow the documented pattern") {
  hn::RunConfig cfg;
  cfg.out_dir = "results";
  CHECK(hn::trace_path(cfg, "CLUB", 7) == "results/CLUB_seed7.csv");
  CHECK(hn::snapshot_path(cfg, "CLUB", 7) == "results/CLUB_seed7_snapshots.jsonl");
  CHECK(hn::aggregate_path(cfg, "CLUB") == "results/CLUB_aggregate.json");
}

TEST_CASE("eigenvalue growth check passes on the sphere and flags short runs") {
  const env::ContextGen gen = env::make_sphere_gen(3, 4);
  const hn::EigenGrowthReport rep = hn::verify_eigengrowth(gen, 60, 0, 0.1, 5);
  CHECK(rep.precondition_met);
  CHECK(rep.trials == 60);
  CHECK(rep.n_rounds == rep.threshold_rounds);
  CHECK(rep.violation_rate == static_cast<double>(rep.violations) / rep.trials);
  CHECK(rep.pass);

  // too few rounds for the guarantee: reported, not silently accepted
  const hn::EigenGrowthReport short_run = hn::verify_eigengrowth(gen, 10, 5, 0.1, 5);
  CHECK_FALSE(short_run.precondition_met);
  CHECK_FALSE(short_run.pass);
}

TEST_CASE("coverage check separates honest widths from a zeroed probe") {
  hn::RunConfig cfg = small_cfg();
  cfg.m = 1;  // single ground-truth cluster: the trivial partition is correct
  cfg.selected = 4;
  cfg.u_raw = 8;
  cfg.d = 3;
  cfg.T = 400;
  cfg.noise_sigma = 0.05;
  cfg.threshold_scale = 1.0;  // theoretical thresholds: no spurious splits
  cfg.policies = {"CLUB"};
  const env::EnvModel e = hn::build_env(cfg);

  // the report pools rounds over every seed in the config
  const long long pooled = cfg.T * static_cast<long long>(cfg.seeds.size());
  const hn::CoverageReport honest = hn::verify_coverage(cfg, e, ag::PolicyKind::Club, 0.05);
  CHECK(honest.checked == pooled);  // every round is a UCB round with correct clustering
  CHECK(honest.pass);
  CHECK(honest.bound ==
        0.05 + 3.0 * std::sqrt(0.05 * 0.95 / static_cast<double>(honest.checked)));

  // beta = 0 collapses every width to zero: essentially every round violates
  const hn::CoverageReport broken =
      hn::verify_coverage(cfg, e, ag::PolicyKind::Club, 0.05, 0.0);
  CHECK(broken.checked == pooled);
  CHECK_FALSE(broken.pass);
  CHECK(broken.rate > 0.9);
}
