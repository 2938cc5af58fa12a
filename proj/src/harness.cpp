#include "bandits/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <stdexcept>

#include "json.hpp"

namespace bandits::hn {

using ordered_json = nlohmann::ordered_json;

void validate_config(const RunConfig& cfg) {
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if (cfg.T < 1) fail("run.T must be >= 1");
  if (cfg.seeds.empty()) fail("run.seeds must be nonempty");
  {
    std::vector<uint64_t> s = cfg.seeds;
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end()) fail("run.seeds must be distinct");
  }
  if (!(cfg.exploration_scale > 0.0)) fail("run.exploration_scale must be > 0");
  if (!(cfg.threshold_scale > 0.0)) fail("run.threshold_scale must be > 0");
  if (!(cfg.lambda > 0.0)) fail("run.lambda must be > 0");
  if (!(cfg.delta > 0.0 && cfg.delta < 1.0)) fail("run.delta must lie in (0,1)");
  if (!(cfg.c1 > 0.0)) fail("run.c1 must be > 0");
  if (cfg.alpha < 0) fail("run.alpha must be >= 0");
  if (cfg.snapshot_every < 0) fail("run.snapshot_every must be >= 0");
  if (cfg.policies.empty()) fail("run.policies must be nonempty");
  for (const std::string& nm : cfg.policies) {
    try {
      ag::policy_kind_from_string(nm);
    } catch (const std::exception& ex) {
      fail(std::string("run.policies: ") + ex.what());
    }
  }
  if (cfg.gen != "pool" && cfg.gen != "sphere" && cfg.gen != "cube" &&
      cfg.gen != "smoothed-grid" && cfg.gen != "smoothed-spiteful")
    fail("env.gen must be one of pool|sphere|cube|smoothed-grid|smoothed-spiteful");
  if (cfg.K < 1) fail("env.K must be >= 1");
  if (cfg.env_file.empty()) {
    if (cfg.d < 1) fail("env.d must be >= 1");
    if (cfg.u_raw < 1) fail("env.u_raw must be >= 1");
    if (cfg.selected < 1 || cfg.selected > cfg.u_raw)
      fail("env.selected must lie in [1, env.u_raw]");
    if (cfg.m < 1 || cfg.m > cfg.selected) fail("env.m must lie in [1, env.selected]");
    if (cfg.total_arms < 1) fail("env.total_arms must be >= 1");
    if (cfg.gen == "pool" && cfg.K > cfg.total_arms)
      fail("env.K must not exceed env.total_arms for the pool generator");
  }
  if (!(cfg.noise_sigma >= 0.0)) fail("env.noise_sigma must be >= 0");
  if (!(cfg.smoothed_sigma > 0.0)) fail("env.smoothed.sigma must be > 0");
  if (cfg.smoothed_R < 0.0) fail("env.smoothed.R must be >= 0");
}

env::EnvModel build_env(const RunConfig& cfg) {
  validate_config(cfg);
  env::EnvModel e;
  std::vector<la::Vec> pool;
  if (!cfg.env_file.empty()) {
    e = env::load_features(cfg.env_file);
    pool = e.gen.pool;
  } else {
    rng::Stream st = rng::make_stream(cfg.env_seed, 0, 0, rng::INIT);
    auto [em, pl] =
        env::make_synthetic(cfg.u_raw, cfg.d, cfg.total_arms, cfg.m, cfg.selected, st);
    e = std::move(em);
    pool = std::move(pl);
  }
  e.noise.sigma = cfg.noise_sigma;
  e.noise.clamp = cfg.clamp_rewards;
  const double sig = cfg.smoothed_sigma;
  const double rad = cfg.smoothed_R > 0.0 ? cfg.smoothed_R : 3.0 * sig;
  if (cfg.gen == "pool") {
    if (cfg.K > static_cast<int>(pool.size()))
      throw std::invalid_argument("env.K exceeds the arm pool size");
    e.gen = env::make_pool_gen(pool, cfg.K);
  } else if (cfg.gen == "sphere") {
    e.gen = env::make_sphere_gen(e.d, cfg.K);
  } else if (cfg.gen == "cube") {
    e.gen = env::make_cube_gen(e.d, cfg.K);
  } else if (cfg.gen == "smoothed-grid") {
    e.gen = env::make_smoothed_grid(pool, cfg.K, sig, rad);
  } else {  // smoothed-spiteful
    e.gen = env::make_smoothed_spiteful(e.d, cfg.K, sig, rad);
  }
  env::validate_env(e);
  return e;
}

cl::ConfidenceParams params_for(const RunConfig& cfg, const env::EnvModel& e,
                                ag::PolicyKind k) {
  cl::ConfidenceParams p;
  p.lambda = cfg.lambda;
  p.delta = cfg.delta;
  p.L = e.gen.L;
  p.lambda_x = e.gen.lambda_x;
  p.gamma = (e.m >= 2 && e.gap > 0.0) ? std::optional<double>(e.gap) : std::nullopt;
  p.T_horizon = cfg.T;
  p.u = e.u;
  p.d = e.d;
  p.exploration_scale = cfg.exploration_scale;
  p.threshold_scale = cfg.threshold_scale;
  if (k == ag::PolicyKind::SaClub || k == ag::PolicyKind::SaSclub) {
    const double sig = e.gen.smoothed() ? e.gen.sigma : cfg.smoothed_sigma;
    const double rad = e.gen.smoothed()
                           ? e.gen.R
                           : (cfg.smoothed_R > 0.0 ? cfg.smoothed_R : 3.0 * sig);
    p = ag::smoothed_params(p, sig, rad, static_cast<double>(e.gen.K), e.d, cfg.c1);
  }
  p.beta = cl::compute_beta(e.d, cfg.T, p.L, p.lambda, p.delta);
  return p;
}

la::Vec kahan_prefix_sum(const la::Vec& x) {
  la::Vec out(x.size());
  double cum = 0.0, comp = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double y = x[i] - comp;
    const double s = cum + y;
    comp = (s - cum) - y;
    cum = s;
    out[i] = cum;
  }
  return out;
}

RunTrace run_one(const RunConfig& cfg, const env::EnvModel& e, ag::PolicyKind kind,
                 uint64_t seed) {
  const auto started = std::chrono::steady_clock::now();
  const cl::ConfidenceParams p = params_for(cfg, e, kind);
  ag::Policy pol(kind, p, cfg.alpha);
  env::GenState gs(e.d);
  const long long T = cfg.T;

  RunTrace tr;
  tr.policy = ag::to_string(kind);
  tr.seed = seed;
  tr.T = T;
  tr.users.resize(T);
  tr.arms.resize(T);
  tr.rewards.resize(T);
  tr.regrets.resize(T);
  tr.cum_regrets.resize(T);
  const long long snap =
      cfg.snapshot_every > 0 ? cfg.snapshot_every : std::max<long long>(1, T / 100);

  double cum = 0.0, comp = 0.0;
  for (long long t = 1; t <= T; ++t) {
    try {
      env::RoundRng rr = env::round_rng(seed, 0, t);
      env::RoundInput in = env::next_round(e, t, rr, gs);
      const ag::Decision dec = pol.select(in, rr.explore);
      const double r = env::reward(e, in.user, in.arms[dec.arm], rr);
      pol.observe(in, dec.arm, r);
      const double reg = env::instant_regret(e, in, dec.arm);
      // compensated running sum; keep in sync with kahan_prefix_sum
      const double y = reg - comp;
      const double s = cum + y;
      comp = (s - cum) - y;
      cum = s;
      tr.users[t - 1] = in.user;
      tr.arms[t - 1] = dec.arm;
      tr.rewards[t - 1] = r;
      tr.regrets[t - 1] = reg;
      tr.cum_regrets[t - 1] = cum;
      if (t % snap == 0 || t == T) tr.snapshots.emplace_back(t, pol.partition());
    } catch (const std::exception& ex) {
      throw std::runtime_error("round " + std::to_string(t) + ": " + ex.what());
    }
  }
  tr.final_partition = pol.partition();
  tr.recovery = recovery_rate(tr, e);
  tr.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return tr;
}

std::vector<int> partition_labels(const std::vector<std::vector<int>>& parts, int u) {
  std::vector<int> lab(u, -1);
  for (size_t j = 0; j < parts.size(); ++j) {
    for (int i : parts[j]) {
      if (i < 0 || i >= u) throw std::invalid_argument("partition_labels: user out of range");
      if (lab[i] != -1) throw std::invalid_argument("partition_labels: user listed twice");
      lab[i] = static_cast<int>(j);
    }
  }
  for (int i = 0; i < u; ++i)
    if (lab[i] == -1) throw std::invalid_argument("partition_labels: user missing");
  return lab;
}

double rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("rand_index: size mismatch");
  const size_t n = a.size();
  if (n < 2) return 1.0;
  long long agree = 0, total = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      ++total;
      if ((a[i] == a[j]) == (b[i] == b[j])) ++agree;
    }
  return static_cast<double>(agree) / static_cast<double>(total);
}

double recovery_rate(const RunTrace& tr, const env::EnvModel& e) {
  return rand_index(partition_labels(tr.final_partition, e.u), e.partition);
}

AggregateReport aggregate(const std::vector<RunTrace>& traces) {
  if (traces.empty()) throw std::invalid_argument("aggregate: no traces");
  std::vector<const RunTrace*> by_seed;
  by_seed.reserve(traces.size());
  for (const RunTrace& t : traces) by_seed.push_back(&t);
  std::sort(by_seed.begin(), by_seed.end(),
            [](const RunTrace* x, const RunTrace* y) { return x->seed < y->seed; });
  const long long T = by_seed[0]->T;
  for (const RunTrace* t : by_seed)
    if (t->T != T) throw std::invalid_argument("aggregate: traces have mismatched lengths");

  AggregateReport rep;
  rep.policy = by_seed[0]->policy;
  rep.T = T;
  const size_t n = by_seed.size();
  rep.mean_curve.assign(T, 0.0);
  rep.halfwidth_curve.assign(T, 0.0);
  for (long long t = 0; t < T; ++t) {
    double sum = 0.0;
    for (const RunTrace* tr : by_seed) sum += tr->cum_regrets[t];
    rep.mean_curve[t] = sum / static_cast<double>(n);
  }
  if (n >= 2) {
    for (long long t = 0; t < T; ++t) {
      double ss = 0.0;
      for (const RunTrace* tr : by_seed) {
        const double dev = tr->cum_regrets[t] - rep.mean_curve[t];
        ss += dev * dev;
      }
      const double sd = std::sqrt(ss / static_cast<double>(n - 1));
      rep.halfwidth_curve[t] = sd / std::sqrt(static_cast<double>(n));
    }
  }
  double rec = 0.0, wall = 0.0;
  for (const RunTrace* tr : by_seed) {
    rep.seeds.push_back(tr->seed);
    rec += tr->recovery;
    wall += tr->wall_seconds;
  }
  rep.recovery_rate = rec / static_cast<double>(n);
  rep.mean_wall_seconds = wall / static_cast<double>(n);
  return rep;
}

int thread_cap() {
  const char* v = std::getenv("BANDIT_CLUSTERS_THREADS");
  if (v && *v) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end && *end == '\0' && n >= 1) return static_cast<int>(std::min<long>(n, 1024));
  }
  return omp_get_max_threads();
}

GridOutput run_grid(const RunConfig& cfg, const env::EnvModel& e) {
  validate_config(cfg);
  std::vector<ag::PolicyKind> kinds;
  kinds.reserve(cfg.policies.size());
  for (const std::string& nm : cfg.policies) kinds.push_back(ag::policy_kind_from_string(nm));
  std::vector<uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());

  const int np = static_cast<int>(kinds.size());
  const int ns = static_cast<int>(seeds.size());
  GridOutput out;
  out.traces.assign(np, std::vector<RunTrace>(ns));

  std::string first_err;
  const int total = np * ns;
#pragma omp parallel for num_threads(thread_cap()) schedule(dynamic)
  for (int idx = 0; idx < total; ++idx) {
    const int pi = idx / ns, si = idx % ns;
    try {
      out.traces[pi][si] = run_one(cfg, e, kinds[pi], seeds[si]);
    } catch (const std::exception& ex) {
      const std::string msg =
          cfg.policies[pi] + " seed " + std::to_string(seeds[si]) + ": " + ex.what();
#pragma omp critical(run_grid_err)
      if (first_err.empty()) first_err = msg;
    }
  }
  if (!first_err.empty()) throw std::runtime_error(first_err);

  out.reports.reserve(np);
  for (int pi = 0; pi < np; ++pi) {
    AggregateReport rep = aggregate(out.traces[pi]);
    rep.exploration_scale = cfg.exploration_scale;
    rep.threshold_scale = cfg.threshold_scale;
    out.reports.push_back(std::move(rep));
  }
  return out;
}

EigenGrowthReport verify_eigengrowth(const env::ContextGen& gen, int trials,
                                     long long n_rounds, double delta, uint64_t seed) {
  if (!(gen.lambda_x > 0.0))
    throw std::invalid_argument("verify_eigengrowth: generator lambda_x must be positive");
  if (trials < 1) throw std::invalid_argument("verify_eigengrowth: trials must be >= 1");
  if (n_rounds < 0) throw std::invalid_argument("verify_eigengrowth: n_rounds must be >= 0");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("verify_eigengrowth: delta must lie in (0,1)");

  EigenGrowthReport rep;
  rep.trials = trials;
  rep.delta = delta;
  const double thr =
      8.0 * gen.L * gen.L / gen.lambda_x * std::log(static_cast<double>(gen.d) / delta);
  rep.threshold_rounds = static_cast<long long>(std::ceil(thr));
  if (n_rounds == 0) n_rounds = rep.threshold_rounds;  // 0 = run exactly to the threshold
  rep.n_rounds = n_rounds;
  rep.precondition_met = n_rounds >= rep.threshold_rounds;

  env::EnvModel e;
  e.u = 1;
  e.d = gen.d;
  e.m = 1;
  e.partition = {0};
  e.prefs = {la::Vec(static_cast<size_t>(gen.d), 0.0)};
  e.gap = 0.0;
  e.gen = gen;

  for (int trial = 0; trial < trials; ++trial) {
    la::SymMatrix S(gen.d);
    env::GenState gs(gen.d);
    for (long long t = 1; t <= n_rounds; ++t) {
      env::RoundRng rr = env::round_rng(seed, static_cast<uint64_t>(trial) + 1, t);
      env::RoundInput in = env::next_round(e, t, rr, gs);
      const int a = static_cast<int>(rr.explore.next_below(in.arms.size()));
      la::rank1_add_inplace(S, in.arms[a]);
    }
    if (la::min_eigenvalue(S) < gen.lambda_x * static_cast<double>(n_rounds) / 2.0)
      ++rep.violations;
  }
  rep.violation_rate = static_cast<double>(rep.violations) / static_cast<double>(trials);
  rep.pass = rep.precondition_met && rep.violation_rate <= delta;
  return rep;
}

CoverageReport verify_coverage(RunConfig cfg, const env::EnvModel& e, ag::PolicyKind kind,
                               double delta, double beta_override) {
  cfg.delta = delta;
  cl::ConfidenceParams p = params_for(cfg, e, kind);
  if (beta_override >= 0.0) p.beta = beta_override;

  CoverageReport rep;
  rep.delta = delta;
  const std::vector<int>& truth = e.partition;
  for (uint64_t seed : cfg.seeds) {
    ag::Policy pol(kind, p, cfg.alpha);
    env::GenState gs(e.d);
    for (long long t = 1; t <= cfg.T; ++t) {
      env::RoundRng rr = env::round_rng(seed, 0, t);
      env::RoundInput in = env::next_round(e, t, rr, gs);
      const bool correct =
          rand_index(partition_labels(pol.partition(), e.u), truth) == 1.0;
      const ag::Decision dec = pol.select(in, rr.explore);
      const double r = env::reward(e, in.user, in.arms[dec.arm], rr);
      pol.observe(in, dec.arm, r);
      if (!dec.uniform && correct) {
        ++rep.checked;
        const la::Vec& th = e.prefs[truth[in.user]];
        if (std::abs(dec.pred - la::dot(th, in.arms[dec.arm])) > dec.width) ++rep.violations;
      }
    }
  }
  if (rep.checked > 0) {
    rep.rate = static_cast<double>(rep.violations) / static_cast<double>(rep.checked);
    rep.bound = delta + 3.0 * std::sqrt(delta * (1.0 - delta) /
                                        static_cast<double>(rep.checked));
    rep.pass = rep.rate <= rep.bound;
  } else {
    rep.bound = 1.0;
    rep.pass = false;  // nothing checked: no claim
  }
  return rep;
}

namespace {

void ensure_parent(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

ordered_json config_json(const RunConfig& cfg) {
  ordered_json j;
  j["env_file"] = cfg.env_file;
  j["gen"] = cfg.gen;
  j["u_raw"] = cfg.u_raw;
  j["selected"] = cfg.selected;
  j["m"] = cfg.m;
  j["d"] = cfg.d;
  j["total_arms"] = cfg.total_arms;
  j["K"] = cfg.K;
  j["env_seed"] = cfg.env_seed;
  j["noise_sigma"] = cfg.noise_sigma;
  j["clamp_rewards"] = cfg.clamp_rewards;
  j["smoothed_sigma"] = cfg.smoothed_sigma;
  j["smoothed_R"] = cfg.smoothed_R;
  j["policies"] = cfg.policies;
  j["T"] = cfg.T;
  j["seeds"] = cfg.seeds;
  j["lambda"] = cfg.lambda;
  j["delta"] = cfg.delta;
  j["c1"] = cfg.c1;
  j["alpha"] = cfg.alpha;
  j["exploration_scale"] = cfg.exploration_scale;
  j["threshold_scale"] = cfg.threshold_scale;
  j["snapshot_every"] = cfg.snapshot_every;
  j["out_dir"] = cfg.out_dir;
  return j;
}

}  // namespace

void write_trace_csv(const RunTrace& tr, const std::string& path) {
  ensure_parent(path);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  std::fputs("t,user,arm,reward,regret,cum_regret\n", f);
  for (long long i = 0; i < tr.T; ++i)
    std::fprintf(f, "%lld,%d,%d,%.17g,%.17g,%.17g\n", i + 1, tr.users[i], tr.arms[i],
                 tr.rewards[i], tr.regrets[i], tr.cum_regrets[i]);
  if (std::fclose(f) != 0) throw std::runtime_error("failed to write " + path);
}

void write_snapshots(const RunTrace& tr, const std::string& path) {
  ensure_parent(path);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& [round, clusters] : tr.snapshots) {
    ordered_json j;
    j["round"] = round;
    j["clusters"] = clusters;
    const std::string line = j.dump();
    std::fputs(line.c_str(), f);
    std::fputc('\n', f);
  }
  if (std::fclose(f) != 0) throw std::runtime_error("failed to write " + path);
}

void write_aggregate_json(const AggregateReport& rep, const RunConfig& cfg,
                          const std::string& path) {
  ensure_parent(path);
  ordered_json j;
  j["policy"] = rep.policy;
  j["T"] = rep.T;
  j["seeds"] = rep.seeds;
  j["mean_curve"] = rep.mean_curve;
  j["halfwidth_curve"] = rep.halfwidth_curve;
  j["recovery_rate"] = rep.recovery_rate;
  j["exploration_scale"] = rep.exploration_scale;
  j["threshold_scale"] = rep.threshold_scale;
  j["mean_wall_seconds"] = rep.mean_wall_seconds;
  j["config"] = config_json(cfg);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  const std::string body = j.dump();
  std::fputs(body.c_str(), f);
  std::fputc('\n', f);
  if (std::fclose(f) != 0) throw std::runtime_error("failed to write " + path);
}

std::string trace_path(const RunConfig& cfg, const std::string& policy, uint64_t seed) {
  return cfg.out_dir + "/" + policy + "_seed" + std::to_string(seed) + ".csv";
}

std::string snapshot_path(const RunConfig& cfg, const std::string& policy, uint64_t seed) {
  return cfg.out_dir + "/" + policy + "_seed" + std::to_string(seed) + "_snapshots.jsonl";
}

std::string aggregate_path(const RunConfig& cfg, const std::string& policy) {
  return cfg.out_dir + "/" + policy + "_aggregate.json";
}

}  // namespace bandits::hn
