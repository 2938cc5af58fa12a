#include "bandits/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bandits::env {

namespace {

la::Vec unit_sphere(int d, rng::Stream& st) {
  la::Vec x(d);
  double n;
  do {
    for (int i = 0; i < d; ++i) x[i] = st.next_normal(1.0);
    n = la::norm2(x);
  } while (n < 1e-12);
  for (auto& v : x) v /= n;
  return x;
}

la::Vec unit_cube(int d, rng::Stream& st) {
  la::Vec x(d);
  double n;
  do {
    for (int i = 0; i < d; ++i) x[i] = st.next_symmetric();
    n = la::norm2(x);
  } while (n < 1e-12);
  for (auto& v : x) v /= n;
  return x;
}

double pool_lambda_x(const std::vector<la::Vec>& pool) {
  if (pool.empty()) throw std::invalid_argument("pool gen: empty pool");
  const int d = static_cast<int>(pool[0].size());
  la::SymMatrix second(d);
  for (const auto& x : pool) la::rank1_add_inplace(second, x);
  for (auto& v : second.a) v /= static_cast<double>(pool.size());
  return std::max(0.0, la::min_eigenvalue(second));
}

}  // namespace

ContextGen make_sphere_gen(int d, int K) {
  ContextGen g;
  g.kind = GenKind::Sphere;
  g.d = d;
  g.K = K;
  g.L = 1.0;
  g.lambda_x = 1.0 / d;  // E[xx^T] = I/d on the unit sphere
  return g;
}

ContextGen make_cube_gen(int d, int K) {
  ContextGen g;
  g.kind = GenKind::Cube;
  g.d = d;
  g.K = K;
  g.L = 1.0;
  // no closed form for the normalized-cube second moment: Monte-Carlo estimate
  // with a fixed internal stream so the value is reproducible
  const long long n = 1000000;
  auto st = rng::make_stream(0xc0be, 0, 0, rng::INIT);
  la::SymMatrix second(d);
  for (long long i = 0; i < n; ++i) la::rank1_add_inplace(second, unit_cube(d, st));
  for (auto& v : second.a) v /= static_cast<double>(n);
  g.lambda_x = std::max(0.0, la::min_eigenvalue(second));
  g.lambda_x_samples = n;
  return g;
}

ContextGen make_pool_gen(std::vector<la::Vec> pool, int K) {
  ContextGen g;
  g.kind = GenKind::Pool;
  g.d = pool.empty() ? 0 : static_cast<int>(pool[0].size());
  g.K = K;
  double L = 0.0;
  for (const auto& x : pool) L = std::max(L, la::norm2(x));
  g.L = L;
  g.lambda_x = pool_lambda_x(pool);
  g.pool = std::move(pool);
  return g;
}

ContextGen make_point_gen(la::Vec x, int K) {
  ContextGen g;
  g.kind = GenKind::PointMass;
  g.d = static_cast<int>(x.size());
  g.K = K;
  g.L = la::norm2(x);
  g.lambda_x = 0.0;  // degenerate: no diversity
  g.point = std::move(x);
  return g;
}

ContextGen make_smoothed_grid(std::vector<la::Vec> mus, int K, double sigma, double R) {
  if (mus.empty()) throw std::invalid_argument("smoothed grid: empty mu pool");
  ContextGen g;
  g.kind = GenKind::SmoothedGrid;
  g.d = static_cast<int>(mus[0].size());
  g.K = K;
  g.sigma = sigma;
  g.R = R;
  for (const auto& mu : mus)
    if (la::norm2(mu) > 1.0 + 1e-9)
      throw std::invalid_argument("smoothed grid: ||mu|| must be <= 1");
  g.L = 1.0 + std::sqrt(static_cast<double>(g.d)) * R;
  g.lambda_x = 0.0;  // adversarial: policy-side value comes from smoothed_params
  g.pool = std::move(mus);
  return g;
}

ContextGen make_smoothed_spiteful(int d, int K, double sigma, double R) {
  ContextGen g;
  g.kind = GenKind::SmoothedSpiteful;
  g.d = d;
  g.K = K;
  g.sigma = sigma;
  g.R = R;
  g.L = 1.0 + std::sqrt(static_cast<double>(d)) * R;
  g.lambda_x = 0.0;
  return g;
}

RoundRng round_rng(uint64_t master, uint64_t replica, long long t) {
  RoundRng rr;
  const uint64_t tu = static_cast<uint64_t>(t);
  rr.user = rng::make_stream(master, replica, tu, rng::USER_DRAW);
  rr.arms = rng::make_stream(master, replica, tu, rng::ARM_GEN);
  rr.noise = rng::make_stream(master, replica, tu, rng::NOISE);
  rr.explore = rng::make_stream(master, replica, tu, rng::EXPLORE);
  return rr;
}

la::Vec sample_truncated_gaussian(double sigma, double R, int d, rng::Stream& st) {
  if (!(sigma > 0) || !(R > 0))
    throw std::invalid_argument("sample_truncated_gaussian: sigma and R must be > 0");
  la::Vec e(d);
  for (int i = 0; i < d; ++i) e[i] = st.next_trunc_normal(sigma, R);
  return e;
}

RoundInput next_round(const EnvModel& e, long long t, RoundRng& rr, GenState& gs) {
  RoundInput in;
  in.t = t;
  in.user = static_cast<int>(rr.user.next_below(static_cast<uint64_t>(e.u)));
  const ContextGen& g = e.gen;
  in.arms.reserve(g.K);
  switch (g.kind) {
    case GenKind::Pool: {
      const int n = static_cast<int>(g.pool.size());
      if (g.K > n) throw std::runtime_error("next_round: K exceeds pool size");
      // draw K distinct pool indices (partial Fisher-Yates)
      auto& idx = gs.scratch;
      idx.resize(n);
      for (int i = 0; i < n; ++i) idx[i] = i;
      for (int i = 0; i < g.K; ++i) {
        const int j = i + static_cast<int>(rr.arms.next_below(static_cast<uint64_t>(n - i)));
        std::swap(idx[i], idx[j]);
        in.arms.push_back(g.pool[idx[i]]);
      }
      break;
    }
    case GenKind::Sphere:
      for (int k = 0; k < g.K; ++k) in.arms.push_back(unit_sphere(g.d, rr.arms));
      break;
    case GenKind::Cube:
      for (int k = 0; k < g.K; ++k) in.arms.push_back(unit_cube(g.d, rr.arms));
      break;
    case GenKind::PointMass:
      for (int k = 0; k < g.K; ++k) in.arms.push_back(g.point);
      break;
    case GenKind::SmoothedGrid: {
      // replay the fixed grid as adversary means, cycling deterministically
      const long long n = static_cast<long long>(g.pool.size());
      for (int k = 0; k < g.K; ++k) {
        const long long pos = ((t - 1) * g.K + k) % n;
        la::Vec x = g.pool[static_cast<size_t>(pos)];
        la::Vec eps = sample_truncated_gaussian(g.sigma, g.R, g.d, rr.arms);
        la::axpy(1.0, eps, x);
        in.arms.push_back(std::move(x));
      }
      break;
    }
    case GenKind::SmoothedSpiteful: {
      // all means aligned with the currently least-explored direction
      if (gs.digest.d != g.d) gs.digest = la::SymMatrix(g.d);
      const la::Vec mu = la::min_eigenvector(gs.digest);
      for (int k = 0; k < g.K; ++k) {
        la::Vec x = mu;
        la::Vec eps = sample_truncated_gaussian(g.sigma, g.R, g.d, rr.arms);
        la::axpy(1.0, eps, x);
        in.arms.push_back(std::move(x));
      }
      for (const auto& x : in.arms) la::rank1_add_inplace(gs.digest, x);
      break;
    }
  }
  return in;
}

double reward(const EnvModel& e, int user, const la::Vec& x, RoundRng& rr) {
  const la::Vec& theta = e.prefs[e.partition[user]];
  double r = la::dot(x, theta);
  if (e.noise.sigma > 0) r += rr.noise.next_normal(e.noise.sigma);
  if (e.noise.clamp) r = std::clamp(r, -1.0, 1.0);
  return r;
}

double instant_regret(const EnvModel& e, const RoundInput& in, int chosen) {
  if (chosen < 0 || chosen >= static_cast<int>(in.arms.size()))
    throw std::invalid_argument("instant_regret: chosen arm out of range");
  const la::Vec& theta = e.prefs[e.partition[in.user]];
  double best = -1e300;
  for (const auto& x : in.arms) best = std::max(best, la::dot(x, theta));
  return best - la::dot(in.arms[chosen], theta);
}

std::pair<EnvModel, std::vector<la::Vec>> make_synthetic(int u_raw, int d, int total_arms,
                                                         int m, int selected,
                                                         rng::Stream& st) {
  if (d < 1 || u_raw < 1 || total_arms < 1 || m < 1 || selected < m || selected > u_raw)
    throw std::invalid_argument("make_synthetic: need 1 <= m <= selected <= u_raw, d >= 1, arms >= 1");

  std::vector<la::Vec> pool(total_arms);
  for (auto& x : pool) x = unit_cube(d, st);

  std::vector<la::Vec> raw(u_raw);
  for (auto& x : raw) x = unit_cube(d, st);

  // random subset of `selected` users, then balanced random partition
  std::vector<int> perm(u_raw);
  for (int i = 0; i < u_raw; ++i) perm[i] = i;
  for (int i = 0; i < u_raw - 1; ++i) {
    const int j = i + static_cast<int>(st.next_below(static_cast<uint64_t>(u_raw - i)));
    std::swap(perm[i], perm[j]);
  }

  EnvModel e;
  e.u = selected;
  e.d = d;
  e.m = m;
  e.partition.resize(selected);
  e.prefs.assign(m, la::Vec(d, 0.0));
  std::vector<int> count(m, 0);
  for (int k = 0; k < selected; ++k) {
    const int j = k % m;  // perm already random: round-robin keeps groups balanced
    e.partition[k] = j;
    la::axpy(1.0, raw[perm[k]], e.prefs[j]);
    ++count[j];
  }
  for (int j = 0; j < m; ++j)
    for (auto& v : e.prefs[j]) v /= static_cast<double>(count[j]);

  double gap = 0.0;
  if (m >= 2) {
    gap = 1e300;
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j) {
        la::Vec diff = e.prefs[i];
        la::axpy(-1.0, e.prefs[j], diff);
        gap = std::min(gap, la::norm2(diff));
      }
  }
  e.gap = gap;
  e.gen = make_pool_gen(pool, std::min(20, total_arms));
  validate_env(e);
  return {e, std::move(pool)};
}

void validate_env(const EnvModel& e) {
  if (e.u < 1 || e.d < 1 || e.m < 1) throw std::runtime_error("env: bad counts");
  if (static_cast<int>(e.partition.size()) != e.u) throw std::runtime_error("env: partition size != u");
  std::vector<int> seen(e.m, 0);
  for (int c : e.partition) {
    if (c < 0 || c >= e.m) throw std::runtime_error("env: cluster id out of range");
    seen[c] = 1;
  }
  for (int j = 0; j < e.m; ++j)
    if (!seen[j]) throw std::runtime_error("env: partition not surjective (empty cluster)");
  if (static_cast<int>(e.prefs.size()) != e.m) throw std::runtime_error("env: prefs size != m");
  for (const auto& th : e.prefs) {
    if (static_cast<int>(th.size()) != e.d) throw std::runtime_error("env: pref dim mismatch");
    for (double v : th)
      if (!std::isfinite(v)) throw std::runtime_error("env: non-finite preference");
    if (la::norm2(th) > 1.0 + 1e-9) throw std::runtime_error("env: ||theta|| > 1");
  }
  if (e.m >= 2 && !(e.gap > 0)) throw std::runtime_error("env: gap must be > 0");
}

namespace {
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void save_features(const EnvModel& e, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_features: cannot open " + path);
  out << "# user lines carry the user's effective preference vector (its cluster mean)\n";
  out << "ENVV1 u=" << e.u << " d=" << e.d << " arms=" << e.gen.pool.size() << " m=" << e.m << "\n";
  for (int i = 0; i < e.u; ++i) {
    out << "user " << i << " " << e.partition[i];
    for (double v : e.prefs[e.partition[i]]) out << " " << fmt_double(v);
    out << "\n";
  }
  for (size_t a = 0; a < e.gen.pool.size(); ++a) {
    out << "arm " << a;
    for (double v : e.gen.pool[a]) out << " " << fmt_double(v);
    out << "\n";
  }
}

EnvModel load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_features: cannot open " + path);

  int line_no = 0;
  std::string line;
  auto next_content_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      size_t pos = line.find_first_not_of(" \t\r");
      if (pos == std::string::npos) continue;  // blank
      if (line[pos] == '#') continue;          // comment
      return true;
    }
    return false;
  };

  if (!next_content_line()) throw ParseError("missing ENVV1 header", line_no == 0 ? 1 : line_no);
  int u = -1, d = -1, arms = -1, m = -1;
  {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag != "ENVV1") throw ParseError("expected ENVV1 header", line_no);
    std::string kv;
    while (ss >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ParseError("malformed header field '" + kv + "'", line_no);
      const std::string key = kv.substr(0, eq);
      int val;
      try {
        val = std::stoi(kv.substr(eq + 1));
      } catch (...) {
        throw ParseError("bad integer in header field '" + kv + "'", line_no);
      }
      if (key == "u") u = val;
      else if (key == "d") d = val;
      else if (key == "arms") arms = val;
      else if (key == "m") m = val;
      else throw ParseError("unknown header field '" + key + "'", line_no);
    }
    if (u < 1 || d < 1 || arms < 1 || m < 1)
      throw ParseError("header must set u, d, arms, m to positive values", line_no);
  }

  auto parse_floats = [&](std::istringstream& ss, la::Vec& x) {
    for (int i = 0; i < d; ++i) {
      std::string tok;
      if (!(ss >> tok)) throw ParseError("expected " + std::to_string(d) + " floats", line_no);
      try {
        size_t used = 0;
        x[i] = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument("");
      } catch (...) {
        throw ParseError("bad float '" + tok + "'", line_no);
      }
      if (!std::isfinite(x[i])) throw ParseError("non-finite value", line_no);
    }
    std::string extra;
    if (ss >> extra) throw ParseError("trailing tokens after " + std::to_string(d) + " floats", line_no);
  };

  EnvModel e;
  e.u = u;
  e.d = d;
  e.m = m;
  e.partition.assign(u, -1);
  std::vector<la::Vec> user_vec(u, la::Vec(d));
  for (int i = 0; i < u; ++i) {
    if (!next_content_line()) throw ParseError("unexpected EOF: expected user line", line_no + 1);
    std::istringstream ss(line);
    std::string tag;
    int id, cl;
    ss >> tag >> id >> cl;
    if (!ss || tag != "user") throw ParseError("expected 'user <id> <cluster> <floats>'", line_no);
    if (id != i) throw ParseError("user ids must be sequential from 0; got " + std::to_string(id), line_no);
    if (cl < 0 || cl >= m) throw ParseError("cluster id out of range [0," + std::to_string(m) + ")", line_no);
    e.partition[i] = cl;
    parse_floats(ss, user_vec[i]);
  }

  std::vector<la::Vec> pool(arms, la::Vec(d));
  for (int a = 0; a < arms; ++a) {
    if (!next_content_line())
      throw ParseError(a == 0 ? "empty arm section" : "unexpected EOF: expected arm line", line_no + 1);
    std::istringstream ss(line);
    std::string tag;
    int id;
    ss >> tag >> id;
    if (!ss || tag != "arm") throw ParseError("expected 'arm <id> <floats>'", line_no);
    if (id != a) throw ParseError("arm ids must be sequential from 0; got " + std::to_string(id), line_no);
    parse_floats(ss, pool[a]);
  }
  if (next_content_line()) throw ParseError("unexpected trailing content", line_no);

  // cluster preference = the member vector (all members must agree: the file
  // stores effective per-user preferences, which are shared inside a cluster)
  e.prefs.assign(m, la::Vec());
  for (int i = 0; i < u; ++i) {
    auto& th = e.prefs[e.partition[i]];
    if (th.empty()) {
      th = user_vec[i];
    } else {
      la::Vec diff = th;
      la::axpy(-1.0, user_vec[i], diff);
      if (la::norm2(diff) > 1e-12)
        throw std::runtime_error("load_features: users in cluster " +
                                 std::to_string(e.partition[i]) +
                                 " carry different preference vectors");
    }
  }
  double gap = 0.0;
  if (m >= 2) {
    gap = 1e300;
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j) {
        la::Vec diff = e.prefs[i];
        la::axpy(-1.0, e.prefs[j], diff);
        gap = std::min(gap, la::norm2(diff));
      }
  }
  e.gap = gap;
  e.gen = make_pool_gen(std::move(pool), std::min(20, arms));
  validate_env(e);
  return e;
}

}  // namespace bandits::env
