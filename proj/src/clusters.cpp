#include "bandits/clusters.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace bandits::cl {

double compute_beta(int d, long long T_horizon, double L, double lambda, double delta) {
  if (!(lambda > 0) || !(delta > 0) || !(delta < 1))
    throw std::invalid_argument("compute_beta: need lambda > 0, 0 < delta < 1");
  const double dT = static_cast<double>(T_horizon);
  return std::sqrt(d * std::log(1.0 + dT * L * L / (d * lambda)) + 2.0 * std::log(1.0 / delta)) +
         std::sqrt(lambda);
}

double f_threshold(long long T_i, const ConfidenceParams& p) {
  if (T_i < 0) throw std::invalid_argument("f_threshold: T_i must be >= 0");
  const double T = static_cast<double>(T_i);
  const double num =
      std::sqrt(2.0 * std::log(p.u / p.delta) +
                p.d * std::log(1.0 + T * p.L * p.L / (p.lambda * p.d))) +
      std::sqrt(p.lambda);
  const double den = std::sqrt(p.lambda + T * p.lambda_x / 2.0);
  return num / den;
}

long long t0_budget(const ConfidenceParams& p, int u, int d) {
  if (!p.gamma.has_value() || !(*p.gamma > 0))
    throw std::invalid_argument("t0_budget: gamma unknown (use the phased policy instead)");
  const double g = *p.gamma;
  const double b1 = (8.0 * p.L * p.L / p.lambda_x) * std::log(u * d / p.delta);
  const double b2 = (512.0 * d / (g * g * p.lambda_x)) * std::log(u / p.delta);
  const double t0 = 16.0 * u * std::log(u / p.delta) + 4.0 * u * std::max(b1, b2);
  return static_cast<long long>(std::ceil(p.exploration_scale * t0));
}

UserStat make_user_stat(int d) {
  UserStat us;
  us.S = la::SymMatrix(d);
  us.b.assign(d, 0.0);
  us.theta_hat.assign(d, 0.0);
  return us;
}

void update_user(UserStat& us, const la::Vec& x, double r, const ConfidenceParams& p) {
  la::rank1_add_inplace(us.S, x);
  la::axpy(r, x, us.b);
  us.T += 1;
  us.theta_hat = la::reg_solve(us.S, us.b, p.lambda);
}

bool delete_check(const UserStat& a, const UserStat& b, const ConfidenceParams& p) {
  if (a.theta_hat.size() != b.theta_hat.size())
    throw std::invalid_argument("delete_check: dimension mismatch");
  la::Vec diff = a.theta_hat;
  la::axpy(-1.0, b.theta_hat, diff);
  const double dist = la::norm2(diff);
  return dist > p.threshold_scale * (f_threshold(a.T, p) + f_threshold(b.T, p));
}

UserGraph UserGraph::complete(int u) {
  UserGraph g;
  g.u = u;
  g.adj.assign(static_cast<size_t>(u) * u, 1);
  for (int i = 0; i < u; ++i) g.adj[static_cast<size_t>(i) * u + i] = 0;
  return g;
}

void UserGraph::remove_edge(int i, int j) {
  adj[static_cast<size_t>(i) * u + j] = 0;
  adj[static_cast<size_t>(j) * u + i] = 0;
}

long long UserGraph::edge_count() const {
  long long c = 0;
  for (int i = 0; i < u; ++i)
    for (int j = i + 1; j < u; ++j) c += has_edge(i, j) ? 1 : 0;
  return c;
}

std::vector<int> connected_component(const UserGraph& g, int i) {
  if (i < 0 || i >= g.u) throw std::invalid_argument("connected_component: user out of range");
  std::vector<uint8_t> seen(g.u, 0);
  std::deque<int> q{i};
  seen[i] = 1;
  while (!q.empty()) {
    const int v = q.front();
    q.pop_front();
    for (int w = 0; w < g.u; ++w)
      if (!seen[w] && g.has_edge(v, w)) {
        seen[w] = 1;
        q.push_back(w);
      }
  }
  std::vector<int> out;
  for (int v = 0; v < g.u; ++v)
    if (seen[v]) out.push_back(v);
  return out;
}

std::vector<int> neighbors_plus_self(const UserGraph& g, int i) {
  if (i < 0 || i >= g.u) throw std::invalid_argument("neighbors_plus_self: user out of range");
  std::vector<int> out;
  for (int v = 0; v < g.u; ++v)
    if (v == i || g.has_edge(i, v)) out.push_back(v);
  return out;
}

bool ClusterSets::cluster_checked(int j) const {
  const auto it = J.find(j);
  if (it == J.end()) throw std::invalid_argument("cluster_checked: no such cluster");
  for (int i : it->second.members)
    if (!checked[i]) return false;
  return true;
}

void ClusterSets::uncheck_all() { std::fill(checked.begin(), checked.end(), 0); }

ClusterSets make_cluster_sets(int u, int d, double lambda, const std::vector<UserStat>* stats) {
  ClusterSets cs;
  cs.u = u;
  cs.d = d;
  cs.lambda = lambda;
  cs.user_stats = stats;
  Cluster c;
  c.members.resize(u);
  for (int i = 0; i < u; ++i) c.members[i] = i;
  c.M = la::SymMatrix(d);
  c.b.assign(d, 0.0);
  c.theta_hat.assign(d, 0.0);
  cs.J.emplace(0, std::move(c));
  cs.cluster_of.assign(u, 0);
  cs.checked.assign(u, 0);
  cs.next_id = 1;
  return cs;
}

void cluster_observe(ClusterSets& cs, int i, const la::Vec& x, double r) {
  Cluster& c = cs.J.at(cs.cluster_of[i]);
  la::rank1_add_inplace(c.M, x);
  la::axpy(r, x, c.b);
  c.T += 1;
  c.theta_hat = la::reg_solve(c.M, c.b, cs.lambda);
}

void split_user(ClusterSets& cs, int i, int j) {
  auto it = cs.J.find(j);
  if (it == cs.J.end()) throw std::invalid_argument("split_user: no such cluster");
  Cluster& c = it->second;
  auto mit = std::lower_bound(c.members.begin(), c.members.end(), i);
  if (mit == c.members.end() || *mit != i)
    throw std::invalid_argument("split_user: user not in cluster");
  if (!cs.user_stats) throw std::logic_error("split_user: user stats not attached");
  const UserStat& us = (*cs.user_stats)[i];

  Cluster fresh;
  fresh.members = {i};
  fresh.M = us.S;
  fresh.b = us.b;
  fresh.T = us.T;
  fresh.theta_hat = us.theta_hat;
  const int fresh_id = cs.next_id++;

  c.members.erase(mit);
  if (c.members.empty()) {
    cs.J.erase(it);
  } else {
    for (size_t k = 0; k < us.S.a.size(); ++k) c.M.a[k] -= us.S.a[k];
    for (size_t k = 0; k < us.b.size(); ++k) c.b[k] -= us.b[k];
    c.T -= us.T;
    c.theta_hat = la::reg_solve(c.M, c.b, cs.lambda);
  }
  cs.J.emplace(fresh_id, std::move(fresh));
  cs.cluster_of[i] = fresh_id;
}

void merge_clusters(ClusterSets& cs, int j1, int j2, const ConfidenceParams& p) {
  if (j1 == j2) throw std::invalid_argument("merge_clusters: identical ids");
  if (!cs.cluster_checked(j1) || !cs.cluster_checked(j2))
    throw std::invalid_argument("merge_clusters: both clusters must be checked");
  Cluster& a = cs.J.at(j1);
  Cluster& b = cs.J.at(j2);
  for (size_t k = 0; k < a.M.a.size(); ++k) a.M.a[k] += b.M.a[k];
  for (size_t k = 0; k < a.b.size(); ++k) a.b[k] += b.b[k];
  a.T += b.T;
  for (int i : b.members) cs.cluster_of[i] = j1;
  std::vector<int> merged;
  merged.reserve(a.members.size() + b.members.size());
  std::merge(a.members.begin(), a.members.end(), b.members.begin(), b.members.end(),
             std::back_inserter(merged));
  a.members = std::move(merged);
  a.theta_hat = la::reg_solve(a.M, a.b, p.lambda);
  cs.J.erase(j2);
}

}  // namespace bandits::cl
