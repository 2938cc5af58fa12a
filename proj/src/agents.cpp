#include "bandits/agents.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bandits::ag {

std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::LinUCBOne: return "LinUCBOne";
    case PolicyKind::LinUCBInd: return "LinUCBInd";
    case PolicyKind::Club: return "CLUB";
    case PolicyKind::Sclub: return "SCLUB";
    case PolicyKind::UniClub: return "UniCLUB";
    case PolicyKind::UniSclub: return "UniSCLUB";
    case PolicyKind::PhaseUniClub: return "PhaseUniCLUB";
    case PolicyKind::SaClub: return "SACLUB";
    case PolicyKind::SaSclub: return "SASCLUB";
  }
  throw std::logic_error("to_string: unknown policy kind");
}

PolicyKind policy_kind_from_string(const std::string& name) {
  static const std::pair<const char*, PolicyKind> table[] = {
      {"LinUCBOne", PolicyKind::LinUCBOne}, {"LinUCBInd", PolicyKind::LinUCBInd},
      {"CLUB", PolicyKind::Club},           {"SCLUB", PolicyKind::Sclub},
      {"UniCLUB", PolicyKind::UniClub},     {"UniSCLUB", PolicyKind::UniSclub},
      {"PhaseUniCLUB", PolicyKind::PhaseUniClub},
      {"SACLUB", PolicyKind::SaClub},       {"SASCLUB", PolicyKind::SaSclub},
  };
  for (const auto& [s, k] : table)
    if (name == s) return k;
  throw std::invalid_argument(
      "unknown policy '" + name +
      "' (expected one of LinUCBOne, LinUCBInd, CLUB, SCLUB, UniCLUB, UniSCLUB, "
      "PhaseUniCLUB, SACLUB, SASCLUB)");
}

double ucb_index(const la::Vec& theta_hat, const la::SymMatrix& m_stat, const la::Vec& x,
                 const cl::ConfidenceParams& p) {
  if (static_cast<int>(theta_hat.size()) != m_stat.d || theta_hat.size() != x.size())
    throw std::invalid_argument("ucb_index: dimension mismatch");
  return la::dot(theta_hat, x) + p.beta * std::sqrt(la::quad_form_inv(m_stat, x, p.lambda));
}

double ucb_index(const la::Vec& theta_hat, const la::Chol& m_bar_chol, const la::Vec& x,
                 double beta) {
  return la::dot(theta_hat, x) + beta * std::sqrt(la::quad_form_inv(m_bar_chol, x));
}

cl::ConfidenceParams smoothed_params(const cl::ConfidenceParams& p, double sigma, double R,
                                     double K, int d, double c1) {
  if (!(sigma > 0.0)) throw std::invalid_argument("smoothed_params: sigma must be positive");
  if (!(R > 0.0)) throw std::invalid_argument("smoothed_params: R must be positive");
  if (!(K >= 2.0))
    throw std::invalid_argument("smoothed_params: need K >= 2 so that log K is positive");
  if (!(c1 > 0.0)) throw std::invalid_argument("smoothed_params: c1 must be positive");
  cl::ConfidenceParams q = p;
  q.lambda_x = c1 * sigma * sigma / std::log(K);
  q.L = 1.0 + std::sqrt(static_cast<double>(d)) * R;
  return q;
}

long long t_init_budget(const cl::ConfidenceParams& p) {
  if (!(p.lambda_x > 0.0))
    throw std::invalid_argument("t_init_budget: lambda_x must be positive");
  const double u = p.u, d = p.d;
  const double raw = 16.0 * u * std::log(u / p.delta) +
                     4.0 * u * (8.0 * p.L * p.L / p.lambda_x) * std::log(u * d / p.delta);
  const double scaled = p.exploration_scale * raw;
  return scaled <= 0.0 ? 0 : static_cast<long long>(std::ceil(scaled));
}

long long t_phase_budget(const cl::ConfidenceParams& p, int s) {
  if (!(p.lambda_x > 0.0))
    throw std::invalid_argument("t_phase_budget: lambda_x must be positive");
  if (s < 0) throw std::invalid_argument("t_phase_budget: negative phase index");
  const double u = p.u, d = p.d;
  const double raw =
      4.0 * u * 512.0 * d * std::ldexp(1.0, s) / p.lambda_x * std::log(u / p.delta);
  const double scaled = p.exploration_scale * raw;
  const long long v = static_cast<long long>(std::ceil(scaled));
  return v < 1 ? 1 : v;  // a zero-length phase would stall the clock
}

PhaseClock::PhaseClock(const cl::ConfidenceParams& p, int alpha) : p_(p), alpha_(alpha) {
  if (alpha < 0) throw std::invalid_argument("PhaseClock: alpha must be nonnegative");
  t_init_ = t_init_budget(p_);
}

long long PhaseClock::budget(int s) const { return t_phase_budget(p_, s); }

long long PhaseClock::phase_length(int s) const {
  const long long ts = budget(s);
  const int shift = alpha_ * s;
  if (shift >= 62 || ts > (std::numeric_limits<long long>::max() >> shift))
    throw std::overflow_error("PhaseClock: phase length overflows 64 bits");
  return ts << shift;
}

void PhaseClock::begin_phase() {
  tau_ = 0;
  ts_cur_ = budget(s_);
  len_cur_ = phase_length(s_);
  uni_.push_back(0);
  lens_.push_back(0);
}

PhaseClock::Tick PhaseClock::next() {
  if (init_seen_ < t_init_) {
    ++init_seen_;
    return {true, true, -1, init_seen_};
  }
  if (s_ < 0 || tau_ == len_cur_) {
    ++s_;
    begin_phase();
  }
  ++tau_;
  const bool uni = tau_ <= ts_cur_;
  if (uni) ++uni_[s_];
  ++lens_[s_];
  return {uni, false, s_, tau_};
}

namespace {

bool merge_check(const cl::Cluster& a, const cl::Cluster& b, const cl::ConfidenceParams& p) {
  double dist2 = 0.0;
  for (size_t k = 0; k < a.theta_hat.size(); ++k) {
    const double dk = a.theta_hat[k] - b.theta_hat[k];
    dist2 += dk * dk;
  }
  return std::sqrt(dist2) <
         p.threshold_scale * (cl::f_threshold(a.T, p) + cl::f_threshold(b.T, p));
}

}  // namespace

Policy::Policy(PolicyKind kind, const cl::ConfidenceParams& p, int alpha)
    : kind_(kind), p_(p), u_(p.u), d_(p.d) {
  if (u_ < 1 || d_ < 1) throw std::invalid_argument("Policy: params must carry u >= 1, d >= 1");
  if (!(p_.lambda > 0.0)) throw std::invalid_argument("Policy: lambda must be positive");
  users_.assign(kind_ == PolicyKind::LinUCBOne ? 1 : u_, cl::make_user_stat(d_));
  if (graph_kind()) graph_ = cl::UserGraph::complete(u_);
  if (set_kind()) sets_ = cl::make_cluster_sets(u_, d_, p_.lambda, &users_);
  if (kind_ == PolicyKind::UniClub || kind_ == PolicyKind::UniSclub)
    t0_ = cl::t0_budget(p_, u_, d_);
  if (kind_ == PolicyKind::PhaseUniClub)
    clock_ = std::make_unique<PhaseClock>(p_, alpha);
}

bool Policy::graph_kind() const {
  return kind_ == PolicyKind::Club || kind_ == PolicyKind::SaClub ||
         kind_ == PolicyKind::UniClub || kind_ == PolicyKind::PhaseUniClub;
}

bool Policy::set_kind() const {
  return kind_ == PolicyKind::Sclub || kind_ == PolicyKind::SaSclub ||
         kind_ == PolicyKind::UniSclub;
}

const cl::UserGraph* Policy::graph() const { return graph_kind() ? &graph_ : nullptr; }
const cl::ClusterSets* Policy::sets() const { return set_kind() ? &sets_ : nullptr; }
const PhaseClock* Policy::phase_clock() const { return clock_.get(); }

Decision Policy::ucb_select(const std::vector<int>& members, const env::RoundInput& round) {
  la::SymMatrix m(d_);
  la::Vec b(static_cast<size_t>(d_), 0.0);
  for (int i : members) {
    const cl::UserStat& us = users_[i];
    for (size_t k = 0; k < m.a.size(); ++k) m.a[k] += us.S.a[k];
    for (int k = 0; k < d_; ++k) b[k] += us.b[k];
  }
  return ucb_select_stat(m, b, round);
}

Decision Policy::ucb_select_stat(const la::SymMatrix& m, const la::Vec& b,
                                 const env::RoundInput& round) {
  const la::Chol c = la::chol_factor(m, p_.lambda);
  const la::Vec theta = la::chol_solve(c, b);
  const la::Vec scores = la::score_arms(theta, c, round.arms, p_.beta);
  int best = 0;
  for (int k = 1; k < static_cast<int>(scores.size()); ++k)
    if (scores[k] > scores[best]) best = k;
  Decision dec;
  dec.arm = best;
  dec.uniform = false;
  dec.pred = la::dot(theta, round.arms[best]);
  dec.width = p_.beta * std::sqrt(la::quad_form_inv(c, round.arms[best]));
  return dec;
}

namespace {

Decision uniform_pick(const env::RoundInput& round, rng::Stream& explore) {
  Decision dec;
  dec.arm = static_cast<int>(explore.next_below(round.arms.size()));
  dec.uniform = true;
  return dec;
}

}  // namespace

Decision Policy::select(const env::RoundInput& round, rng::Stream& explore) {
  if (awaiting_observe_)
    throw std::logic_error("select: previous round has not been observed yet");
  if (round.t != rounds_seen_ + 1)
    throw std::logic_error("select: rounds must arrive sequentially starting at 1");
  if (round.user < 0 || round.user >= u_) throw std::out_of_range("select: user out of range");
  if (round.arms.empty()) throw std::invalid_argument("select: empty arm set");
  for (const la::Vec& x : round.arms)
    if (static_cast<int>(x.size()) != d_)
      throw std::invalid_argument("select: arm dimension mismatch");

  // set-based policies revert everyone to unchecked at phase starts t = 2^{s-1}
  if (set_kind() && (round.t & (round.t - 1)) == 0) sets_.uncheck_all();

  pending_in_init_ = false;
  const int i = round.user;
  Decision dec;
  switch (kind_) {
    case PolicyKind::LinUCBOne:
      dec = ucb_select_stat(users_[0].S, users_[0].b, round);
      break;
    case PolicyKind::LinUCBInd:
      dec = ucb_select_stat(users_[i].S, users_[i].b, round);
      break;
    case PolicyKind::Club:
    case PolicyKind::SaClub:
      dec = ucb_select(cl::connected_component(graph_, i), round);
      break;
    case PolicyKind::UniClub:
      dec = round.t <= t0_ ? uniform_pick(round, explore)
                           : ucb_select(cl::connected_component(graph_, i), round);
      break;
    case PolicyKind::PhaseUniClub: {
      const PhaseClock::Tick tick = clock_->next();
      pending_in_init_ = tick.in_init;
      dec = tick.uniform ? uniform_pick(round, explore)
                         : ucb_select(cl::neighbors_plus_self(graph_, i), round);
      break;
    }
    case PolicyKind::Sclub:
    case PolicyKind::SaSclub: {
      const cl::Cluster& c = sets_.J.at(sets_.cluster_of[i]);
      dec = ucb_select_stat(c.M, c.b, round);
      break;
    }
    case PolicyKind::UniSclub:
      if (round.t <= 2 * t0_) {
        dec = uniform_pick(round, explore);
      } else {
        if (!bulk_done_) bulk_cluster();
        const cl::Cluster& c = sets_.J.at(sets_.cluster_of[i]);
        dec = ucb_select_stat(c.M, c.b, round);
      }
      break;
  }
  if (dec.uniform) ++uniform_rounds_;
  awaiting_observe_ = true;
  pending_arm_ = dec.arm;
  pending_uniform_ = dec.uniform;
  return dec;
}

void Policy::observe(const env::RoundInput& round, int chosen, double reward) {
  if (!awaiting_observe_ || round.t != rounds_seen_ + 1)
    throw std::logic_error("observe: no matching select for this round");
  if (chosen != pending_arm_)
    throw std::logic_error("observe: arm does not match this round's selection");
  if (round.user < 0 || round.user >= u_) throw std::out_of_range("observe: user out of range");
  if (chosen < 0 || chosen >= static_cast<int>(round.arms.size()))
    throw std::out_of_range("observe: arm out of range");
  const la::Vec& x = round.arms[chosen];
  const int i = round.user;

  switch (kind_) {
    case PolicyKind::LinUCBOne:
      cl::update_user(users_[0], x, reward, p_);
      break;
    case PolicyKind::LinUCBInd:
      cl::update_user(users_[i], x, reward, p_);
      break;
    case PolicyKind::Club:
    case PolicyKind::SaClub:
    case PolicyKind::UniClub:
      cl::update_user(users_[i], x, reward, p_);
      delete_edges(i);
      break;
    case PolicyKind::PhaseUniClub:
      cl::update_user(users_[i], x, reward, p_);
      if (!pending_in_init_) delete_edges(i);  // no deletions during the initial block
      break;
    case PolicyKind::Sclub:
    case PolicyKind::SaSclub:
      cl::update_user(users_[i], x, reward, p_);
      cl::cluster_observe(sets_, i, x, reward);
      split_round(i);
      sets_.checked[i] = 1;
      merge_fixpoint();
      break;
    case PolicyKind::UniSclub:
      cl::update_user(users_[i], x, reward, p_);
      cl::cluster_observe(sets_, i, x, reward);
      if (round.t > 2 * t0_) {
        split_round(i);
        sets_.checked[i] = 1;
        merge_fixpoint();
      } else {
        // uniform-exploration block: user- and aggregate-level updates only;
        // clustering is deferred to the one-shot pass at the 2 T0 boundary
        sets_.checked[i] = 1;
      }
      break;
  }
  awaiting_observe_ = false;
  ++rounds_seen_;
}

void Policy::delete_edges(int i) {
  std::vector<int> nbrs;
  for (int l = 0; l < u_; ++l)
    if (l != i && graph_.has_edge(i, l)) nbrs.push_back(l);
  for (int l : nbrs)
    if (cl::delete_check(users_[i], users_[l], p_)) graph_.remove_edge(i, l);
}

void Policy::split_round(int i) {
  const int j = sets_.cluster_of[i];
  const cl::Cluster& c = sets_.J.at(j);
  if (c.members.size() <= 1) return;
  for (int ip : c.members) {
    if (ip == i) continue;
    if (cl::delete_check(users_[i], users_[ip], p_)) {
      cl::split_user(sets_, i, j);
      return;
    }
  }
}

void Policy::merge_fixpoint() {
  bool merged = true;
  while (merged) {
    merged = false;
    for (auto it1 = sets_.J.begin(); it1 != sets_.J.end() && !merged; ++it1) {
      if (!sets_.cluster_checked(it1->first)) continue;
      for (auto it2 = std::next(it1); it2 != sets_.J.end(); ++it2) {
        if (!sets_.cluster_checked(it2->first)) continue;
        if (merge_check(it1->second, it2->second, p_)) {
          cl::merge_clusters(sets_, it1->first, it2->first, p_);
          merged = true;
          break;
        }
      }
    }
  }
}

void Policy::bulk_cluster() {
  // one-shot clustering from the user-level estimates accumulated during the
  // uniform block: split to fixpoint, then merge to fixpoint with every user
  // treated as checked
  bool split = true;
  while (split) {
    split = false;
    for (int i = 0; i < u_ && !split; ++i) {
      const int j = sets_.cluster_of[i];
      const cl::Cluster& c = sets_.J.at(j);
      if (c.members.size() <= 1) continue;
      for (int ip : c.members) {
        if (ip == i) continue;
        if (cl::delete_check(users_[i], users_[ip], p_)) {
          cl::split_user(sets_, i, j);
          split = true;
          break;
        }
      }
    }
  }
  std::fill(sets_.checked.begin(), sets_.checked.end(), uint8_t{1});
  merge_fixpoint();
  bulk_done_ = true;
}

std::vector<std::vector<int>> Policy::partition() const {
  std::vector<std::vector<int>> out;
  if (kind_ == PolicyKind::LinUCBOne) {
    std::vector<int> all(u_);
    for (int i = 0; i < u_; ++i) all[i] = i;
    out.push_back(std::move(all));
  } else if (kind_ == PolicyKind::LinUCBInd) {
    for (int i = 0; i < u_; ++i) out.push_back({i});
  } else if (graph_kind()) {
    std::vector<char> seen(u_, 0);
    for (int i = 0; i < u_; ++i) {
      if (seen[i]) continue;
      std::vector<int> comp = cl::connected_component(graph_, i);
      for (int v : comp) seen[v] = 1;
      out.push_back(std::move(comp));
    }
  } else {
    for (const auto& [id, c] : sets_.J) out.push_back(c.members);
  }
  return out;
}

}  // namespace bandits::ag
