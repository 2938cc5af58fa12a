#pragma once
// The nine policies behind one interface: select(round) -> Decision,
// observe(round, chosen, reward) -> state update. Clustering state is either a
// deletion-only user graph (CLUB family) or a split/merge cluster collection
// (SCLUB family); the SA* variants reuse the same machinery with the smoothed
// substitution lambda_x -> c1 sigma^2 / log K and L -> 1 + sqrt(d) R already
// applied to their ConfidenceParams.
#include <memory>
#include <string>
#include <vector>

#include "bandits/clusters.hpp"
#include "bandits/env.hpp"
#include "bandits/rng.hpp"

namespace bandits::ag {

enum class PolicyKind {
  LinUCBOne,
  LinUCBInd,
  Club,
  Sclub,
  UniClub,
  UniSclub,
  PhaseUniClub,
  SaClub,
  SaSclub,
};

std::string to_string(PolicyKind k);
PolicyKind policy_kind_from_string(const std::string& name);  // throws std::invalid_argument

// theta_hat . x + beta * sqrt(x^T (lambda I + m_stat)^{-1} x)
double ucb_index(const la::Vec& theta_hat, const la::SymMatrix& m_stat, const la::Vec& x,
                 const cl::ConfidenceParams& p);
double ucb_index(const la::Vec& theta_hat, const la::Chol& m_bar_chol, const la::Vec& x,
                 double beta);

// lambda_x <- c1 sigma^2 / log K, L <- 1 + sqrt(d) R. K may be fractional
// (it only enters through log K); K < 2 is an error since log K <= log 2 is
// the smallest usable value.
cl::ConfidenceParams smoothed_params(const cl::ConfidenceParams& p, double sigma, double R,
                                     double K, int d, double c1);

// Uniform-exploration budgets for the phased policy.
// T_init = 16u log(u/delta) + 4u (8L^2/lambda_x) log(ud/delta), scaled, ceil.
long long t_init_budget(const cl::ConfidenceParams& p);
// T_s = 4u 512d 2^s / lambda_x log(u/delta), scaled, ceil, at least 1.
long long t_phase_budget(const cl::ConfidenceParams& p, int s);

// Clock for the phased policy: T_init uniform rounds, then phase s = 0, 1, ...
// of exactly 2^{alpha s} * T_s rounds whose first T_s are uniform.
class PhaseClock {
 public:
  PhaseClock(const cl::ConfidenceParams& p, int alpha);

  struct Tick {
    bool uniform = false;
    bool in_init = false;  // inside the initial block (no edge deletion there)
    int phase = -1;        // -1 during the initial block
    long long tau = 0;     // 1-based position within the block/phase
  };
  Tick next();

  long long t_init() const { return t_init_; }
  long long budget(int s) const;        // integer T_s
  long long phase_length(int s) const;  // 2^{alpha s} * T_s
  int phase() const { return s_; }
  // realized per-phase tallies (index = phase), for bookkeeping checks
  const std::vector<long long>& uniform_counts() const { return uni_; }
  const std::vector<long long>& realized_lengths() const { return lens_; }

 private:
  void begin_phase();

  cl::ConfidenceParams p_;
  int alpha_;
  long long t_init_ = 0;
  long long init_seen_ = 0;
  int s_ = -1;
  long long tau_ = 0;
  long long ts_cur_ = 0;
  long long len_cur_ = 0;
  std::vector<long long> uni_, lens_;
};

struct Decision {
  int arm = 0;
  bool uniform = false;
  double pred = 0.0;   // theta_hat . x of the chosen arm (0 for uniform picks)
  double width = 0.0;  // beta ||x||_{M_bar^{-1}} of the chosen arm (0 for uniform)
};

// One policy instance drives one run. Rounds are strictly sequential: select
// for round t, then observe for round t with the arm select returned.
// Noncopyable (ClusterSets aliases the user-stat vector).
class Policy {
 public:
  Policy(PolicyKind kind, const cl::ConfidenceParams& p, int alpha = 2);
  Policy(const Policy&) = delete;
  Policy& operator=(const Policy&) = delete;

  PolicyKind kind() const { return kind_; }
  const cl::ConfidenceParams& params() const { return p_; }

  Decision select(const env::RoundInput& round, rng::Stream& explore);
  void observe(const env::RoundInput& round, int chosen, double reward);

  // current clustering as sorted member lists (deterministic order)
  std::vector<std::vector<int>> partition() const;

  // introspection for tests and the verification suite
  long long rounds_seen() const { return rounds_seen_; }
  long long uniform_rounds() const { return uniform_rounds_; }
  long long t0() const { return t0_; }
  const std::vector<cl::UserStat>& user_stats() const { return users_; }
  const cl::UserGraph* graph() const;
  const cl::ClusterSets* sets() const;
  const PhaseClock* phase_clock() const;

 private:
  bool graph_kind() const;
  bool set_kind() const;
  Decision ucb_select(const std::vector<int>& members, const env::RoundInput& round);
  Decision ucb_select_stat(const la::SymMatrix& m, const la::Vec& b,
                           const env::RoundInput& round);
  void delete_edges(int i);
  void split_round(int i);
  void merge_fixpoint();
  void bulk_cluster();

  PolicyKind kind_;
  cl::ConfidenceParams p_;
  int u_ = 0, d_ = 0;
  long long rounds_seen_ = 0;
  long long uniform_rounds_ = 0;
  bool awaiting_observe_ = false;
  int pending_arm_ = -1;
  bool pending_uniform_ = false;
  bool pending_in_init_ = false;

  std::vector<cl::UserStat> users_;  // LinUCBOne keeps a single pseudo-user at [0]
  cl::UserGraph graph_;
  cl::ClusterSets sets_;
  std::unique_ptr<PhaseClock> clock_;
  long long t0_ = 0;        // UniClub budget; UniSclub uses 2 * t0_
  bool bulk_done_ = false;  // UniSclub one-shot clustering at the 2 T0 boundary
};

}  // namespace bandits::ag
