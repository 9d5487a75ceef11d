#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace planlearn {

// ---------------------------------------------------------------------------
// Errors

struct ZeroLikelihoodError : std::runtime_error {
  ZeroLikelihoodError() : std::runtime_error("observation has zero likelihood under belief") {}
};
struct TerminalStateError : std::runtime_error {
  TerminalStateError() : std::runtime_error("cannot step a terminal state") {}
};
struct EmptyBeliefError : std::runtime_error {
  EmptyBeliefError() : std::runtime_error("belief has no particles") {}
};
struct BoundInversionError : std::runtime_error {
  explicit BoundInversionError(const std::string& what) : std::runtime_error(what) {}
};
struct SizeGuardError : std::runtime_error {
  SizeGuardError() : std::runtime_error("exhaustive expansion exceeds the size guard") {}
};

// ---------------------------------------------------------------------------
// Rewards

// Reward split into a smooth component (efficiency + smoothness terms) and a
// rare catastrophic component (collision penalties). The two factors always
// sum to the scalar reward the domain would report unfactored.
struct FactoredReward {
  double safe = 0.0;
  double collision = 0.0;

  double total() const { return safe + collision; }

  FactoredReward& operator+=(const FactoredReward& o) {
    safe += o.safe;
    collision += o.collision;
    return *this;
  }
};

inline FactoredReward operator*(double k, const FactoredReward& r) {
  return {k * r.safe, k * r.collision};
}

struct DiscountSpec {
  double gamma = 0.95;  // the paper leaves this unstated; 0.95 by default
  int max_horizon = 90;
  int search_depth = 5;
};

// ---------------------------------------------------------------------------
// States and the generative model

class State {
 public:
  virtual ~State() = default;
};

using StatePtr = std::shared_ptr<const State>;

struct StepResult {
  StatePtr next;
  std::uint64_t observation = 0;
  FactoredReward reward;
};

struct FeatureVector {
  std::vector<double> values;
};

// Enumerated (S, A, Z, T, O, R) view for toy domains that support it.
class EnumeratedPomdp {
 public:
  virtual ~EnumeratedPomdp() = default;
  virtual int num_states() const = 0;
  virtual int num_observations() const = 0;
  virtual double transition(int s, int a, int s2) const = 0;     // T(s,a,s')
  virtual double observation(int s2, int a, int z) const = 0;    // O(s',a,z)
  virtual FactoredReward reward(int s, int a) const = 0;         // R(s,a)
  virtual StatePtr make_state(int index) const = 0;
  virtual int state_index(const State& s) const = 0;
};

// Generative POMDP model. step() must be a pure function of its arguments:
// equal (state, action, noise) triples give bit-identical results.
class DomainModel {
 public:
  virtual ~DomainModel() = default;

  virtual int action_count() const = 0;
  virtual double gamma() const = 0;
  virtual StepResult step(const State& s, int action, std::uint64_t noise) const = 0;
  virtual bool is_terminal(const State& s) const = 0;

  // Action played by bound-initialization rollouts. Must not depend on
  // hidden state components, or per-scenario rollouts stop being the value
  // of a single blind policy and the root gap can grow between trials.
  virtual int default_rollout_action(const State& s) const = 0;

  // Admissible state-value upper bound; must satisfy
  // h(s) >= max_a E[r + gamma * h(s')] for the gap to shrink monotonically.
  virtual double upper_bound(const State& s) const = 0;

  // Expected immediate factored reward of (s, a). The default evaluates the
  // generative step with a fixed noise word; domains with analytic rewards
  // override.
  virtual FactoredReward mean_reward(const State& s, int action) const {
    return step(s, action, 0x5EEDED).reward;
  }

  // History encoding for the learned heuristics: observable components of
  // the given frames (oldest first, newest = current), each frame registered
  // to its own ego pose where that applies.
  virtual std::size_t feature_length() const = 0;
  virtual FeatureVector encode_history(std::span<const StatePtr> frames) const = 0;

  virtual const EnumeratedPomdp* enumeration() const { return nullptr; }
};

// ---------------------------------------------------------------------------
// Beliefs

// Weighted particle list. Exact beliefs on enumerable domains use one
// particle per state, ordered by state index.
struct Belief {
  std::vector<std::pair<StatePtr, double>> particles;

  bool empty() const { return particles.empty(); }

  double weight_sum() const {
    double s = 0.0;
    for (const auto& [st, w] : particles) s += w;
    return s;
  }

  void normalize();

  // Highest-weight particle (lowest index on ties).
  const StatePtr& mode() const;
};

Belief make_exact_belief(const DomainModel& model, std::span<const double> probs);

// Eq.-style exact filter: transition-weighted, observation-likelihood
// weighted, renormalized. Requires enumeration support and an exact belief.
// Throws ZeroLikelihoodError when the normalizer vanishes.
Belief exact_bayes_update(const Belief& belief, int action, std::uint64_t obs,
                          const DomainModel& model);

struct ParticleUpdateResult {
  Belief belief;
  bool depleted = false;  // all weights vanished; recovered with uniform weights
};

// Sampled filter for non-enumerable domains: propagate through the
// generative step, keep particles whose sampled observation matches the
// received one, resample to particle_count.
ParticleUpdateResult particle_bayes_update(const Belief& belief, int action,
                                           std::uint64_t obs, const DomainModel& model,
                                           int particle_count, std::uint64_t seed);

// rho(b, a): belief-weighted expected immediate reward, factors averaged
// independently.
FactoredReward expected_immediate_reward(const Belief& belief, int action,
                                         const DomainModel& model);

// ---------------------------------------------------------------------------
// Environments

// Per-step feedback from an environment. The smooth reward channel is the
// shaped signal consumed by the reinforcement learner; domains without a
// notion of proximity hazard report the raw total.
struct EnvStep {
  std::uint64_t observation = 0;
  FactoredReward reward;
  double smooth_reward = 0.0;
  bool done = false;
  double speed = 0.0;
  double ttc = std::numeric_limits<double>::infinity();
  bool near_miss = false;
  double ego_x = 0.0;
  double ego_y = 0.0;
  double ego_heading = 0.0;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual const DomainModel& model() const = 0;
  virtual void reset(std::uint64_t seed) = 0;
  virtual EnvStep step(int action) = 0;
  virtual Belief initial_belief(int particle_count, std::uint64_t seed) const = 0;

  // Representative frame of the latest observation, for history encoding.
  // Domains whose observations are discretized physical states return
  // exactly that; the default falls back to the belief mode.
  virtual StatePtr observable_frame(const Belief& b) const { return b.mode(); }

  // Pre-planning-cycle belief refresh: domains whose sensing pins state
  // components re-seat those components to the latest observation so that
  // particle drift cannot accumulate; hidden components stay as filtered.
  // Default: identity.
  virtual Belief reanchor(Belief b) const { return b; }
};

}  // namespace planlearn
