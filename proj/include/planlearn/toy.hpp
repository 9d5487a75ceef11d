#pragma once

#include <array>
#include <memory>
#include <vector>

#include "planlearn/core.hpp"
#include "planlearn/scenario.hpp"

namespace planlearn {

// Classic two-door benchmark: tiger behind one of two doors, a noisy listen
// action, catastrophic penalty for opening the wrong door. Constants follow
// the standard benchmark: listen accuracy 0.85, listen reward -1, correct
// door +10, wrong door -100, gamma 0.95. The -100 penalty is carried on the
// collision factor so the factored machinery is exercised outside the
// driving domain too.
class TigerModel : public DomainModel, public EnumeratedPomdp {
 public:
  static constexpr int kListen = 0;
  static constexpr int kOpenLeft = 1;
  static constexpr int kOpenRight = 2;
  static constexpr double kAccuracy = 0.85;

  int action_count() const override { return 3; }
  double gamma() const override { return 0.95; }
  StepResult step(const State& s, int action, std::uint64_t noise) const override;
  bool is_terminal(const State&) const override { return false; }
  int default_rollout_action(const State&) const override { return kListen; }
  double upper_bound(const State&) const override { return 10.0 / (1.0 - gamma()); }
  std::size_t feature_length() const override { return 1; }
  FeatureVector encode_history(std::span<const StatePtr>) const override {
    return FeatureVector{{1.0}};
  }
  const EnumeratedPomdp* enumeration() const override { return this; }

  int num_states() const override { return 2; }
  int num_observations() const override { return 2; }
  double transition(int s, int a, int s2) const override;
  double observation(int s2, int a, int z) const override;
  FactoredReward reward(int s, int a) const override;
  StatePtr make_state(int index) const override;
  int state_index(const State& s) const override;
};

class TigerEnvironment : public Environment {
 public:
  const DomainModel& model() const override { return model_; }
  void reset(std::uint64_t seed) override;
  EnvStep step(int action) override;
  Belief initial_belief(int particle_count, std::uint64_t seed) const override;

 private:
  TigerModel model_;
  StatePtr state_;
  std::uint64_t seed_ = 0;
  long steps_ = 0;
};

// ---------------------------------------------------------------------------
// Small enumerable MDP used as a convergence oracle for the reinforcement
// learner and for value-iteration sanity checks.

struct EnumeratedMdp {
  int num_states = 0;
  int num_actions = 0;
  double gamma = 0.9;
  std::vector<double> transition;  // [s * A * S + a * S + s2]
  std::vector<double> reward;      // [s * A + a]

  double t(int s, int a, int s2) const {
    return transition[(s * num_actions + a) * num_states + s2];
  }
  double r(int s, int a) const { return reward[s * num_actions + a]; }
};

EnumeratedMdp make_two_state_mdp();

// Standard Bellman iteration to a fixed point. Pass a pessimistic init to
// observe monotone convergence.
std::vector<double> exact_value_iteration(const EnumeratedMdp& mdp, double tol,
                                          double init = 0.0);

// Fixed point of the soft Bellman operator with entropy weight alpha:
// V(s) = alpha * logsumexp(Q(s,.) / alpha). Returns Q row-major [s][a].
std::vector<double> soft_value_iteration(const EnumeratedMdp& mdp, double alpha,
                                         double tol);

// ---------------------------------------------------------------------------
// Exhaustive determinized-tree oracle: fully expands the sparse tree over
// the given scenarios (all actions, sampled observations), initializes leaf
// values with the same rollout estimates the planner uses, and performs an
// exact bottom-up factored backup. This is the convergence target of the
// anytime search under identical scenarios.

struct OracleResult {
  int action = -1;
  double value = 0.0;
  double value_safe = 0.0;
  double value_col = 0.0;
  std::vector<double> action_values;
};

OracleResult exhaustive_despot_value(const ScenarioSet& scenarios, const DomainModel& model,
                                     int max_depth, int rollout_extra);

}  // namespace planlearn
