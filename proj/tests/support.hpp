#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "planlearn/core.hpp"
#include "planlearn/rng.hpp"
#include "planlearn/search.hpp"

namespace planlearn::test {

// Deterministic chain domain: integer position, advance/stay actions, exact
// position observations, terminal at the right end. Transition ignores the
// noise word entirely.
struct ChainState : State {
  explicit ChainState(int p) : pos(p) {}
  int pos;
};

class ChainModel : public DomainModel {
 public:
  explicit ChainModel(int length = 8) : length_(length) {}

  int action_count() const override { return 2; }  // 0: advance, 1: stay
  double gamma() const override { return 0.9; }

  StepResult step(const State& s, int action, std::uint64_t) const override {
    const int pos = static_cast<const ChainState&>(s).pos;
    StepResult r;
    const int next = action == 0 ? std::min(pos + 1, length_) : pos;
    r.next = std::make_shared<ChainState>(next);
    r.observation = static_cast<std::uint64_t>(next);
    r.reward.safe = action == 0 ? -1.0 : -2.0;
    return r;
  }

  bool is_terminal(const State& s) const override {
    return static_cast<const ChainState&>(s).pos >= length_;
  }
  int default_rollout_action(const State&) const override { return 1; }
  double upper_bound(const State&) const override { return 0.0; }
  std::size_t feature_length() const override { return 1; }
  FeatureVector encode_history(std::span<const StatePtr>) const override {
    return FeatureVector{{1.0}};
  }

 private:
  int length_;
};

inline Belief point_belief(StatePtr s) {
  Belief b;
  b.particles.emplace_back(std::move(s), 1.0);
  return b;
}

// Walks a finished tree checking the bound sandwich and factored additivity
// at every node and edge. Returns the number of nodes visited.
inline long check_tree_invariants(const BeliefNode& node, bool clipped) {
  long visited = 1;
  if (clipped) {
    REQUIRE(node.lower <= node.value_est.total());
    REQUIRE(node.value_est.total() <= node.upper);
  }
  REQUIRE(std::abs(node.value_est.safe + node.value_est.collision - node.value_est.total()) <=
          1e-9);
  for (const ActionEdge& e : node.edges) {
    if (clipped) {
      REQUIRE(e.lower <= e.value_est.total());
      REQUIRE(e.value_est.total() <= e.upper);
    }
    std::size_t child_scenarios = 0;
    for (const auto& [obs, child] : e.children) {
      child_scenarios += child->scenario_ids.size();
      visited += check_tree_invariants(*child, clipped);
    }
    REQUIRE(child_scenarios == node.scenario_ids.size());
  }
  return visited;
}

// Central finite differences over one parameter vector.
inline double max_grad_rel_err(std::vector<double>& params, std::span<const double> analytic,
                               const std::function<double()>& loss, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss();
    params[i] = saved - h;
    const double down = loss();
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-2});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace planlearn::test
