#pragma once

#include <cstdint>
#include <vector>

#include "planlearn/core.hpp"

namespace planlearn {

// A determinized future: a start state sampled from the belief plus a
// reproducible random stream, one 64-bit word per future depth. Fixing the
// scenario set fixes every stochastic outcome reachable by the search.
struct Scenario {
  int id = 0;
  StatePtr initial_state;
  std::uint64_t stream_seed = 0;

  // Stream word for the given depth (depth >= 1 is the first future step).
  // Counter-based so traversal order does not matter.
  std::uint64_t stream(int depth) const;
};

struct ScenarioSet {
  std::vector<Scenario> scenarios;
  int count() const { return static_cast<int>(scenarios.size()); }
};

// Draws K start states proportionally to belief weights (iid inverse-CDF
// draws) and derives per-scenario stream seeds from the master seed by a
// splittable counter scheme. Deterministic given (belief, K, master_seed).
ScenarioSet sample_scenarios(const Belief& belief, int count, std::uint64_t master_seed);

// One determinized simulation step for a scenario at the given depth.
// Throws TerminalStateError when the state is terminal.
StepResult step_scenario(const Scenario& scenario, int depth, const State& state,
                         int action, const DomainModel& model);

}  // namespace planlearn
