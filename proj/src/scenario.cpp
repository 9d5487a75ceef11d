#include "planlearn/scenario.hpp"

#include <stdexcept>

#include "planlearn/rng.hpp"

namespace planlearn {

std::uint64_t Scenario::stream(int depth) const {
  return mix64(stream_seed, static_cast<std::uint64_t>(depth));
}

ScenarioSet sample_scenarios(const Belief& belief, int count, std::uint64_t master_seed) {
  if (belief.empty()) throw EmptyBeliefError();
  if (count < 1) throw std::invalid_argument("scenario count must be >= 1");

  std::vector<double> cumulative;
  cumulative.reserve(belief.particles.size());
  double acc = 0.0;
  for (const auto& [st, w] : belief.particles) {
    acc += w;
    cumulative.push_back(acc);
  }

  ScenarioSet set;
  set.scenarios.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double u = to_unit(mix64(master_seed, 2 * static_cast<std::uint64_t>(i))) * acc;
    std::size_t pick = 0;
    while (pick + 1 < cumulative.size() && cumulative[pick] < u) ++pick;
    set.scenarios.push_back(Scenario{
        i, belief.particles[pick].first,
        mix64(master_seed, 2 * static_cast<std::uint64_t>(i) + 1)});
  }
  return set;
}

StepResult step_scenario(const Scenario& scenario, int depth, const State& state,
                         int action, const DomainModel& model) {
  if (model.is_terminal(state)) throw TerminalStateError();
  return model.step(state, action, scenario.stream(depth));
}

}  // namespace planlearn
