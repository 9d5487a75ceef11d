#include "planlearn/core.hpp"

#include <algorithm>
#include <cmath>

#include "planlearn/rng.hpp"

namespace planlearn {

void Belief::normalize() {
  const double s = weight_sum();
  if (s <= 0.0) throw EmptyBeliefError();
  for (auto& [st, w] : particles) w /= s;
}

const StatePtr& Belief::mode() const {
  if (particles.empty()) throw EmptyBeliefError();
  std::size_t best = 0;
  for (std::size_t i = 1; i < particles.size(); ++i) {
    if (particles[i].second > particles[best].second) best = i;
  }
  return particles[best].first;
}

Belief make_exact_belief(const DomainModel& model, std::span<const double> probs) {
  const EnumeratedPomdp* en = model.enumeration();
  if (en == nullptr || static_cast<int>(probs.size()) != en->num_states()) {
    throw std::invalid_argument("make_exact_belief requires an enumerable domain");
  }
  Belief b;
  b.particles.reserve(probs.size());
  for (int i = 0; i < en->num_states(); ++i) {
    b.particles.emplace_back(en->make_state(i), probs[i]);
  }
  b.normalize();
  return b;
}

Belief exact_bayes_update(const Belief& belief, int action, std::uint64_t obs,
                          const DomainModel& model) {
  const EnumeratedPomdp* en = model.enumeration();
  if (en == nullptr) throw std::invalid_argument("exact_bayes_update requires enumeration");
  if (belief.empty()) throw EmptyBeliefError();

  const int n = en->num_states();
  std::vector<double> prior(n, 0.0);
  for (const auto& [st, w] : belief.particles) prior[en->state_index(*st)] += w;

  std::vector<double> post(n, 0.0);
  double eta = 0.0;
  for (int s2 = 0; s2 < n; ++s2) {
    double mass = 0.0;
    for (int s = 0; s < n; ++s) mass += en->transition(s, action, s2) * prior[s];
    post[s2] = en->observation(s2, action, static_cast<int>(obs)) * mass;
    eta += post[s2];
  }
  if (eta < 1e-300) throw ZeroLikelihoodError();

  Belief out;
  out.particles.reserve(n);
  for (int s2 = 0; s2 < n; ++s2) out.particles.emplace_back(en->make_state(s2), post[s2] / eta);
  return out;
}

namespace {

// Systematic resampling; deterministic given the seed.
std::vector<std::size_t> resample_indices(std::span<const double> weights, int count,
                                          std::uint64_t seed) {
  std::vector<double> cumulative(weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    cumulative[i] = acc;
  }
  const double offset = to_unit(mix64(seed, 0xCAFEu));
  std::vector<std::size_t> picks(count);
  std::size_t j = 0;
  for (int k = 0; k < count; ++k) {
    const double target = (offset + k) / count * acc;
    while (j + 1 < cumulative.size() && cumulative[j] < target) ++j;
    picks[k] = j;
  }
  return picks;
}

}  // namespace

ParticleUpdateResult particle_bayes_update(const Belief& belief, int action,
                                           std::uint64_t obs, const DomainModel& model,
                                           int particle_count, std::uint64_t seed) {
  if (belief.empty()) throw EmptyBeliefError();

  std::vector<StatePtr> propagated;
  std::vector<double> weights;
  propagated.reserve(belief.particles.size());
  weights.reserve(belief.particles.size());
  for (std::size_t i = 0; i < belief.particles.size(); ++i) {
    const auto& [st, w] = belief.particles[i];
    if (model.is_terminal(*st)) {
      propagated.push_back(st);
      weights.push_back(0.0);
      continue;
    }
    StepResult r = model.step(*st, action, mix64(seed, i));
    propagated.push_back(r.next);
    weights.push_back(r.observation == obs ? w : 0.0);
  }

  ParticleUpdateResult out;
  double mass = 0.0;
  for (double w : weights) mass += w;
  if (mass < 1e-300) {
    // Depletion: no particle explains the observation. Restart from the
    // propagated set with uniform weights and report the event.
    out.depleted = true;
    std::fill(weights.begin(), weights.end(), 1.0);
  }

  const auto picks = resample_indices(weights, particle_count, seed);
  out.belief.particles.reserve(particle_count);
  for (std::size_t idx : picks) {
    out.belief.particles.emplace_back(propagated[idx], 1.0 / particle_count);
  }
  return out;
}

FactoredReward expected_immediate_reward(const Belief& belief, int action,
                                         const DomainModel& model) {
  if (belief.empty()) throw EmptyBeliefError();
  FactoredReward acc;
  if (const EnumeratedPomdp* en = model.enumeration()) {
    for (const auto& [st, w] : belief.particles) {
      acc += w * en->reward(en->state_index(*st), action);
    }
    return acc;
  }
  for (const auto& [st, w] : belief.particles) {
    acc += w * model.mean_reward(*st, action);
  }
  return acc;
}

}  // namespace planlearn
