#include "planlearn/toy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "planlearn/rng.hpp"
#include "planlearn/search.hpp"

namespace planlearn {

namespace {

struct TigerState : State {
  explicit TigerState(int p) : pos(p) {}
  int pos;  // 0: tiger behind the left door, 1: right
};

}  // namespace

StepResult TigerModel::step(const State& s, int action, std::uint64_t noise) const {
  const int pos = static_cast<const TigerState&>(s).pos;
  StepResult out;
  if (action == kListen) {
    out.next = std::make_shared<TigerState>(pos);
    const bool correct = to_unit(mix64(noise, 1)) < kAccuracy;
    out.observation = correct ? pos : 1 - pos;
    out.reward.safe = -1.0;
    return out;
  }
  const int door = action == kOpenLeft ? 0 : 1;
  if (door == pos) {
    out.reward.collision = -100.0;
  } else {
    out.reward.safe = 10.0;
  }
  out.next = std::make_shared<TigerState>(to_unit(mix64(noise, 2)) < 0.5 ? 0 : 1);
  out.observation = to_unit(mix64(noise, 3)) < 0.5 ? 0 : 1;
  return out;
}

double TigerModel::transition(int s, int a, int s2) const {
  if (a == kListen) return s == s2 ? 1.0 : 0.0;
  return 0.5;
}

double TigerModel::observation(int s2, int a, int z) const {
  if (a == kListen) return z == s2 ? kAccuracy : 1.0 - kAccuracy;
  return 0.5;
}

FactoredReward TigerModel::reward(int s, int a) const {
  if (a == kListen) return {-1.0, 0.0};
  const int door = a == kOpenLeft ? 0 : 1;
  if (door == s) return {0.0, -100.0};
  return {10.0, 0.0};
}

StatePtr TigerModel::make_state(int index) const {
  return std::make_shared<TigerState>(index);
}

int TigerModel::state_index(const State& s) const {
  return static_cast<const TigerState&>(s).pos;
}

void TigerEnvironment::reset(std::uint64_t seed) {
  seed_ = seed;
  steps_ = 0;
  state_ = model_.make_state(to_unit(mix64(seed, 0x7160)) < 0.5 ? 0 : 1);
}

EnvStep TigerEnvironment::step(int action) {
  StepResult r = model_.step(*state_, action, mix64(seed_, 0x8000 + steps_));
  ++steps_;
  state_ = r.next;
  EnvStep out;
  out.observation = r.observation;
  out.reward = r.reward;
  out.smooth_reward = r.reward.total();
  out.done = false;
  return out;
}

Belief TigerEnvironment::initial_belief(int particle_count, std::uint64_t) const {
  (void)particle_count;  // exact two-state belief; one particle per state
  const std::array<double, 2> uniform = {0.5, 0.5};
  return make_exact_belief(model_, uniform);
}

// ---------------------------------------------------------------------------

EnumeratedMdp make_two_state_mdp() {
  // Deterministic transitions keep the soft-Q regression target noise-free,
  // and the optimal values solve by hand: V(s0) = 10, V(s1) = 9.
  EnumeratedMdp mdp;
  mdp.num_states = 2;
  mdp.num_actions = 2;
  mdp.gamma = 0.9;
  mdp.transition = {
      1.0, 0.0,  // (s0, stay) -> s0
      0.0, 1.0,  // (s0, move) -> s1
      0.0, 1.0,  // (s1, stay) -> s1
      1.0, 0.0,  // (s1, move) -> s0
  };
  mdp.reward = {
      1.0, 0.0,   // s0
      -0.5, 0.0,  // s1
  };
  return mdp;
}

std::vector<double> exact_value_iteration(const EnumeratedMdp& mdp, double tol,
                                          double init) {
  std::vector<double> v(mdp.num_states, init);
  for (long iter = 0; iter < 1000000; ++iter) {
    std::vector<double> next(mdp.num_states, 0.0);
    double delta = 0.0;
    for (int s = 0; s < mdp.num_states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < mdp.num_actions; ++a) {
        double q = mdp.r(s, a);
        for (int s2 = 0; s2 < mdp.num_states; ++s2) q += mdp.gamma * mdp.t(s, a, s2) * v[s2];
        best = std::max(best, q);
      }
      next[s] = best;
      delta = std::max(delta, std::abs(next[s] - v[s]));
    }
    v = std::move(next);
    if (delta < tol) break;
  }
  return v;
}

std::vector<double> soft_value_iteration(const EnumeratedMdp& mdp, double alpha,
                                         double tol) {
  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  std::vector<double> q(S * A, 0.0);
  std::vector<double> v(S, 0.0);
  for (long iter = 0; iter < 1000000; ++iter) {
    for (int s = 0; s < S; ++s) {
      // soft value: alpha * logsumexp(q / alpha)
      double hi = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < A; ++a) hi = std::max(hi, q[s * A + a]);
      double sum = 0.0;
      for (int a = 0; a < A; ++a) sum += std::exp((q[s * A + a] - hi) / alpha);
      v[s] = hi + alpha * std::log(sum);
    }
    double delta = 0.0;
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        double nq = mdp.r(s, a);
        for (int s2 = 0; s2 < S; ++s2) nq += mdp.gamma * mdp.t(s, a, s2) * v[s2];
        delta = std::max(delta, std::abs(nq - q[s * A + a]));
        q[s * A + a] = nq;
      }
    }
    if (delta < tol) break;
  }
  return q;
}

// ---------------------------------------------------------------------------

namespace {

struct OracleNode {
  std::vector<int> ids;
  std::vector<StatePtr> states;
  std::vector<char> alive;
};

struct OracleWalk {
  const ScenarioSet* set = nullptr;
  const DomainModel* model = nullptr;
  int max_depth = 0;
  int horizon = 0;
  long steps = 0;

  FactoredValue value(const OracleNode& node, int depth, std::vector<double>* root_totals) {
    bool any_alive = false;
    for (char a : node.alive) any_alive |= (a != 0);
    if (!any_alive) return {};
    if (depth >= max_depth) {
      return init_estimates(*set, node.ids, node.states, node.alive, depth, horizon, *model)
          .rollout;
    }

    const int actions = model->action_count();
    const double subset = static_cast<double>(node.ids.size());
    const double gamma = model->gamma();
    FactoredValue best;
    double best_total = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < actions; ++a) {
      FactoredReward rho_sum;
      std::map<std::uint64_t, OracleNode> groups;
      for (std::size_t k = 0; k < node.ids.size(); ++k) {
        const int sid = node.ids[k];
        if (!node.alive[k]) {
          OracleNode& g = groups[kTerminalObservation];
          g.ids.push_back(sid);
          g.states.push_back(node.states[k]);
          g.alive.push_back(0);
          continue;
        }
        StepResult r =
            step_scenario(set->scenarios[sid], depth + 1, *node.states[k], a, *model);
        ++steps;
        if (steps > 10'000'000) throw SizeGuardError();
        rho_sum += r.reward;
        OracleNode& g = groups[r.observation];
        g.ids.push_back(sid);
        g.states.push_back(std::move(r.next));
        g.alive.push_back(model->is_terminal(*g.states.back()) ? 0 : 1);
      }
      FactoredValue av;
      av.safe = rho_sum.safe / subset;
      av.collision = rho_sum.collision / subset;
      for (const auto& [obs, child] : groups) {
        const double frac = static_cast<double>(child.ids.size()) / subset;
        const FactoredValue cv = value(child, depth + 1, nullptr);
        av.safe += gamma * frac * cv.safe;
        av.collision += gamma * frac * cv.collision;
      }
      av.refresh_total();
      if (root_totals != nullptr) root_totals->push_back(av.total());
      if (av.total() > best_total) {
        best_total = av.total();
        best = av;
      }
    }
    return best;
  }
};

}  // namespace

OracleResult exhaustive_despot_value(const ScenarioSet& scenarios, const DomainModel& model,
                                     int max_depth, int rollout_extra) {
  OracleWalk walk;
  walk.set = &scenarios;
  walk.model = &model;
  walk.max_depth = max_depth;
  walk.horizon = max_depth + rollout_extra;

  OracleNode root;
  for (const Scenario& sc : scenarios.scenarios) {
    root.ids.push_back(sc.id);
    root.states.push_back(sc.initial_state);
    root.alive.push_back(model.is_terminal(*sc.initial_state) ? 0 : 1);
  }

  OracleResult out;
  const FactoredValue v = walk.value(root, 0, &out.action_values);
  out.value = v.total();
  out.value_safe = v.safe;
  out.value_col = v.collision;
  out.action = 0;
  for (std::size_t a = 1; a < out.action_values.size(); ++a) {
    if (out.action_values[a] > out.action_values[out.action]) out.action = static_cast<int>(a);
  }
  return out;
}

}  // namespace planlearn
