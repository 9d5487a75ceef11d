#include "planlearn/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

namespace planlearn {

ActionEdge::ActionEdge() = default;
ActionEdge::ActionEdge(ActionEdge&&) noexcept = default;
ActionEdge& ActionEdge::operator=(ActionEdge&&) noexcept = default;
ActionEdge::~ActionEdge() = default;

FactoredValue scenario_rollout(const Scenario& scenario, const StatePtr& state,
                               int from_depth, int horizon, const DomainModel& model) {
  FactoredValue acc;
  double disc = 1.0;
  StatePtr cur = state;
  const double gamma = model.gamma();
  for (int depth = from_depth + 1; depth <= horizon; ++depth) {
    if (model.is_terminal(*cur)) break;
    const int action = model.default_rollout_action(*cur);
    StepResult r = model.step(*cur, action, scenario.stream(depth));
    acc.safe += disc * r.reward.safe;
    acc.collision += disc * r.reward.collision;
    disc *= gamma;
    cur = std::move(r.next);
  }
  acc.refresh_total();
  return acc;
}

BoundInit init_estimates(const ScenarioSet& set, std::span<const int> ids,
                         std::span<const StatePtr> states, std::span<const char> alive,
                         int depth, int horizon, const DomainModel& model) {
  BoundInit out;
  const double n = static_cast<double>(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (!alive[k]) continue;
    const FactoredValue roll =
        scenario_rollout(set.scenarios[ids[k]], states[k], depth, horizon, model);
    out.rollout.safe += roll.safe;
    out.rollout.collision += roll.collision;
    out.upper += model.upper_bound(*states[k]);
  }
  out.rollout.safe /= n;
  out.rollout.collision /= n;
  out.rollout.refresh_total();
  out.upper /= n;
  out.lower = out.rollout.total();
  return out;
}

namespace {

StatePtr representative(const BeliefNode& node) {
  for (std::size_t k = 0; k < node.states.size(); ++k) {
    if (node.alive[k]) return node.states[k];
  }
  return node.states.empty() ? nullptr : node.states.front();
}

}  // namespace

void init_bounds(BeliefNode& node, SearchContext& ctx) {
  node.all_dead = true;
  for (char a : node.alive) {
    if (a) {
      node.all_dead = false;
      break;
    }
  }
  if (node.all_dead) {
    node.lower = node.upper = 0.0;
    node.value_est = {};
    node.rollout_value = {};
    node.init_lower = node.init_upper = 0.0;
    return;
  }

  const BoundInit init = init_estimates(*ctx.scenarios, node.scenario_ids, node.states,
                                        node.alive, node.depth, ctx.rollout_horizon,
                                        *ctx.model);
  node.rollout_value = init.rollout;

  if (node.depth >= ctx.config.max_depth) {
    // Nothing below this node can ever be searched; its value is pinned at
    // the default-policy estimate and the bounds collapse.
    node.lower = node.upper = init.lower;
    node.value_est = init.rollout;
    node.init_lower = node.init_upper = init.lower;
    return;
  }

  if (init.upper < init.lower) {
    throw BoundInversionError("upper-bound heuristic below rollout value at depth " +
                              std::to_string(node.depth));
  }
  node.lower = init.lower;
  node.upper = init.upper;
  node.init_lower = init.lower;
  node.init_upper = init.upper;

  const FeatureVector x = ctx.model->encode_history(node.frames);
  const std::optional<FactoredValuePrior> prior = ctx.provider->value_prior(x);
  if (!prior.has_value()) {
    // Cold-start sentinel: midpoint of the initial bounds, decomposed by
    // scaling the rollout factors (sign-preserving) so neither factor can
    // take a sign the domain never produces.
    const double mid = 0.5 * (init.lower + init.upper);
    const double ratio = init.lower != 0.0 ? mid / init.lower : 0.0;
    if (ratio >= 0.0) {
      node.value_est.safe = ratio * init.rollout.safe;
      node.value_est.collision = ratio * init.rollout.collision;
    } else {
      node.value_est.safe = mid;
      node.value_est.collision = 0.0;
    }
    node.value_est.refresh_total();
    node.value_est.clamp_total(init.lower, init.upper);
  } else {
    node.value_est.safe = prior->safe;
    node.value_est.collision = prior->collision;
    node.value_est.refresh_total();
    if (ctx.config.value_clipping) {
      const double t = node.value_est.total();
      if (t < init.lower || t > init.upper) {
        // Binding clip: the bound comes from rollout evidence, so decompose
        // the clipped total in rollout proportions (sign-preserving) rather
        // than dumping the whole correction on the safe factor.
        const double clipped = std::clamp(t, init.lower, init.upper);
        const double ratio = init.lower != 0.0 ? clipped / init.lower : 0.0;
        if (ratio >= 0.0) {
          node.value_est.safe = ratio * init.rollout.safe;
          node.value_est.collision = ratio * init.rollout.collision;
        } else {
          node.value_est.safe = clipped;
          node.value_est.collision = 0.0;
        }
        node.value_est.refresh_total();
        node.value_est.clamp_total(init.lower, init.upper);
      }
    }
  }
}

bool expand_leaf(BeliefNode& node, SearchContext& ctx) {
  if (node.depth >= ctx.config.max_depth || node.all_dead || node.expanded) return false;

  const int actions = ctx.model->action_count();
  const int total_k = ctx.scenarios->count();
  const double subset = static_cast<double>(node.scenario_ids.size());

  node.edges.clear();
  node.edges.reserve(actions);
  for (int a = 0; a < actions; ++a) {
    ActionEdge edge;
    edge.action = a;

    struct Member {
      int id;
      StatePtr state;
      char alive;
    };
    std::map<std::uint64_t, std::vector<Member>> groups;
    FactoredReward rho_sum;
    for (std::size_t k = 0; k < node.scenario_ids.size(); ++k) {
      const int sid = node.scenario_ids[k];
      if (!node.alive[k]) {
        groups[kTerminalObservation].push_back({sid, node.states[k], 0});
        continue;
      }
      const Scenario& sc = ctx.scenarios->scenarios[sid];
      StepResult r = step_scenario(sc, node.depth + 1, *node.states[k], a, *ctx.model);
      rho_sum += r.reward;
      const char still_alive = ctx.model->is_terminal(*r.next) ? 0 : 1;
      groups[r.observation].push_back({sid, std::move(r.next), still_alive});
    }
    edge.rho.safe = rho_sum.safe / subset;
    edge.rho.collision = rho_sum.collision / subset;

    for (auto& [obs, members] : groups) {
      auto child = std::make_unique<BeliefNode>();
      child->depth = node.depth + 1;
      child->weight = static_cast<double>(members.size()) / total_k;
      child->scenario_ids.reserve(members.size());
      child->states.reserve(members.size());
      child->alive.reserve(members.size());
      for (Member& m : members) {
        child->scenario_ids.push_back(m.id);
        child->states.push_back(std::move(m.state));
        child->alive.push_back(m.alive);
      }
      // Frame stack: drop the oldest, append the child's representative.
      child->frames = node.frames;
      if (child->frames.size() >= 4) child->frames.erase(child->frames.begin());
      if (StatePtr rep = representative(*child)) child->frames.push_back(std::move(rep));
      init_bounds(*child, ctx);
      ctx.nodes_created.fetch_add(1);
      edge.children.emplace(obs, std::move(child));
    }
    recompute_edge(edge, node, ctx);
    node.edges.push_back(std::move(edge));
  }

  node.prior = ctx.provider->policy_prior(ctx.model->encode_history(node.frames));
  node.expanded = true;
  ctx.nodes_expanded.fetch_add(1);
  return true;
}

void recompute_edge(ActionEdge& edge, const BeliefNode& parent, const SearchContext& ctx) {
  const double subset = static_cast<double>(parent.scenario_ids.size());
  double u = 0.0;
  double l = 0.0;
  double vs = 0.0;
  double vc = 0.0;
  for (const auto& [obs, child] : edge.children) {
    const double frac = static_cast<double>(child->scenario_ids.size()) / subset;
    std::scoped_lock lk(child->mutex);
    u += frac * child->upper;
    l += frac * child->lower;
    vs += frac * child->value_est.safe;
    vc += frac * child->value_est.collision;
  }
  const double g = ctx.gamma;
  edge.upper = edge.rho.total() + g * u;
  edge.lower = edge.rho.total() + g * l;
  edge.value_est.safe = edge.rho.safe + g * vs;
  edge.value_est.collision = edge.rho.collision + g * vc;
  edge.value_est.refresh_total();
  edge.value_est.clamp_total(edge.lower, edge.upper);
}

int select_action_optimistic(const BeliefNode& node) {
  int best = 0;
  for (std::size_t a = 1; a < node.edges.size(); ++a) {
    if (node.edges[a].upper > node.edges[best].upper) best = static_cast<int>(a);
  }
  return best;
}

int select_action_guided(const BeliefNode& node, std::span<const double> prior, double c) {
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < node.edges.size(); ++a) {
    const double bonus =
        c * prior[a] *
        std::sqrt(static_cast<double>(node.visits) / (node.edges[a].visits + 1.0));
    const double score = node.edges[a].upper + bonus;
    if (score > best_score) {
      best_score = score;
      best = static_cast<int>(a);
    }
  }
  return best;
}

BeliefNode* select_observation(ActionEdge& edge) {
  BeliefNode* best = nullptr;
  double best_gap = -std::numeric_limits<double>::infinity();
  for (auto& [obs, child] : edge.children) {
    std::scoped_lock lk(child->mutex);
    const double wg = child->weighted_gap();
    if (wg > best_gap) {
      best_gap = wg;
      best = child.get();
    }
  }
  return best;
}

bool trial_should_terminate(const BeliefNode& node, const SearchContext& ctx) {
  if (node.depth >= ctx.config.max_depth) return true;
  if (node.all_dead) return true;
  return node.weighted_gap() <=
         ctx.config.gap_target * std::pow(ctx.gamma, node.depth);
}

namespace {

void recompute_node(BeliefNode& node, const SearchContext& ctx) {
  if (node.edges.empty()) return;
  double u = node.edges[0].upper;
  double l = node.edges[0].lower;
  int best_v = 0;
  for (std::size_t a = 1; a < node.edges.size(); ++a) {
    u = std::max(u, node.edges[a].upper);
    l = std::max(l, node.edges[a].lower);
    if (node.edges[a].value_est.total() > node.edges[best_v].value_est.total()) {
      best_v = static_cast<int>(a);
    }
  }
  if (node.backed_up) {
    // Monotone refinement: a recomputation that raced with a concurrent
    // backup must not loosen previously published bounds.
    u = std::min(u, node.upper);
    l = std::max(l, node.lower);
  }
  if (l > u) {
    // Regrouped floating-point chains can wedge the retained lower bound a
    // few ulps above the freshly converged upper bound; reconcile at noise
    // scale, fail loudly beyond it.
    if (l - u > 1e-9 * std::max(1.0, std::abs(l))) {
      throw BoundInversionError("backup produced inverted bounds");
    }
    l = u;
  }
  node.upper = u;
  node.lower = l;
  node.value_est = node.edges[best_v].value_est;
  node.value_est.clamp_total(node.lower, node.upper);
  node.backed_up = true;
}

}  // namespace

void backup_path(std::span<const std::pair<BeliefNode*, int>> path, SearchContext& ctx) {
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    BeliefNode* node = it->first;
    const int action = it->second;
    std::scoped_lock lk(node->mutex);
    node->visits += 1;
    if (action >= 0 && node->expanded) {
      node->edges[action].visits += 1;
      recompute_edge(node->edges[action], *node, ctx);
      recompute_node(*node, ctx);
    }
  }
}

// ---------------------------------------------------------------------------

BeliefTreeSearch::BeliefTreeSearch(const DomainModel& model, SearchConfig config,
                                   std::shared_ptr<const HeuristicProvider> provider)
    : model_(model), config_(config), provider_(std::move(provider)) {}

SearchResult BeliefTreeSearch::run(const Belief& belief, std::span<const StatePtr> frames) {
  if (belief.empty()) throw EmptyBeliefError();
  const ScenarioSet set = sample_scenarios(belief, config_.scenario_count, config_.seed);
  scenarios_storage_ = set;
  return run_on(scenarios_storage_, frames);
}

SearchResult BeliefTreeSearch::run_on(const ScenarioSet& set,
                                      std::span<const StatePtr> frames) {
  SearchContext ctx;
  ctx.model = &model_;
  ctx.scenarios = &set;
  ctx.provider = provider_.get();
  ctx.config = config_;
  ctx.gamma = model_.gamma();
  ctx.rollout_horizon = config_.max_depth + config_.rollout_extra;
  gap_log_.clear();

  root_ = std::make_unique<BeliefNode>();
  BeliefNode& root = *root_;
  root.depth = 0;
  root.weight = 1.0;
  for (const Scenario& sc : set.scenarios) {
    root.scenario_ids.push_back(sc.id);
    root.states.push_back(sc.initial_state);
    root.alive.push_back(model_.is_terminal(*sc.initial_state) ? 0 : 1);
  }
  root.frames.assign(frames.begin(), frames.end());
  if (root.frames.empty()) {
    if (StatePtr rep = representative(root)) root.frames.push_back(std::move(rep));
  }
  while (root.frames.size() > 4) root.frames.erase(root.frames.begin());

  if (config_.max_trials == 0 && config_.time_budget_s == 0.0) {
    SearchResult r;
    r.fallback = true;
    r.action = model_.default_rollout_action(*representative(root));
    return r;
  }

  init_bounds(root, ctx);
  if (root.all_dead) {
    SearchResult r;
    r.fallback = true;
    r.action = model_.default_rollout_action(*root.states.front());
    return r;
  }

  expand_leaf(root, ctx);
  {
    std::scoped_lock lk(root.mutex);
    if (root.expanded) {
      // Root bounds reflect the freshly initialized children before any
      // trial runs; a zero-trial budget then falls back to the argmax of
      // the clipped prior values.
      for (ActionEdge& e : root.edges) recompute_edge(e, root, ctx);
      recompute_node(root, ctx);
    }
  }

  const auto start = std::chrono::steady_clock::now();
  auto out_of_time = [&]() {
    if (config_.time_budget_s < 0.0) return false;
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    return elapsed.count() >= config_.time_budget_s;
  };

  std::atomic<long> trials{0};
  std::atomic<int> deepest{0};
  std::atomic<bool> stop{false};

  auto worker = [&]() {
    while (!stop.load()) {
      {
        std::scoped_lock lk(root.mutex);
        if (trial_should_terminate(root, ctx)) break;
      }
      const long t = trials.fetch_add(1);
      if (config_.max_trials >= 0 && t >= config_.max_trials) {
        trials.fetch_sub(1);
        break;
      }
      if (out_of_time()) {
        trials.fetch_sub(1);
        break;
      }
      const bool optimistic =
          config_.optimistic_period >= 1 && ((t + 1) % config_.optimistic_period == 0);
      int deep = 0;
      do_trial(root, optimistic, ctx, &deep);
      int cur = deepest.load();
      while (deep > cur && !deepest.compare_exchange_weak(cur, deep)) {
      }
      if (config_.threads <= 1) {
        std::scoped_lock lk(root.mutex);
        gap_log_.push_back(root.gap());
      }
    }
  };

  if (config_.threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(config_.threads);
    for (int i = 0; i < config_.threads; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }

  return finalize(root, ctx, trials.load(), deepest.load());
}

void BeliefTreeSearch::do_trial(BeliefNode& root, bool optimistic, SearchContext& ctx,
                                int* deepest) {
  std::vector<std::pair<BeliefNode*, int>> path;
  BeliefNode* node = &root;
  while (true) {
    std::unique_lock lk(node->mutex);
    if (trial_should_terminate(*node, ctx)) {
      path.emplace_back(node, -1);
      break;
    }
    if (!node->expanded) expand_leaf(*node, ctx);
    if (node->edges.empty()) {  // depth limit raced in; treat as terminal
      path.emplace_back(node, -1);
      break;
    }
    const int a = optimistic
                      ? select_action_optimistic(*node)
                      : select_action_guided(*node, node->prior, ctx.config.exploration);
    BeliefNode* child = select_observation(node->edges[a]);
    path.emplace_back(node, a);
    lk.unlock();
    node = child;
  }
  *deepest = path.back().first->depth;
  backup_path(path, ctx);
}

SearchResult BeliefTreeSearch::finalize(BeliefNode& root, const SearchContext& ctx,
                                        long trials, int deepest) const {
  SearchResult r;
  r.trials = trials;
  r.nodes_expanded = ctx.nodes_expanded.load();
  r.tree_nodes = ctx.nodes_created.load() + 1;
  r.max_depth_reached = deepest;
  r.gap = root.gap();
  if (!root.expanded || root.edges.empty()) {
    r.fallback = true;
    r.action = model_.default_rollout_action(*representative(root));
    r.value = root.value_est;
    return r;
  }
  r.action_values.reserve(root.edges.size());
  int best = 0;
  for (std::size_t a = 0; a < root.edges.size(); ++a) {
    r.action_values.push_back(root.edges[a].value_est.total());
    if (r.action_values[a] > r.action_values[best]) best = static_cast<int>(a);
  }
  r.action = best;
  r.value = root.edges[best].value_est;
  return r;
}

}  // namespace planlearn
