#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "planlearn/core.hpp"
#include "planlearn/heuristics.hpp"
#include "planlearn/scenario.hpp"

namespace planlearn {

// Factored value estimate. The total is stored rather than re-derived so
// that clamping it into a bound interval is exact; the factors track it to
// within one rounding (clamps shift the safe factor, keeping collision
// magnitudes rollout-backed).
struct FactoredValue {
  double safe = 0.0;
  double collision = 0.0;

  double total() const { return total_; }
  void refresh_total() { total_ = safe + collision; }
  void clamp_total(double lo, double hi) {
    if (total_ > hi) {
      safe += hi - total_;
      total_ = hi;
    } else if (total_ < lo) {
      safe += lo - total_;
      total_ = lo;
    }
  }

 private:
  double total_ = 0.0;
};

struct SearchConfig {
  int scenario_count = 100;    // K
  int max_depth = 5;           // D
  double exploration = 1.0;    // c in the prior-weighted selection rule
  double gap_target = 0.0;     // stop when u(b0) - l(b0) <= this
  long max_trials = -1;        // -1: unlimited; 0: root initialization only
  double time_budget_s = -1.0; // -1: unlimited; checked between trials
  int optimistic_period = 10;  // every n-th trial uses pure upper-bound selection
  int rollout_extra = 10;      // rollouts run to absolute depth max_depth + rollout_extra
  bool value_clipping = true;
  int threads = 1;
  std::uint64_t seed = 1;      // scenario sampling seed for the belief entry point
};

struct SearchResult {
  int action = -1;
  FactoredValue value;
  double gap = 0.0;
  long trials = 0;
  long nodes_expanded = 0;
  long tree_nodes = 0;
  int max_depth_reached = 0;
  std::vector<double> action_values;  // root v-hat totals per action
  bool fallback = false;              // no usable budget / terminal root
};

// Observation key reserved for scenarios that have already terminated; they
// flow to this child so that children always partition the parent subset.
inline constexpr std::uint64_t kTerminalObservation = ~0ULL;

struct BeliefNode;

struct ActionEdge {
  int action = 0;
  FactoredReward rho;  // scenario-average immediate reward
  double upper = 0.0;
  double lower = 0.0;
  FactoredValue value_est;
  long visits = 0;
  std::map<std::uint64_t, std::unique_ptr<BeliefNode>> children;

  ActionEdge();
  ActionEdge(ActionEdge&&) noexcept;
  ActionEdge& operator=(ActionEdge&&) noexcept;
  ~ActionEdge();
};

struct BeliefNode {
  int depth = 0;
  double weight = 0.0;  // |Phi_b| / K
  std::vector<int> scenario_ids;
  std::vector<StatePtr> states;  // per scenario, current
  std::vector<char> alive;
  bool expanded = false;
  bool all_dead = false;
  double upper = 0.0;
  double lower = 0.0;
  FactoredValue value_est;
  long visits = 0;
  std::vector<ActionEdge> edges;
  std::vector<double> prior;       // cached policy prior (filled at expansion)
  std::vector<StatePtr> frames;    // history frames for encoding, oldest first
  FactoredValue rollout_value;     // factored decomposition of the initial lower bound
  double init_upper = 0.0;
  double init_lower = 0.0;
  bool backed_up = false;
  mutable std::mutex mutex;

  double gap() const { return upper - lower; }
  double weighted_gap() const { return weight * (upper - lower); }
};

// ---------------------------------------------------------------------------
// Search internals, exposed for unit tests and for the exhaustive oracle.

struct SearchContext {
  const DomainModel* model = nullptr;
  const ScenarioSet* scenarios = nullptr;
  const HeuristicProvider* provider = nullptr;
  SearchConfig config;
  double gamma = 0.95;
  int rollout_horizon = 0;  // absolute depth where rollouts stop
  std::atomic<long> nodes_created{0};
  std::atomic<long> nodes_expanded{0};
};

// Determinized rollout of the domain default policy from `state` (sitting at
// tree depth `from_depth`) until the absolute horizon or a terminal state.
// Returns the discounted factored return. Shared with the exhaustive oracle
// so that leaf values match the planner's exactly.
FactoredValue scenario_rollout(const Scenario& scenario, const StatePtr& state,
                               int from_depth, int horizon, const DomainModel& model);

// Scenario-subset average of the rollout lower bound and heuristic upper
// bound; terminated scenarios contribute zero.
struct BoundInit {
  FactoredValue rollout;  // factored lower-bound estimate
  double lower = 0.0;
  double upper = 0.0;
};
BoundInit init_estimates(const ScenarioSet& set, std::span<const int> ids,
                         std::span<const StatePtr> states, std::span<const char> alive,
                         int depth, int horizon, const DomainModel& model);

// Bound/prior initialization for a fresh node. At the depth limit both
// bounds collapse to the rollout estimate (nothing below the node will ever
// be searched). Otherwise the learned prior is clipped into [l0, u0] unless
// value clipping is disabled. Throws BoundInversionError when u0 < l0.
void init_bounds(BeliefNode& node, SearchContext& ctx);

// Expands a leaf: steps every live scenario under every action, groups the
// outcomes by observation into child nodes, initializes them, and computes
// edge-level bounds. Returns false (node frozen at its initialization
// values) at the depth limit.
bool expand_leaf(BeliefNode& node, SearchContext& ctx);

int select_action_optimistic(const BeliefNode& node);
int select_action_guided(const BeliefNode& node, std::span<const double> prior, double c);
BeliefNode* select_observation(ActionEdge& edge);

bool trial_should_terminate(const BeliefNode& node, const SearchContext& ctx);

// Bottom-up Bellman recomputation along a trial path of (node, taken-action)
// pairs; the final entry carries action -1. Also bumps visit counts.
void backup_path(std::span<const std::pair<BeliefNode*, int>> path, SearchContext& ctx);

// Recomputes one edge from its children (callers hold the parent lock).
void recompute_edge(ActionEdge& edge, const BeliefNode& parent, const SearchContext& ctx);

// ---------------------------------------------------------------------------

class BeliefTreeSearch {
 public:
  BeliefTreeSearch(const DomainModel& model, SearchConfig config,
                   std::shared_ptr<const HeuristicProvider> provider);

  // Samples scenarios from the belief with config.seed and runs the search.
  SearchResult run(const Belief& belief, std::span<const StatePtr> frames = {});

  // Runs on a caller-provided scenario set (tests, oracle pairings).
  SearchResult run_on(const ScenarioSet& scenarios, std::span<const StatePtr> frames = {});

  // Root gap after each completed trial, for convergence diagnostics.
  const std::vector<double>& gap_log() const { return gap_log_; }
  const BeliefNode* root() const { return root_.get(); }

 private:
  void do_trial(BeliefNode& root, bool optimistic, SearchContext& ctx, int* deepest);
  SearchResult finalize(BeliefNode& root, const SearchContext& ctx, long trials,
                        int deepest) const;

  const DomainModel& model_;
  SearchConfig config_;
  std::shared_ptr<const HeuristicProvider> provider_;
  ScenarioSet scenarios_storage_;
  std::unique_ptr<BeliefNode> root_;
  std::vector<double> gap_log_;
};

}  // namespace planlearn
