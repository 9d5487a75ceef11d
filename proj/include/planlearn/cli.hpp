#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "planlearn/driving.hpp"
#include "planlearn/learner.hpp"
#include "planlearn/search.hpp"

namespace planlearn {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Flat key=value run configuration; every key can also be set on the command
// line with --set key=value. The full key list is in the README.
struct RunConfig {
  std::string mode = "plan";
  std::string domain = "tiger";
  std::string out_dir = "out";
  std::string checkpoint;  // eval / guided plan input
  std::string dataset;     // optional precollected dataset for train-open-ssl
  std::uint64_t seed = 1;
  bool single_thread = false;
  std::string driving_map = "builtin";

  SearchConfig search;
  driving::DrivingConfig driving;
  LearnerConfig learner;
  long buffer_capacity = 100000;

  int actor_particles = 120;
  int step_cap = 60;
  double explore_temperature = 1.0;
  long data_budget = 10000;
  int actors = 3;
  int updates_per_tuple = 1;
  int snapshot_period = 50;  // learner updates between provider publications
  long eval_period = 2000;   // inserted tuples between learning-curve points
  int eval_episodes = 20;
  int plan_episodes = 20;
  int open_ssl_epochs = 10;
  int oracle_seeds = 50;

  void set(const std::string& key, const std::string& value);
  void validate() const;

  static RunConfig from_file(const std::string& path);
};

std::unique_ptr<Environment> make_environment(const RunConfig& config);
std::shared_ptr<const HeuristicProvider> provider_from(const Checkpoint& ckpt);
std::shared_ptr<const HeuristicProvider> provider_from_checkpoint(const std::string& path);

struct EvalSummary {
  int episodes = 0;
  double mean_reward = 0.0;
  double stderr_reward = 0.0;
  double near_miss_rate = 0.0;
  double avg_speed = 0.0;
  double mean_steps = 0.0;
  double collision_episodes = 0.0;
};

// Guided-planner evaluation: fresh episodes under the given provider.
EvalSummary evaluate_planner(const RunConfig& config,
                             std::shared_ptr<const HeuristicProvider> provider,
                             int episodes, std::uint64_t seed);

// Learner-policy-alone evaluation: argmax of the provider's policy prior,
// no tree search.
EvalSummary evaluate_learner(const RunConfig& config,
                             std::shared_ptr<const HeuristicProvider> provider,
                             int episodes, std::uint64_t seed);

struct CurvePoint {
  long tuples = 0;
  EvalSummary planner;
  EvalSummary learner;
};

struct TrainResult {
  Checkpoint ckpt;
  long inserted = 0;
  std::vector<CurvePoint> curve;
  std::vector<EpisodeData> episodes;
  std::vector<ExperienceTuple> dataset;  // open-loop phase-1 output
};

TrainResult train_closed_ssl(const RunConfig& config);
TrainResult train_closed_rl(const RunConfig& config);
TrainResult train_open_ssl(const RunConfig& config);

// Planner-vs-exhaustive-oracle agreement sweep on the two-door toy domain.
struct OracleCheck {
  int runs = 0;
  int mismatched_actions = 0;
  double max_value_gap = 0.0;
  bool passed() const { return mismatched_actions == 0 && max_value_gap <= 1e-9; }
};
OracleCheck oracle_equivalence_check(int seeds, bool verbose);

// Mode dispatch; writes metrics.csv / curves.csv / checkpoints / manifest.txt
// under out_dir. Returns a process exit status.
int run(const RunConfig& config);

}  // namespace planlearn
