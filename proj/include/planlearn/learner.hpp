#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "planlearn/core.hpp"
#include "planlearn/heuristics.hpp"
#include "planlearn/net.hpp"
#include "planlearn/search.hpp"

namespace planlearn {

struct BufferTooSmallError : std::runtime_error {
  BufferTooSmallError() : std::runtime_error("replay buffer smaller than batch") {}
};
struct CorruptDatasetError : std::runtime_error {
  explicit CorruptDatasetError(const std::string& what) : std::runtime_error(what) {}
};

// One planner experience: encoded history, executed action, environment
// reward (raw factored + the shaped reinforcement channel), the planner's
// optimal action and factored root value.
struct ExperienceTuple {
  FeatureVector x;
  FeatureVector x_next;
  int action = 0;
  int planner_action = 0;
  FactoredReward env_reward;
  double smooth_reward = 0.0;
  FactoredValue planner_value;
  bool done = false;
  int episode = 0;
  int step = 0;
};

// Fixed-capacity FIFO ring with uniform without-replacement batch sampling.
// Thread safe: actors insert, the learner samples.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity, std::uint64_t sample_seed = 1);

  void insert(ExperienceTuple t);
  std::vector<ExperienceTuple> sample(std::size_t batch) const;
  std::size_t size() const;
  long unique_inserts() const;

  void dump(std::ostream& os) const;
  std::vector<ExperienceTuple> snapshot() const;

 private:
  mutable std::mutex mutex_;
  std::size_t capacity_;
  std::vector<ExperienceTuple> ring_;
  std::size_t head_ = 0;
  long inserts_ = 0;
  mutable std::uint64_t sample_seed_;
  mutable std::uint64_t sample_counter_ = 0;
};

void save_dataset(std::ostream& os, std::span<const ExperienceTuple> tuples);
std::vector<ExperienceTuple> load_dataset(std::istream& is);
void save_dataset_file(const std::string& path, std::span<const ExperienceTuple> tuples);
std::vector<ExperienceTuple> load_dataset_file(const std::string& path);

// ---------------------------------------------------------------------------
// Actors

enum class ActorMode {
  Exploit,   // execute the planner's optimal action
  Explore,   // sample from softmax of root action values
  OnPolicy,  // sample from the learner policy
};

struct ActorConfig {
  SearchConfig search;
  ActorMode mode = ActorMode::Exploit;
  int belief_particles = 120;
  int step_cap = 60;
  double explore_temperature = 1.0;
  std::uint64_t seed = 1;
};

struct StepLog {
  int step = 0;
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  int action = 0;
  double reward_safe = 0.0;
  double reward_collision = 0.0;
  double ttc = 0.0;
  bool near_miss = false;
};

struct EpisodeData {
  std::vector<ExperienceTuple> tuples;
  std::vector<StepLog> log;
  double cum_reward = 0.0;
  double cum_safe = 0.0;
  double cum_collision = 0.0;
  int steps = 0;
  int near_miss_steps = 0;
  double speed_sum = 0.0;
  double trials_sum = 0.0;
  double nodes_sum = 0.0;
  double depth_sum = 0.0;
  int depleted_updates = 0;
  bool partial = false;
};

// Stepwise actor: one environment step per call (search, act, filter,
// record). Lets the single-threaded closed-loop mode interleave exactly.
// On-policy actors sample from the provider's policy prior, which is the
// learner policy when the provider wraps network snapshots.
class EpisodeActor {
 public:
  EpisodeActor(Environment& env, const ActorConfig& config,
               std::shared_ptr<const HeuristicProvider> provider);

  bool done() const { return done_; }
  const ExperienceTuple* step();  // recorded tuple, nullptr once done

  EpisodeData take_data();
  void set_provider(std::shared_ptr<const HeuristicProvider> provider);
  void set_episode_id(int id) { episode_id_ = id; }

 private:
  Environment& env_;
  ActorConfig config_;
  std::shared_ptr<const HeuristicProvider> provider_;
  Belief belief_;
  std::vector<StatePtr> frames_;
  EpisodeData data_;
  bool done_ = false;
  int step_index_ = 0;
  int episode_id_ = 0;
};

// Runs a full episode and returns its trajectory and metrics.
EpisodeData collect_episode(Environment& env, const ActorConfig& config,
                            std::shared_ptr<const HeuristicProvider> provider);

// ---------------------------------------------------------------------------
// Learners

struct LearnerConfig {
  std::vector<int> trunk = {128, 128};
  double lr = 3e-4;
  double alpha_lr = 1e-3;
  int batch = 32;
  double value_scale = 100.0;  // labels divided by this before regression
  double polyak = 0.005;
  double sac_alpha_init = 0.2;
  bool tune_alpha = true;
  // Entropy target anneals linearly from hi to lo over anneal_updates.
  double target_entropy_hi_frac = 0.98;
  double target_entropy_lo_frac = 0.65;
  long anneal_updates = 5000;
  std::uint64_t init_seed = 7;
};

// Self-supervised learner: fits the policy to the planner's optimal actions
// (entropy-regularized cross-entropy) and the factored value net to the
// planner's root values (mask + gated regression).
class SslLearner {
 public:
  SslLearner(int feature_length, int actions, const LearnerConfig& config);

  void update(const ReplayBuffer& buffer);       // one policy + one value step
  void update_batch(std::span<const ExperienceTuple> batch);

  std::shared_ptr<const HeuristicProvider> make_provider() const;
  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ckpt);

  const Mlp& policy() const { return policy_; }
  const ValueNet& value() const { return value_; }
  double alpha() const { return alpha_ctl_.alpha(); }
  double last_policy_loss() const { return last_policy_loss_; }
  double last_value_loss() const { return last_value_loss_; }
  long updates() const { return updates_; }

 private:
  void policy_step(std::span<const ExperienceTuple> batch);
  void value_step(std::span<const ExperienceTuple> batch);
  void finish_update(std::span<const ExperienceTuple> batch);

  LearnerConfig config_;
  int actions_;
  Mlp policy_;
  ValueNet value_;
  AdamState opt_policy_, opt_vt_, opt_vm_, opt_vv_;
  EntropyController alpha_ctl_;
  long updates_ = 0;
  double last_policy_loss_ = 0.0;
  double last_value_loss_ = 0.0;
};

// Soft actor-critic learner (discrete actions, twin Q targets). Trains the
// policy from the smooth environment reward channel; the planner's value
// net is trained exactly as in the self-supervised learner.
class RlLearner {
 public:
  RlLearner(int feature_length, int actions, const LearnerConfig& config, double gamma);

  void update(const ReplayBuffer& buffer);
  void update_batch(std::span<const ExperienceTuple> batch);

  std::shared_ptr<const HeuristicProvider> make_provider() const;
  Checkpoint checkpoint() const;

  const Mlp& policy() const { return policy_; }
  const Mlp& q1() const { return q1_; }
  const Mlp& q2() const { return q2_; }
  const Mlp& q1_target() const { return q1_target_; }
  const ValueNet& value() const { return value_; }
  double alpha() const { return alpha_ctl_.alpha(); }
  long updates() const { return updates_; }

 private:
  LearnerConfig config_;
  int actions_;
  double gamma_;
  Mlp policy_, q1_, q2_, q1_target_, q2_target_;
  ValueNet value_;
  AdamState opt_policy_, opt_q1_, opt_q2_, opt_vt_, opt_vm_, opt_vv_;
  EntropyController alpha_ctl_;
  long updates_ = 0;
};

// Two-phase offline pipeline: epochs of shuffled self-supervised updates
// over a frozen dataset. Returns the mean combined loss per epoch.
std::vector<double> open_ssl_train(SslLearner& learner,
                                   std::span<const ExperienceTuple> dataset, int epochs,
                                   std::uint64_t shuffle_seed);

// ---------------------------------------------------------------------------

// Versioned provider snapshots shared between the learner and the actors.
class ProviderHub {
 public:
  explicit ProviderHub(std::shared_ptr<const HeuristicProvider> initial);

  void publish(std::shared_ptr<const HeuristicProvider> provider);
  std::pair<std::shared_ptr<const HeuristicProvider>, long> acquire() const;
  long version() const;

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const HeuristicProvider> current_;
  long version_ = 0;
};

}  // namespace planlearn
