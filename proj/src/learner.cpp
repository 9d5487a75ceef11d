#include "planlearn/learner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "planlearn/rng.hpp"

namespace planlearn {

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t sample_seed)
    : capacity_(capacity), sample_seed_(sample_seed) {
  ring_.reserve(std::min<std::size_t>(capacity, 4096));
}

void ReplayBuffer::insert(ExperienceTuple t) {
  std::scoped_lock lk(mutex_);
  if (ring_.size() < capacity_) {
    ring_.push_back(std::move(t));
  } else {
    ring_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
  }
  ++inserts_;
}

std::vector<ExperienceTuple> ReplayBuffer::sample(std::size_t batch) const {
  std::scoped_lock lk(mutex_);
  if (ring_.size() < batch || batch == 0) throw BufferTooSmallError();
  // Partial Fisher-Yates: uniform without replacement, deterministic given
  // the sampling seed.
  std::vector<std::size_t> idx(ring_.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<ExperienceTuple> out;
  out.reserve(batch);
  for (std::size_t k = 0; k < batch; ++k) {
    const std::uint64_t word = mix64(sample_seed_, sample_counter_++);
    const std::size_t remaining = idx.size() - k;
    const std::size_t pick = k + static_cast<std::size_t>(to_unit(word) * remaining) % remaining;
    std::swap(idx[k], idx[pick]);
    out.push_back(ring_[idx[k]]);
  }
  return out;
}

std::size_t ReplayBuffer::size() const {
  std::scoped_lock lk(mutex_);
  return ring_.size();
}

long ReplayBuffer::unique_inserts() const {
  std::scoped_lock lk(mutex_);
  return inserts_;
}

std::vector<ExperienceTuple> ReplayBuffer::snapshot() const {
  std::scoped_lock lk(mutex_);
  return ring_;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_tuple(std::ostream& os, const ExperienceTuple& t) {
  os << t.episode << " " << t.step << " " << (t.done ? 1 : 0) << " " << t.action << " "
     << t.planner_action << " " << fmt(t.env_reward.safe) << " " << fmt(t.env_reward.collision)
     << " " << fmt(t.smooth_reward) << " " << fmt(t.planner_value.safe) << " "
     << fmt(t.planner_value.collision) << " " << t.x.values.size();
  for (double v : t.x.values) os << " " << fmt(v);
  os << " " << t.x_next.values.size();
  for (double v : t.x_next.values) os << " " << fmt(v);
  os << "\n";
}

}  // namespace

void ReplayBuffer::dump(std::ostream& os) const {
  std::scoped_lock lk(mutex_);
  save_dataset(os, ring_);
}

void save_dataset(std::ostream& os, std::span<const ExperienceTuple> tuples) {
  os << "planlearn-dataset 1 " << tuples.size() << "\n";
  for (const ExperienceTuple& t : tuples) write_tuple(os, t);
}

std::vector<ExperienceTuple> load_dataset(std::istream& is) {
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  if (!(is >> magic >> version >> count) || magic != "planlearn-dataset" || version != 1) {
    throw CorruptDatasetError("bad dataset header");
  }
  std::vector<ExperienceTuple> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ExperienceTuple t;
    int done = 0;
    std::size_t nx = 0;
    if (!(is >> t.episode >> t.step >> done >> t.action >> t.planner_action >>
          t.env_reward.safe >> t.env_reward.collision >> t.smooth_reward >>
          t.planner_value.safe >> t.planner_value.collision >> nx)) {
      throw CorruptDatasetError("truncated record " + std::to_string(i));
    }
    t.planner_value.refresh_total();
    t.done = done != 0;
    t.x.values.resize(nx);
    for (double& v : t.x.values) {
      if (!(is >> v)) throw CorruptDatasetError("truncated features");
    }
    if (!(is >> nx)) throw CorruptDatasetError("truncated record");
    t.x_next.values.resize(nx);
    for (double& v : t.x_next.values) {
      if (!(is >> v)) throw CorruptDatasetError("truncated features");
    }
    out.push_back(std::move(t));
  }
  return out;
}

void save_dataset_file(const std::string& path, std::span<const ExperienceTuple> tuples) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  save_dataset(os, tuples);
}

std::vector<ExperienceTuple> load_dataset_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CorruptDatasetError("cannot read " + path);
  return load_dataset(is);
}

// ---------------------------------------------------------------------------

EpisodeActor::EpisodeActor(Environment& env, const ActorConfig& config,
                           std::shared_ptr<const HeuristicProvider> provider)
    : env_(env), config_(config), provider_(std::move(provider)) {
  env_.reset(config_.seed);
  belief_ = env_.initial_belief(config_.belief_particles, mix64(config_.seed, 0xBE11EF));
  frames_ = {env_.observable_frame(belief_)};
}

void EpisodeActor::set_provider(std::shared_ptr<const HeuristicProvider> provider) {
  provider_ = std::move(provider);
}

const ExperienceTuple* EpisodeActor::step() {
  if (done_) return nullptr;
  const DomainModel& model = env_.model();

  SearchConfig search = config_.search;
  search.seed = mix64(config_.seed, 0x5EA000 + step_index_);
  BeliefTreeSearch planner(model, search, provider_);
  const SearchResult res = planner.run(belief_, frames_);

  int action = res.action;
  const std::uint64_t act_word = mix64(config_.seed, 0xAC7000 + step_index_);
  if (config_.mode == ActorMode::Explore && !res.action_values.empty()) {
    std::vector<double> logits(res.action_values.size());
    for (std::size_t a = 0; a < logits.size(); ++a) {
      logits[a] = res.action_values[a] / config_.explore_temperature;
    }
    const std::vector<double> p = softmax(logits);
    double u = to_unit(act_word);
    for (std::size_t a = 0; a < p.size(); ++a) {
      u -= p[a];
      if (u <= 0.0) {
        action = static_cast<int>(a);
        break;
      }
    }
  } else if (config_.mode == ActorMode::OnPolicy) {
    const FeatureVector x = model.encode_history(frames_);
    const std::vector<double> p = provider_->policy_prior(x);
    double u = to_unit(act_word);
    for (std::size_t a = 0; a < p.size(); ++a) {
      u -= p[a];
      if (u <= 0.0) {
        action = static_cast<int>(a);
        break;
      }
    }
  }

  ExperienceTuple t;
  t.x = model.encode_history(frames_);
  t.action = action;
  t.planner_action = res.action;
  t.planner_value = res.value;
  t.episode = episode_id_;
  t.step = step_index_;

  const EnvStep es = env_.step(action);
  t.env_reward = es.reward;
  t.smooth_reward = es.smooth_reward;
  t.done = es.done;

  const ParticleUpdateResult upd = particle_bayes_update(
      belief_, action, es.observation, model, config_.belief_particles,
      mix64(config_.seed, 0xF11000 + step_index_));
  belief_ = env_.reanchor(upd.belief);
  if (upd.depleted) ++data_.depleted_updates;

  frames_.push_back(env_.observable_frame(belief_));
  while (frames_.size() > 4) frames_.erase(frames_.begin());
  t.x_next = model.encode_history(frames_);

  data_.cum_reward += es.reward.total();
  data_.cum_safe += es.reward.safe;
  data_.cum_collision += es.reward.collision;
  data_.steps += 1;
  data_.near_miss_steps += es.near_miss ? 1 : 0;
  data_.speed_sum += es.speed;
  data_.log.push_back(StepLog{step_index_, es.ego_x, es.ego_y, es.ego_heading, es.speed,
                              action, es.reward.safe, es.reward.collision, es.ttc,
                              es.near_miss});
  data_.trials_sum += static_cast<double>(res.trials);
  data_.nodes_sum += static_cast<double>(res.tree_nodes);
  data_.depth_sum += res.max_depth_reached;
  data_.tuples.push_back(std::move(t));

  ++step_index_;
  if (es.done || step_index_ >= config_.step_cap) done_ = true;
  return &data_.tuples.back();
}

EpisodeData EpisodeActor::take_data() { return std::move(data_); }

EpisodeData collect_episode(Environment& env, const ActorConfig& config,
                            std::shared_ptr<const HeuristicProvider> provider) {
  EpisodeActor actor(env, config, std::move(provider));
  while (!actor.done()) actor.step();
  return actor.take_data();
}

// ---------------------------------------------------------------------------

SslLearner::SslLearner(int feature_length, int actions, const LearnerConfig& config)
    : config_(config), actions_(actions) {
  policy_ = make_policy_net(feature_length, actions, config.trunk);
  value_ = ValueNet(feature_length, config.trunk);
  policy_.init_random(mix64(config.init_seed, 1));
  value_.init_random(mix64(config.init_seed, 2));
  opt_policy_.lr = opt_vt_.lr = opt_vm_.lr = opt_vv_.lr = config.lr;
  alpha_ctl_.log_alpha = std::log(config.sac_alpha_init);
  alpha_ctl_.lr = config.tune_alpha ? config.alpha_lr : 0.0;
  alpha_ctl_.target_entropy = config.target_entropy_hi_frac * std::log(actions);
}

void SslLearner::update(const ReplayBuffer& buffer) {
  // Policy and value fit on independent uniform batches.
  const std::vector<ExperienceTuple> pb = buffer.sample(config_.batch);
  const std::vector<ExperienceTuple> vb = buffer.sample(config_.batch);
  policy_step(pb);
  value_step(vb);
  finish_update(pb);
}

void SslLearner::update_batch(std::span<const ExperienceTuple> batch) {
  policy_step(batch);
  value_step(batch);
  finish_update(batch);
}

void SslLearner::policy_step(std::span<const ExperienceTuple> batch) {
  // Entropy target anneals linearly from the scattered to the concentrated
  // regime over the first part of training.
  const double hi = config_.target_entropy_hi_frac * std::log(actions_);
  const double lo = config_.target_entropy_lo_frac * std::log(actions_);
  const double t = config_.anneal_updates > 0
                       ? std::min(1.0, static_cast<double>(updates_) / config_.anneal_updates)
                       : 1.0;
  alpha_ctl_.target_entropy = hi + (lo - hi) * t;

  std::vector<FeatureVector> xs;
  std::vector<int> labels;
  for (const ExperienceTuple& e : batch) {
    xs.push_back(e.x);
    labels.push_back(e.planner_action);
  }
  std::vector<double> pgrad;
  last_policy_loss_ = ssl_policy_loss(policy_, xs, labels, alpha_ctl_.alpha(), &pgrad);
  adam_step(policy_.params(), pgrad, opt_policy_);
}

void SslLearner::value_step(std::span<const ExperienceTuple> batch) {
  std::vector<FeatureVector> xs;
  std::vector<double> vs, vc;
  for (const ExperienceTuple& e : batch) {
    xs.push_back(e.x);
    vs.push_back(e.planner_value.safe / config_.value_scale);
    vc.push_back(e.planner_value.collision / config_.value_scale);
  }
  ValueNet::Grad vgrad = value_.zero_grad();
  const ValueLoss vloss = ssl_value_loss(value_, xs, vs, vc, &vgrad);
  last_value_loss_ = vloss.total();
  adam_step(value_.trunk().params(), vgrad.trunk, opt_vt_);
  adam_step(value_.mask_head().params(), vgrad.mask, opt_vm_);
  adam_step(value_.value_head().params(), vgrad.value, opt_vv_);
}

void SslLearner::finish_update(std::span<const ExperienceTuple> batch) {
  double mean_entropy = 0.0;
  for (const ExperienceTuple& e : batch) {
    mean_entropy += entropy(softmax(policy_.forward(e.x.values)));
  }
  alpha_ctl_.update(mean_entropy / batch.size());
  ++updates_;
}

std::shared_ptr<const HeuristicProvider> SslLearner::make_provider() const {
  return network_provider(policy_, value_, config_.value_scale);
}

Checkpoint SslLearner::checkpoint() const {
  Checkpoint c = pack_value_net(value_, "value");
  c.nets.emplace_back("policy", policy_);
  c.scalars.emplace_back("value_scale", config_.value_scale);
  c.scalars.emplace_back("log_alpha", alpha_ctl_.log_alpha);
  c.scalars.emplace_back("updates", static_cast<double>(updates_));
  return c;
}

void SslLearner::restore(const Checkpoint& ckpt) {
  const Mlp* p = ckpt.find_net("policy");
  if (p == nullptr) throw std::runtime_error("checkpoint: missing policy net");
  policy_ = *p;
  value_ = unpack_value_net(ckpt, "value");
  alpha_ctl_.log_alpha = ckpt.scalar_or("log_alpha", alpha_ctl_.log_alpha);
  updates_ = static_cast<long>(ckpt.scalar_or("updates", 0.0));
}

// ---------------------------------------------------------------------------

RlLearner::RlLearner(int feature_length, int actions, const LearnerConfig& config,
                     double gamma)
    : config_(config), actions_(actions), gamma_(gamma) {
  policy_ = make_policy_net(feature_length, actions, config.trunk);
  q1_ = make_q_net(feature_length, actions, config.trunk);
  q2_ = make_q_net(feature_length, actions, config.trunk);
  policy_.init_random(mix64(config.init_seed, 11));
  q1_.init_random(mix64(config.init_seed, 12));
  q2_.init_random(mix64(config.init_seed, 13));
  q1_target_ = q1_;
  q2_target_ = q2_;
  value_ = ValueNet(feature_length, config.trunk);
  value_.init_random(mix64(config.init_seed, 14));
  opt_policy_.lr = opt_q1_.lr = opt_q2_.lr = config.lr;
  opt_vt_.lr = opt_vm_.lr = opt_vv_.lr = config.lr;
  alpha_ctl_.log_alpha = std::log(config.sac_alpha_init);
  alpha_ctl_.lr = config.tune_alpha ? config.alpha_lr : 0.0;
  alpha_ctl_.target_entropy = config.target_entropy_hi_frac * std::log(actions);
}

void RlLearner::update(const ReplayBuffer& buffer) {
  update_batch(buffer.sample(config_.batch));
}

void RlLearner::update_batch(std::span<const ExperienceTuple> batch) {
  const double alpha = alpha_ctl_.alpha();

  std::vector<FeatureVector> xs;
  std::vector<int> acts;
  std::vector<double> targets;
  xs.reserve(batch.size());
  for (const ExperienceTuple& e : batch) {
    xs.push_back(e.x);
    acts.push_back(e.action);
    targets.push_back(soft_q_target(policy_, q1_target_, q2_target_, e.smooth_reward,
                                    e.x_next, e.done, alpha, gamma_));
  }

  std::vector<double> g1, g2;
  sac_q_loss(q1_, xs, acts, targets, &g1);
  sac_q_loss(q2_, xs, acts, targets, &g2);
  adam_step(q1_.params(), g1, opt_q1_);
  adam_step(q2_.params(), g2, opt_q2_);

  // Policy step against the elementwise minimum of the online critics.
  std::vector<double> qmin(batch.size() * actions_);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::vector<double> a1 = q1_.forward(xs[i].values);
    const std::vector<double> a2 = q2_.forward(xs[i].values);
    for (int a = 0; a < actions_; ++a) {
      qmin[i * actions_ + a] = std::min(a1[a], a2[a]);
    }
  }
  std::vector<double> pgrad;
  sac_policy_loss(policy_, xs, qmin, alpha, &pgrad);
  adam_step(policy_.params(), pgrad, opt_policy_);

  // Value net: same self-supervised fit as the SSL learner, so the planner
  // keeps a usable leaf-value prior.
  std::vector<double> vs, vc;
  for (const ExperienceTuple& e : batch) {
    vs.push_back(e.planner_value.safe / config_.value_scale);
    vc.push_back(e.planner_value.collision / config_.value_scale);
  }
  ValueNet::Grad vgrad = value_.zero_grad();
  ssl_value_loss(value_, xs, vs, vc, &vgrad);
  adam_step(value_.trunk().params(), vgrad.trunk, opt_vt_);
  adam_step(value_.mask_head().params(), vgrad.mask, opt_vm_);
  adam_step(value_.value_head().params(), vgrad.value, opt_vv_);

  double mean_entropy = 0.0;
  for (const FeatureVector& x : xs) {
    mean_entropy += entropy(softmax(policy_.forward(x.values)));
  }
  alpha_ctl_.update(mean_entropy / xs.size());

  polyak_update(q1_target_.params(), q1_.params(), config_.polyak);
  polyak_update(q2_target_.params(), q2_.params(), config_.polyak);
  ++updates_;
}

std::shared_ptr<const HeuristicProvider> RlLearner::make_provider() const {
  return network_provider(policy_, value_, config_.value_scale);
}

Checkpoint RlLearner::checkpoint() const {
  Checkpoint c = pack_value_net(value_, "value");
  c.nets.emplace_back("policy", policy_);
  c.nets.emplace_back("q1", q1_);
  c.nets.emplace_back("q2", q2_);
  c.scalars.emplace_back("value_scale", config_.value_scale);
  c.scalars.emplace_back("log_alpha", alpha_ctl_.log_alpha);
  return c;
}

// ---------------------------------------------------------------------------

std::vector<double> open_ssl_train(SslLearner& learner,
                                   std::span<const ExperienceTuple> dataset, int epochs,
                                   std::uint64_t shuffle_seed) {
  if (dataset.empty()) throw CorruptDatasetError("empty dataset");
  std::vector<double> epoch_losses;
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batch = 32;
  for (int e = 0; e < epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j =
          static_cast<std::size_t>(to_unit(mix64(shuffle_seed, e * 1000003ULL + i)) * i) % i;
      std::swap(order[i - 1], order[j]);
    }
    double loss_sum = 0.0;
    long steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<ExperienceTuple> chunk;
      chunk.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) chunk.push_back(dataset[order[i]]);
      learner.update_batch(chunk);
      loss_sum += learner.last_policy_loss() + learner.last_value_loss();
      ++steps;
    }
    epoch_losses.push_back(steps > 0 ? loss_sum / steps : 0.0);
  }
  return epoch_losses;
}

// ---------------------------------------------------------------------------

ProviderHub::ProviderHub(std::shared_ptr<const HeuristicProvider> initial)
    : current_(std::move(initial)) {}

void ProviderHub::publish(std::shared_ptr<const HeuristicProvider> provider) {
  std::scoped_lock lk(mutex_);
  current_ = std::move(provider);
  ++version_;
}

std::pair<std::shared_ptr<const HeuristicProvider>, long> ProviderHub::acquire() const {
  std::scoped_lock lk(mutex_);
  return {current_, version_};
}

long ProviderHub::version() const {
  std::scoped_lock lk(mutex_);
  return version_;
}

}  // namespace planlearn
