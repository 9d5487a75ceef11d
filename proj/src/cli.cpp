#include "planlearn/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

#include "planlearn/rng.hpp"
#include "planlearn/toy.hpp"

namespace planlearn {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool parse_bool(const std::string& v) { return v == "1" || v == "true" || v == "yes"; }

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  try {
    if (key == "mode") mode = value;
    else if (key == "domain") domain = value;
    else if (key == "out") out_dir = value;
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "dataset") dataset = value;
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "single_thread") single_thread = parse_bool(value);
    else if (key == "search.k") search.scenario_count = std::stoi(value);
    else if (key == "search.depth") search.max_depth = std::stoi(value);
    else if (key == "search.c") search.exploration = std::stod(value);
    else if (key == "search.eps") search.gap_target = std::stod(value);
    else if (key == "search.trials") search.max_trials = std::stol(value);
    else if (key == "search.time_s") search.time_budget_s = std::stod(value);
    else if (key == "search.optimistic_period") search.optimistic_period = std::stoi(value);
    else if (key == "search.rollout_extra") search.rollout_extra = std::stoi(value);
    else if (key == "search.clipping") search.value_clipping = parse_bool(value);
    else if (key == "search.threads") search.threads = std::stoi(value);
    else if (key == "driving.exo") driving.exo_count = std::stoi(value);
    else if (key == "driving.p_attentive") driving.p_attentive = std::stod(value);
    else if (key == "driving.sigma") driving.noise_sigma = std::stod(value);
    else if (key == "driving.dt") driving.dt = std::stod(value);
    else if (key == "driving.k_nearest") driving.k_nearest = std::stoi(value);
    else if (key == "driving.goal") driving.goal_progress = std::stod(value);
    else if (key == "driving.gamma") driving.gamma = std::stod(value);
    else if (key == "driving.map") driving_map = value;
    else if (key == "learn.trunk") learner.trunk = parse_int_list(value);
    else if (key == "learn.lr") learner.lr = std::stod(value);
    else if (key == "learn.alpha_lr") learner.alpha_lr = std::stod(value);
    else if (key == "learn.batch") learner.batch = std::stoi(value);
    else if (key == "learn.value_scale") learner.value_scale = std::stod(value);
    else if (key == "learn.polyak") learner.polyak = std::stod(value);
    else if (key == "learn.alpha_init") learner.sac_alpha_init = std::stod(value);
    else if (key == "learn.tune_alpha") learner.tune_alpha = parse_bool(value);
    else if (key == "learn.anneal_updates") learner.anneal_updates = std::stol(value);
    else if (key == "learn.buffer") buffer_capacity = std::stol(value);
    else if (key == "actor.particles") actor_particles = std::stoi(value);
    else if (key == "actor.step_cap") step_cap = std::stoi(value);
    else if (key == "actor.explore_temp") explore_temperature = std::stod(value);
    else if (key == "train.budget") data_budget = std::stol(value);
    else if (key == "train.actors") actors = std::stoi(value);
    else if (key == "train.updates_per_tuple") updates_per_tuple = std::stoi(value);
    else if (key == "train.snapshot_period") snapshot_period = std::stoi(value);
    else if (key == "eval.period") eval_period = std::stol(value);
    else if (key == "eval.episodes") eval_episodes = std::stoi(value);
    else if (key == "plan.episodes") plan_episodes = std::stoi(value);
    else if (key == "openssl.epochs") open_ssl_epochs = std::stoi(value);
    else if (key == "oracle.seeds") oracle_seeds = std::stoi(value);
    else throw ConfigError("unknown config key: " + key);
  } catch (const std::invalid_argument&) {
    throw ConfigError("bad value for " + key + ": " + value);
  } catch (const std::out_of_range&) {
    throw ConfigError("value out of range for " + key + ": " + value);
  }
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = true;
      for (char c : line) blank &= std::isspace(static_cast<unsigned char>(c)) != 0;
      if (blank) continue;
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& err) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": " + err.what());
    }
  }
  return cfg;
}

void RunConfig::validate() const {
  static const std::vector<std::string> kModes = {"plan",         "train-ssl",
                                                  "train-rl",     "train-open-ssl",
                                                  "eval",         "oracle-check"};
  if (std::find(kModes.begin(), kModes.end(), mode) == kModes.end()) {
    throw ConfigError("unknown mode: " + mode);
  }
  if (domain != "tiger" && domain != "driving") throw ConfigError("unknown domain: " + domain);
  const DiscountSpec disc{domain == "driving" ? driving.gamma : 0.95, step_cap,
                          search.max_depth};
  if (disc.gamma < 0.0 || disc.gamma >= 1.0) throw ConfigError("gamma must be in [0,1)");
  if (disc.search_depth < 1) throw ConfigError("search.depth must be >= 1");
  if (disc.search_depth > disc.max_horizon) {
    throw ConfigError("search.depth must not exceed the step cap");
  }
  if (search.scenario_count < 1) throw ConfigError("search.k must be >= 1");
  if (search.optimistic_period < 1) throw ConfigError("search.optimistic_period must be >= 1");
  if (mode == "eval") {
    if (checkpoint.empty()) throw ConfigError("eval requires checkpoint=PATH");
    if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint);
  }
  if (!dataset.empty() && !fs::exists(dataset)) {
    throw ConfigError("dataset not found: " + dataset);
  }
  if (driving_map != "builtin" && !fs::exists(driving_map)) {
    throw ConfigError("map not found: " + driving_map);
  }
}

std::unique_ptr<Environment> make_environment(const RunConfig& config) {
  if (config.domain == "tiger") return std::make_unique<TigerEnvironment>();
  driving::LaneGraph graph = config.driving_map == "builtin"
                                 ? driving::LaneGraph::builtin_intersection()
                                 : driving::LaneGraph::load(config.driving_map);
  return std::make_unique<driving::DrivingEnvironment>(std::move(graph), config.driving);
}

std::shared_ptr<const HeuristicProvider> provider_from(const Checkpoint& ckpt) {
  const Mlp* policy = ckpt.find_net("policy");
  if (policy == nullptr) throw ConfigError("checkpoint has no policy net");
  return network_provider(*policy, unpack_value_net(ckpt, "value"),
                          ckpt.scalar_or("value_scale", 100.0));
}

std::shared_ptr<const HeuristicProvider> provider_from_checkpoint(const std::string& path) {
  return provider_from(load_checkpoint_file(path));
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

EvalSummary summarize(const std::vector<EpisodeData>& episodes) {
  EvalSummary s;
  s.episodes = static_cast<int>(episodes.size());
  if (episodes.empty()) return s;
  double sum = 0.0, sum2 = 0.0;
  long steps = 0, near = 0;
  double speed = 0.0;
  for (const EpisodeData& e : episodes) {
    sum += e.cum_reward;
    sum2 += e.cum_reward * e.cum_reward;
    steps += e.steps;
    near += e.near_miss_steps;
    speed += e.speed_sum;
    s.mean_steps += e.steps;
    if (e.cum_collision < 0.0) s.collision_episodes += 1.0;
  }
  const double n = static_cast<double>(episodes.size());
  s.mean_reward = sum / n;
  if (episodes.size() > 1) {
    const double var = std::max(0.0, (sum2 - sum * sum / n) / (n - 1.0));
    s.stderr_reward = std::sqrt(var / n);
  }
  s.near_miss_rate = steps > 0 ? static_cast<double>(near) / steps : 0.0;
  s.avg_speed = steps > 0 ? speed / steps : 0.0;
  s.mean_steps /= n;
  s.collision_episodes /= n;
  return s;
}

ActorConfig actor_config_for(const RunConfig& config, ActorMode mode, std::uint64_t seed) {
  ActorConfig a;
  a.search = config.search;
  a.mode = mode;
  a.belief_particles = config.actor_particles;
  a.step_cap = config.step_cap;
  a.explore_temperature = config.explore_temperature;
  a.seed = seed;
  return a;
}

}  // namespace

EvalSummary evaluate_planner(const RunConfig& config,
                             std::shared_ptr<const HeuristicProvider> provider,
                             int episodes, std::uint64_t seed) {
  std::vector<EpisodeData> data;
  auto env = make_environment(config);
  for (int e = 0; e < episodes; ++e) {
    data.push_back(collect_episode(
        *env, actor_config_for(config, ActorMode::Exploit, mix64(seed, e)), provider));
  }
  return summarize(data);
}

EvalSummary evaluate_learner(const RunConfig& config,
                             std::shared_ptr<const HeuristicProvider> provider,
                             int episodes, std::uint64_t seed) {
  std::vector<EpisodeData> data;
  auto env = make_environment(config);
  const DomainModel& model = env->model();
  for (int e = 0; e < episodes; ++e) {
    const std::uint64_t ep_seed = mix64(seed, e);
    env->reset(ep_seed);
    Belief belief = env->initial_belief(config.actor_particles, mix64(ep_seed, 0xBE11EF));
    std::vector<StatePtr> frames = {env->observable_frame(belief)};
    EpisodeData ep;
    for (int step = 0; step < config.step_cap; ++step) {
      const FeatureVector x = model.encode_history(frames);
      const std::vector<double> p = provider->policy_prior(x);
      const int action =
          static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      const EnvStep es = env->step(action);
      ep.cum_reward += es.reward.total();
      ep.cum_safe += es.reward.safe;
      ep.cum_collision += es.reward.collision;
      ep.steps += 1;
      ep.near_miss_steps += es.near_miss ? 1 : 0;
      ep.speed_sum += es.speed;
      if (es.done) break;
      const ParticleUpdateResult upd =
          particle_bayes_update(belief, action, es.observation, model,
                                config.actor_particles, mix64(ep_seed, 0xF22000 + step));
      belief = env->reanchor(upd.belief);
      frames.push_back(env->observable_frame(belief));
      while (frames.size() > 4) frames.erase(frames.begin());
    }
    data.push_back(std::move(ep));
  }
  return summarize(data);
}

// ---------------------------------------------------------------------------
// Closed-loop training

namespace {

ActorMode rl_mode_for_episode(int episode) {
  // Equal thirds of exploitative, explorative and on-policy actors.
  switch (episode % 3) {
    case 0: return ActorMode::Exploit;
    case 1: return ActorMode::Explore;
    default: return ActorMode::OnPolicy;
  }
}

struct LearnerOps {
  std::function<void(const ReplayBuffer&)> update;
  std::function<std::shared_ptr<const HeuristicProvider>()> provider;
  std::function<Checkpoint()> checkpoint;
};

TrainResult closed_loop(const RunConfig& config, bool rl) {
  auto probe_env = make_environment(config);
  const int actions = probe_env->model().action_count();
  const int features = static_cast<int>(probe_env->model().feature_length());

  LearnerConfig lcfg = config.learner;
  lcfg.init_seed = mix64(config.seed, 0x1EA);
  SslLearner ssl(features, actions, lcfg);
  RlLearner sac(features, actions, lcfg,
                config.domain == "driving" ? config.driving.gamma : 0.95);
  LearnerOps ops;
  if (rl) {
    ops.update = [&sac](const ReplayBuffer& b) { sac.update(b); };
    ops.provider = [&sac]() { return sac.make_provider(); };
    ops.checkpoint = [&sac]() { return sac.checkpoint(); };
  } else {
    ops.update = [&ssl](const ReplayBuffer& b) { ssl.update(b); };
    ops.provider = [&ssl]() { return ssl.make_provider(); };
    ops.checkpoint = [&ssl]() { return ssl.checkpoint(); };
  }

  ReplayBuffer buffer(static_cast<std::size_t>(config.buffer_capacity),
                      mix64(config.seed, 0xB0FF));
  ProviderHub hub(uniform_provider(actions));

  TrainResult result;
  std::atomic<long> updates{0};
  long next_eval = config.eval_period > 0 ? config.eval_period : config.data_budget + 1;

  auto eval_point = [&](long tuples) {
    CurvePoint pt;
    pt.tuples = tuples;
    auto [prov, ver] = hub.acquire();
    pt.planner = evaluate_planner(config, prov, config.eval_episodes,
                                  mix64(config.seed, 0xE7A1 + tuples));
    pt.learner = evaluate_learner(config, prov, config.eval_episodes,
                                  mix64(config.seed, 0xE7A2 + tuples));
    result.curve.push_back(pt);
  };

  const int min_fill = std::max(config.learner.batch, 64);

  if (config.single_thread) {
    auto env = make_environment(config);
    int episode = 0;
    while (buffer.unique_inserts() < config.data_budget) {
      const ActorMode mode = rl ? rl_mode_for_episode(episode) : ActorMode::Exploit;
      auto [prov, ver] = hub.acquire();
      EpisodeActor actor(*env, actor_config_for(config, mode, mix64(config.seed, 0xEA0 + episode)),
                         prov);
      actor.set_episode_id(episode);
      while (!actor.done()) {
        const ExperienceTuple* t = actor.step();
        if (t == nullptr) break;
        buffer.insert(*t);
        if (buffer.size() >= static_cast<std::size_t>(min_fill)) {
          for (int u = 0; u < config.updates_per_tuple; ++u) {
            ops.update(buffer);
            const long n = updates.fetch_add(1) + 1;
            if (n % config.snapshot_period == 0) hub.publish(ops.provider());
          }
        }
      }
      result.episodes.push_back(actor.take_data());
      ++episode;
      if (buffer.unique_inserts() >= next_eval) {
        eval_point(buffer.unique_inserts());
        next_eval += config.eval_period;
      }
    }
  } else {
    std::atomic<bool> stop{false};
    std::atomic<int> episode_counter{0};
    std::mutex episodes_mutex;

    auto actor_loop = [&](int worker) {
      auto env = make_environment(config);
      (void)worker;
      while (!stop.load()) {
        const int episode = episode_counter.fetch_add(1);
        const ActorMode mode = rl ? rl_mode_for_episode(episode) : ActorMode::Exploit;
        auto [prov, ver] = hub.acquire();
        EpisodeActor actor(
            *env, actor_config_for(config, mode, mix64(config.seed, 0xEA0 + episode)), prov);
        actor.set_episode_id(episode);
        while (!actor.done() && !stop.load()) {
          const ExperienceTuple* t = actor.step();
          if (t == nullptr) break;
          buffer.insert(*t);
        }
        {
          std::scoped_lock lk(episodes_mutex);
          result.episodes.push_back(actor.take_data());
        }
        if (buffer.unique_inserts() >= config.data_budget) stop.store(true);
      }
    };
    auto learner_loop = [&]() {
      while (!stop.load()) {
        if (buffer.size() >= static_cast<std::size_t>(min_fill)) {
          ops.update(buffer);
          const long n = updates.fetch_add(1) + 1;
          if (n % config.snapshot_period == 0) hub.publish(ops.provider());
        } else {
          std::this_thread::sleep_for(std::chrono::milliseconds(1));
        }
      }
    };

    std::vector<std::thread> pool;
    for (int i = 0; i < std::max(1, config.actors); ++i) pool.emplace_back(actor_loop, i);
    std::thread learner_thread(learner_loop);
    for (std::thread& th : pool) th.join();
    learner_thread.join();
  }

  hub.publish(ops.provider());
  result.inserted = buffer.unique_inserts();
  eval_point(result.inserted);
  result.ckpt = ops.checkpoint();
  return result;
}

}  // namespace

TrainResult train_closed_ssl(const RunConfig& config) { return closed_loop(config, false); }
TrainResult train_closed_rl(const RunConfig& config) { return closed_loop(config, true); }

TrainResult train_open_ssl(const RunConfig& config) {
  TrainResult result;
  std::vector<ExperienceTuple> dataset;
  if (!config.dataset.empty()) {
    dataset = load_dataset_file(config.dataset);
  } else {
    // Phase 1: a fixed (unguided) planning expert collects the dataset.
    auto env = make_environment(config);
    auto prov = uniform_provider(env->model().action_count());
    int episode = 0;
    while (static_cast<long>(dataset.size()) < config.data_budget) {
      EpisodeData ep = collect_episode(
          *env, actor_config_for(config, ActorMode::Exploit, mix64(config.seed, 0x0DE + episode)),
          prov);
      for (ExperienceTuple& t : ep.tuples) {
        t.episode = episode;
        dataset.push_back(std::move(t));
      }
      ep.tuples.clear();
      result.episodes.push_back(std::move(ep));
      ++episode;
    }
  }

  auto probe_env = make_environment(config);
  LearnerConfig lcfg = config.learner;
  lcfg.init_seed = mix64(config.seed, 0x1EA);
  SslLearner learner(static_cast<int>(probe_env->model().feature_length()),
                     probe_env->model().action_count(), lcfg);
  const std::vector<double> losses =
      open_ssl_train(learner, dataset, config.open_ssl_epochs, mix64(config.seed, 0x0FF));

  CurvePoint pt;
  pt.tuples = static_cast<long>(dataset.size());
  auto prov = learner.make_provider();
  pt.planner = evaluate_planner(config, prov, config.eval_episodes, mix64(config.seed, 0xE7A1));
  pt.learner = evaluate_learner(config, prov, config.eval_episodes, mix64(config.seed, 0xE7A2));
  result.curve.push_back(pt);
  result.inserted = static_cast<long>(dataset.size());
  result.ckpt = learner.checkpoint();

  // Keep the collected dataset available to the caller via episodes; the
  // run() driver persists it.
  if (config.dataset.empty()) {
    result.dataset = std::move(dataset);
  }
  return result;
}

// ---------------------------------------------------------------------------

OracleCheck oracle_equivalence_check(int seeds, bool verbose) {
  OracleCheck out;
  TigerModel model;
  const std::array<double, 2> uniform_prior = {0.5, 0.5};
  const Belief prior = make_exact_belief(model, uniform_prior);

  for (int k : {5, 20}) {
    for (int depth : {2, 3}) {
      for (int s = 0; s < seeds; ++s) {
        const ScenarioSet set = sample_scenarios(prior, k, mix64(0xC0FFEE, s * 1311 + k * 7 + depth));
        for (int prior_kind = 0; prior_kind < 2; ++prior_kind) {
          SearchConfig cfg;
          cfg.scenario_count = k;
          cfg.max_depth = depth;
          cfg.rollout_extra = 8;
          cfg.max_trials = 100000;
          cfg.gap_target = 0.0;
          cfg.optimistic_period = 10;
          std::shared_ptr<const HeuristicProvider> provider;
          if (prior_kind == 0) {
            provider = uniform_provider(3);
          } else {
            Rng rng(mix64(0xAB, s));
            std::vector<double> p = {rng.next_unit() + 0.05, rng.next_unit() + 0.05,
                                     rng.next_unit() + 0.05};
            const double sum = p[0] + p[1] + p[2];
            for (double& v : p) v /= sum;
            provider = fixed_prior_provider(p);
          }
          BeliefTreeSearch search(model, cfg, provider);
          const SearchResult res = search.run_on(set);
          const OracleResult oracle = exhaustive_despot_value(set, model, depth, cfg.rollout_extra);
          ++out.runs;
          const double gap = std::abs(res.value.total() - oracle.value);
          out.max_value_gap = std::max(out.max_value_gap, gap);
          if (res.action != oracle.action) ++out.mismatched_actions;
          if (verbose && (res.action != oracle.action || gap > 1e-9)) {
            std::cout << "mismatch: K=" << k << " D=" << depth << " seed=" << s
                      << " planner=(" << res.action << "," << fmt(res.value.total())
                      << ") oracle=(" << oracle.action << "," << fmt(oracle.value) << ")\n";
          }
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace {

void write_manifest(const RunConfig& c, const std::string& path) {
  std::ofstream os(path);
  os << "mode=" << c.mode << "\n";
  os << "domain=" << c.domain << "\n";
  os << "out=" << c.out_dir << "\n";
  os << "checkpoint=" << c.checkpoint << "\n";
  os << "dataset=" << c.dataset << "\n";
  os << "seed=" << c.seed << "\n";
  os << "single_thread=" << (c.single_thread ? 1 : 0) << "\n";
  os << "search.k=" << c.search.scenario_count << "\n";
  os << "search.depth=" << c.search.max_depth << "\n";
  os << "search.c=" << fmt(c.search.exploration) << "\n";
  os << "search.eps=" << fmt(c.search.gap_target) << "\n";
  os << "search.trials=" << c.search.max_trials << "\n";
  os << "search.time_s=" << fmt(c.search.time_budget_s) << "\n";
  os << "search.optimistic_period=" << c.search.optimistic_period << "\n";
  os << "search.rollout_extra=" << c.search.rollout_extra << "\n";
  os << "search.clipping=" << (c.search.value_clipping ? 1 : 0) << "\n";
  os << "search.threads=" << c.search.threads << "\n";
  os << "driving.exo=" << c.driving.exo_count << "\n";
  os << "driving.p_attentive=" << fmt(c.driving.p_attentive) << "\n";
  os << "driving.sigma=" << fmt(c.driving.noise_sigma) << "\n";
  os << "driving.dt=" << fmt(c.driving.dt) << "\n";
  os << "driving.k_nearest=" << c.driving.k_nearest << "\n";
  os << "driving.goal=" << fmt(c.driving.goal_progress) << "\n";
  os << "driving.gamma=" << fmt(c.driving.gamma) << "\n";
  os << "driving.map=" << c.driving_map << "\n";
  os << "learn.lr=" << fmt(c.learner.lr) << "\n";
  os << "learn.alpha_lr=" << fmt(c.learner.alpha_lr) << "\n";
  os << "learn.batch=" << c.learner.batch << "\n";
  os << "learn.value_scale=" << fmt(c.learner.value_scale) << "\n";
  os << "learn.polyak=" << fmt(c.learner.polyak) << "\n";
  os << "learn.alpha_init=" << fmt(c.learner.sac_alpha_init) << "\n";
  os << "learn.tune_alpha=" << (c.learner.tune_alpha ? 1 : 0) << "\n";
  os << "learn.anneal_updates=" << c.learner.anneal_updates << "\n";
  os << "learn.buffer=" << c.buffer_capacity << "\n";
  os << "actor.particles=" << c.actor_particles << "\n";
  os << "actor.step_cap=" << c.step_cap << "\n";
  os << "actor.explore_temp=" << fmt(c.explore_temperature) << "\n";
  os << "train.budget=" << c.data_budget << "\n";
  os << "train.actors=" << c.actors << "\n";
  os << "train.updates_per_tuple=" << c.updates_per_tuple << "\n";
  os << "train.snapshot_period=" << c.snapshot_period << "\n";
  os << "eval.period=" << c.eval_period << "\n";
  os << "eval.episodes=" << c.eval_episodes << "\n";
  os << "plan.episodes=" << c.plan_episodes << "\n";
  os << "openssl.epochs=" << c.open_ssl_epochs << "\n";
  os << "oracle.seeds=" << c.oracle_seeds << "\n";
}

void write_metrics(const std::vector<EpisodeData>& episodes, const std::string& path) {
  std::ofstream os(path);
  os << "episode,steps,cum_reward,cum_safe,cum_collision,near_miss_rate,avg_speed,"
        "mean_trials,mean_nodes,mean_depth,depleted_updates\n";
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const EpisodeData& e = episodes[i];
    const double steps = std::max(1, e.steps);
    os << i << "," << e.steps << "," << fmt(e.cum_reward) << "," << fmt(e.cum_safe) << ","
       << fmt(e.cum_collision) << "," << fmt(e.near_miss_steps / steps) << ","
       << fmt(e.speed_sum / steps) << "," << fmt(e.trials_sum / steps) << ","
       << fmt(e.nodes_sum / steps) << "," << fmt(e.depth_sum / steps) << ","
       << e.depleted_updates << "\n";
  }
}

void write_trajectories(const std::vector<EpisodeData>& episodes, const std::string& path) {
  std::ofstream os(path);
  os << "episode,step,x,y,heading,speed,action,reward_safe,reward_collision,ttc,near_miss\n";
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    for (const StepLog& l : episodes[e].log) {
      os << e << "," << l.step << "," << fmt(l.x) << "," << fmt(l.y) << "," << fmt(l.heading)
         << "," << fmt(l.speed) << "," << l.action << "," << fmt(l.reward_safe) << ","
         << fmt(l.reward_collision) << "," << fmt(l.ttc) << "," << (l.near_miss ? 1 : 0)
         << "\n";
    }
  }
}

void write_curve(const std::vector<CurvePoint>& curve, const std::string& path) {
  std::ofstream os(path);
  os << "tuples,planner_reward,planner_stderr,planner_near_miss,planner_speed,"
        "learner_reward,learner_stderr,learner_near_miss,learner_speed\n";
  for (const CurvePoint& pt : curve) {
    os << pt.tuples << "," << fmt(pt.planner.mean_reward) << "," << fmt(pt.planner.stderr_reward)
       << "," << fmt(pt.planner.near_miss_rate) << "," << fmt(pt.planner.avg_speed) << ","
       << fmt(pt.learner.mean_reward) << "," << fmt(pt.learner.stderr_reward) << ","
       << fmt(pt.learner.near_miss_rate) << "," << fmt(pt.learner.avg_speed) << "\n";
  }
}

void write_eval(const EvalSummary& planner, const EvalSummary& learner,
                const std::string& path) {
  std::ofstream os(path);
  os << "policy,episodes,mean_reward,stderr,near_miss_rate,avg_speed,mean_steps,"
        "collision_episodes\n";
  auto row = [&os](const char* name, const EvalSummary& s) {
    os << name << "," << s.episodes << "," << fmt(s.mean_reward) << "," << fmt(s.stderr_reward)
       << "," << fmt(s.near_miss_rate) << "," << fmt(s.avg_speed) << "," << fmt(s.mean_steps)
       << "," << fmt(s.collision_episodes) << "\n";
  };
  row("planner", planner);
  row("learner", learner);
}

}  // namespace

int run(const RunConfig& config) {
  config.validate();

  RunConfig cfg = config;
  if (cfg.single_thread) {
    cfg.search.threads = 1;
    cfg.actors = 1;
  }

  fs::create_directories(cfg.out_dir);
  write_manifest(cfg, cfg.out_dir + "/manifest.txt");

  if (cfg.mode == "oracle-check") {
    const OracleCheck check = oracle_equivalence_check(cfg.oracle_seeds, true);
    std::cout << "oracle-check: runs=" << check.runs
              << " mismatches=" << check.mismatched_actions
              << " max_value_gap=" << fmt(check.max_value_gap)
              << (check.passed() ? " PASS" : " FAIL") << "\n";
    return check.passed() ? 0 : 1;
  }

  if (cfg.mode == "plan") {
    std::shared_ptr<const HeuristicProvider> provider;
    if (!cfg.checkpoint.empty()) {
      provider = provider_from_checkpoint(cfg.checkpoint);
    }
    auto env = make_environment(cfg);
    if (provider == nullptr) provider = uniform_provider(env->model().action_count());
    std::vector<EpisodeData> episodes;
    for (int e = 0; e < cfg.plan_episodes; ++e) {
      episodes.push_back(collect_episode(
          *env, actor_config_for(cfg, ActorMode::Exploit, mix64(cfg.seed, 0x97A0 + e)), provider));
    }
    write_metrics(episodes, cfg.out_dir + "/metrics.csv");
    if (cfg.domain == "driving") {
      write_trajectories(episodes, cfg.out_dir + "/trajectory.csv");
    }
    const EvalSummary s = summarize(episodes);
    std::cout << "plan: episodes=" << s.episodes << " mean_reward=" << fmt(s.mean_reward)
              << " near_miss_rate=" << fmt(s.near_miss_rate) << " avg_speed="
              << fmt(s.avg_speed) << "\n";
    return 0;
  }

  if (cfg.mode == "eval") {
    auto provider = provider_from_checkpoint(cfg.checkpoint);
    const EvalSummary planner =
        evaluate_planner(cfg, provider, cfg.eval_episodes, mix64(cfg.seed, 0xE7A1));
    const EvalSummary learner =
        evaluate_learner(cfg, provider, cfg.eval_episodes, mix64(cfg.seed, 0xE7A2));
    write_eval(planner, learner, cfg.out_dir + "/eval.csv");
    std::cout << "eval(planner): episodes=" << planner.episodes << " mean_reward="
              << fmt(planner.mean_reward) << " +- " << fmt(planner.stderr_reward) << "\n";
    std::cout << "eval(learner): episodes=" << learner.episodes << " mean_reward="
              << fmt(learner.mean_reward) << " +- " << fmt(learner.stderr_reward) << "\n";
    return 0;
  }

  // Training modes.
  TrainResult result;
  if (cfg.mode == "train-ssl") {
    result = train_closed_ssl(cfg);
  } else if (cfg.mode == "train-rl") {
    result = train_closed_rl(cfg);
  } else {
    result = train_open_ssl(cfg);
    if (!result.dataset.empty()) {
      save_dataset_file(cfg.out_dir + "/dataset.txt", result.dataset);
    }
  }

  fs::create_directories(cfg.out_dir + "/checkpoints");
  save_checkpoint_file(
      cfg.out_dir + "/checkpoints/step-" + std::to_string(result.inserted) + ".ckpt",
      result.ckpt);
  write_metrics(result.episodes, cfg.out_dir + "/metrics.csv");
  write_curve(result.curve, cfg.out_dir + "/curves.csv");
  if (!result.curve.empty()) {
    const CurvePoint& last = result.curve.back();
    std::cout << cfg.mode << ": tuples=" << result.inserted
              << " planner_reward=" << fmt(last.planner.mean_reward)
              << " learner_reward=" << fmt(last.learner.mean_reward) << "\n";
  }
  return 0;
}

}  // namespace planlearn
