#include <doctest.h>

#include <cmath>
#include <sstream>
#include <thread>

#include "planlearn/learner.hpp"
#include "planlearn/rng.hpp"
#include "planlearn/toy.hpp"
#include "support.hpp"

using namespace planlearn;

TEST_SUITE_BEGIN("learners");

namespace {

ExperienceTuple toy_tuple(int label, double vs, double vc, std::uint64_t salt = 0) {
  ExperienceTuple t;
  t.x.values = {1.0, to_unit(mix64(salt, 1))};
  t.x_next.values = {1.0, to_unit(mix64(salt, 2))};
  t.action = label;
  t.planner_action = label;
  t.planner_value.safe = vs;
  t.planner_value.collision = vc;
  return t;
}

LearnerConfig small_learner() {
  LearnerConfig cfg;
  cfg.trunk = {16, 16};
  cfg.batch = 8;
  cfg.lr = 3e-3;
  cfg.value_scale = 100.0;
  return cfg;
}

}  // namespace

TEST_CASE("replay buffer: FIFO eviction and capacity") {
  ReplayBuffer buf(4, 1);
  for (int i = 0; i < 6; ++i) buf.insert(toy_tuple(i % 3, -i, 0.0, i));
  CHECK(buf.size() == 4);
  CHECK(buf.unique_inserts() == 6);
  const auto all = buf.snapshot();
  for (const ExperienceTuple& t : all) CHECK(t.planner_value.safe <= -2.0);
}

TEST_CASE("replay buffer: batches are without replacement and seed-deterministic") {
  ReplayBuffer a(64, 7);
  ReplayBuffer b(64, 7);
  for (int i = 0; i < 32; ++i) {
    a.insert(toy_tuple(i % 9, -i, 0.0, i));
    b.insert(toy_tuple(i % 9, -i, 0.0, i));
  }
  const auto ba = a.sample(16);
  const auto bb = b.sample(16);
  REQUIRE(ba.size() == bb.size());
  std::vector<double> seen;
  for (std::size_t i = 0; i < ba.size(); ++i) {
    CHECK(ba[i].planner_value.safe == bb[i].planner_value.safe);
    for (double v : seen) CHECK(v != ba[i].planner_value.safe);
    seen.push_back(ba[i].planner_value.safe);
  }
}

TEST_CASE("sampling a too-small buffer raises") {
  ReplayBuffer buf(16, 1);
  buf.insert(toy_tuple(0, -1, 0.0));
  CHECK_THROWS_AS((void)buf.sample(8), BufferTooSmallError);
}

TEST_CASE("dataset files round-trip") {
  std::vector<ExperienceTuple> tuples;
  for (int i = 0; i < 5; ++i) {
    ExperienceTuple t = toy_tuple(i % 3, -1.5 * i, i == 2 ? -100.0 : 0.0, i);
    t.episode = 1;
    t.step = i;
    t.done = i == 4;
    t.smooth_reward = 0.01 * i;
    t.env_reward.safe = -0.5 * i;
    tuples.push_back(t);
  }
  std::stringstream ss;
  save_dataset(ss, tuples);
  const std::vector<ExperienceTuple> back = load_dataset(ss);
  REQUIRE(back.size() == tuples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].step == tuples[i].step);
    CHECK(back[i].done == tuples[i].done);
    CHECK(back[i].planner_value.safe == tuples[i].planner_value.safe);
    CHECK(back[i].smooth_reward == tuples[i].smooth_reward);
    CHECK(back[i].x.values == tuples[i].x.values);
  }
}

TEST_CASE("corrupt datasets are rejected") {
  std::stringstream ss("planlearn-dataset 1 3\n0 0 0 1 1");
  CHECK_THROWS_AS((void)load_dataset(ss), CorruptDatasetError);
  std::stringstream bad("not-a-dataset 1 0\n");
  CHECK_THROWS_AS((void)load_dataset(bad), CorruptDatasetError);
}

TEST_CASE("exploit actors execute the planner action; trajectories are reproducible") {
  TigerEnvironment env;
  ActorConfig cfg;
  cfg.search.scenario_count = 8;
  cfg.search.max_depth = 2;
  cfg.search.max_trials = 30;
  cfg.search.rollout_extra = 4;
  cfg.step_cap = 6;
  cfg.belief_particles = 64;
  cfg.seed = 33;
  const auto provider = uniform_provider(3);

  const EpisodeData a = collect_episode(env, cfg, provider);
  const EpisodeData b = collect_episode(env, cfg, provider);
  REQUIRE(a.tuples.size() == b.tuples.size());
  for (std::size_t i = 0; i < a.tuples.size(); ++i) {
    CHECK(a.tuples[i].action == a.tuples[i].planner_action);
    CHECK(a.tuples[i].action == b.tuples[i].action);
    CHECK(a.tuples[i].env_reward.safe == b.tuples[i].env_reward.safe);
    CHECK(a.tuples[i].step == static_cast<int>(i));
  }
  CHECK(a.cum_reward == b.cum_reward);
}

TEST_CASE("ssl learner fits a one-point dataset") {
  LearnerConfig cfg = small_learner();
  cfg.anneal_updates = 200;
  cfg.tune_alpha = false;
  cfg.sac_alpha_init = 1e-4;
  SslLearner learner(2, 4, cfg);

  ReplayBuffer buf(64, 3);
  for (int i = 0; i < 16; ++i) buf.insert(toy_tuple(2, -35.0, -150.0));
  for (int i = 0; i < 1500; ++i) learner.update(buf);

  const FeatureVector x = toy_tuple(2, -35.0, -150.0).x;
  const std::vector<double> p = softmax(learner.policy().forward(x.values));
  CHECK(std::max_element(p.begin(), p.end()) - p.begin() == 2);

  const ValueNet::Output out = learner.value().forward(x.values);
  CHECK(out.mask_safe > 0.5);
  CHECK(out.mask_col > 0.5);
  CHECK(std::abs(out.v_safe - (-0.35)) <= 1e-3);   // normalized by 100
  CHECK(std::abs(out.v_col - (-1.50)) <= 1e-3);
}

TEST_CASE("ssl update on an empty buffer raises") {
  SslLearner learner(2, 3, small_learner());
  ReplayBuffer buf(8, 1);
  CHECK_THROWS_AS(learner.update(buf), BufferTooSmallError);
}

TEST_CASE("open-loop training: zero epochs change nothing, losses settle") {
  LearnerConfig cfg = small_learner();
  cfg.tune_alpha = false;
  cfg.sac_alpha_init = 1e-3;
  SslLearner learner(2, 3, cfg);
  std::vector<ExperienceTuple> dataset;
  Rng rng(5);
  for (int i = 0; i < 64; ++i) {
    dataset.push_back(toy_tuple(static_cast<int>(rng.next_below(3)), -10.0, 0.0, i));
  }

  const std::vector<double> before = learner.policy().params();
  const std::vector<double> no_epochs = open_ssl_train(learner, dataset, 0, 1);
  CHECK(no_epochs.empty());
  CHECK(learner.policy().params() == before);

  const std::vector<double> losses = open_ssl_train(learner, dataset, 12, 1);
  REQUIRE(losses.size() == 12);
  // Non-increasing within a noise band across epochs.
  for (std::size_t e = 1; e < losses.size(); ++e) {
    CHECK(losses[e] <= losses[e - 1] + 0.05 * std::abs(losses[e - 1]) + 1e-3);
  }
  CHECK(losses.back() < losses.front());
}

TEST_CASE("open-loop training on a single-class dataset collapses the policy") {
  LearnerConfig cfg = small_learner();
  cfg.tune_alpha = false;
  cfg.sac_alpha_init = 0.0;  // alpha = 0: pure imitation
  SslLearner learner(2, 3, cfg);
  std::vector<ExperienceTuple> dataset;
  for (int i = 0; i < 48; ++i) dataset.push_back(toy_tuple(1, -5.0, 0.0, i));
  (void)open_ssl_train(learner, dataset, 40, 2);
  const std::vector<double> p =
      softmax(learner.policy().forward(dataset[0].x.values));
  CHECK(p[1] > 0.95);
}

TEST_CASE("rl learner: target networks equal online networks only at initialization") {
  LearnerConfig cfg = small_learner();
  RlLearner learner(2, 2, cfg, 0.9);
  CHECK(learner.q1().params() == learner.q1_target().params());

  ReplayBuffer buf(64, 9);
  for (int i = 0; i < 32; ++i) {
    ExperienceTuple t = toy_tuple(i % 2, 0.0, 0.0, i);
    t.smooth_reward = i % 2 == 0 ? 1.0 : -1.0;
    buf.insert(t);
  }
  learner.update(buf);
  CHECK(learner.q1().params() != learner.q1_target().params());
}

TEST_CASE("done transitions regress q toward the raw reward") {
  LearnerConfig cfg = small_learner();
  cfg.tune_alpha = false;
  cfg.sac_alpha_init = 1e-3;
  cfg.lr = 1e-2;
  RlLearner learner(2, 2, cfg, 0.9);
  std::vector<ExperienceTuple> batch;
  ExperienceTuple t = toy_tuple(0, 0.0, 0.0, 1);
  t.done = true;
  t.smooth_reward = -3.0;
  for (int i = 0; i < 8; ++i) batch.push_back(t);
  for (int i = 0; i < 800; ++i) learner.update_batch(batch);
  const std::vector<double> q = learner.q1().forward(t.x.values);
  CHECK(std::abs(q[0] - (-3.0)) <= 1e-2);
}

TEST_CASE("rl learner converges to the soft fixed point from off-policy data") {
  // Scripted uniform behavior policy on the deterministic two-state task;
  // the learned policy never matches it, exercising the off-policy path.
  const EnumeratedMdp mdp = make_two_state_mdp();
  const double alpha = 0.1;

  LearnerConfig cfg;
  cfg.trunk = {32, 32};
  cfg.batch = 16;
  cfg.lr = 2e-3;
  cfg.polyak = 0.01;
  cfg.tune_alpha = false;
  cfg.sac_alpha_init = alpha;
  RlLearner learner(2, 2, cfg, mdp.gamma);

  ReplayBuffer buf(512, 11);
  Rng rng(4);
  int s = 0;
  for (int i = 0; i < 256; ++i) {
    const int a = static_cast<int>(rng.next_below(2));
    int s2 = 0;
    double mass = rng.next_unit();
    for (s2 = 0; s2 < 2; ++s2) {
      mass -= mdp.t(s, a, s2);
      if (mass <= 0.0) break;
    }
    s2 = std::min(s2, 1);
    ExperienceTuple t;
    t.x.values = {s == 0 ? 1.0 : 0.0, s == 1 ? 1.0 : 0.0};
    t.x_next.values = {s2 == 0 ? 1.0 : 0.0, s2 == 1 ? 1.0 : 0.0};
    t.action = a;
    t.smooth_reward = mdp.r(s, a);
    t.done = false;
    buf.insert(t);
    s = s2;
  }

  const std::vector<double> q_star = soft_value_iteration(mdp, alpha, 1e-12);
  double err = 1e9;
  for (int i = 0; i < 20000 && err > 5e-3; ++i) {
    learner.update(buf);
    if (i % 500 == 499) {
      err = 0.0;
      for (int st = 0; st < 2; ++st) {
        const std::vector<double> q = learner.q1().forward(
            std::vector<double>{st == 0 ? 1.0 : 0.0, st == 1 ? 1.0 : 0.0});
        for (int a = 0; a < 2; ++a) err = std::max(err, std::abs(q[a] - q_star[st * 2 + a]));
      }
    }
  }
  CHECK(err <= 5e-3);
}

TEST_CASE("provider hub: versions increase and acquire sees the latest snapshot") {
  ProviderHub hub(uniform_provider(3));
  CHECK(hub.version() == 0);
  auto [p0, v0] = hub.acquire();
  CHECK(v0 == 0);
  hub.publish(uniform_provider(3));
  hub.publish(uniform_provider(3));
  auto [p2, v2] = hub.acquire();
  CHECK(v2 == 2);
  CHECK(p2 != p0);
}

TEST_CASE("closed-loop liveness: concurrent inserts stay sampleable, versions rise") {
  ReplayBuffer buf(4096, 5);
  ProviderHub hub(uniform_provider(3));
  std::atomic<bool> stop{false};

  std::thread producer([&]() {
    for (int i = 0; i < 2000; ++i) buf.insert(toy_tuple(i % 3, -1.0 * i, 0.0, i));
    stop.store(true);
  });
  std::thread publisher([&]() {
    for (int i = 0; i < 50; ++i) hub.publish(uniform_provider(3));
  });

  long last_version = -1;
  long sampled = 0;
  while (!stop.load()) {
    const auto [prov, ver] = hub.acquire();
    CHECK(ver >= last_version);
    last_version = ver;
    if (buf.size() >= 32) {
      sampled += static_cast<long>(buf.sample(32).size());
    }
  }
  producer.join();
  publisher.join();
  CHECK(buf.size() == 2000);
  CHECK(buf.sample(64).size() == 64);
  CHECK(sampled >= 0);
}

TEST_SUITE_END();
