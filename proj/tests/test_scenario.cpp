#include <doctest.h>

#include <array>
#include <cmath>

#include "planlearn/rng.hpp"
#include "planlearn/scenario.hpp"
#include "planlearn/toy.hpp"
#include "support.hpp"

using namespace planlearn;

TEST_SUITE_BEGIN("scenarios");

TEST_CASE("point-mass belief gives every scenario the same start state") {
  auto s0 = std::make_shared<test::ChainState>(3);
  const ScenarioSet set = sample_scenarios(test::point_belief(s0), 16, 42);
  REQUIRE(set.count() == 16);
  for (const Scenario& sc : set.scenarios) CHECK(sc.initial_state.get() == s0.get());
}

TEST_CASE("start-state shares follow the belief within binomial bounds") {
  TigerModel model;
  Belief b = make_exact_belief(model, std::array<double, 2>{0.5, 0.5});
  const int k = 10000;
  const ScenarioSet set = sample_scenarios(b, k, 7);
  int left = 0;
  for (const Scenario& sc : set.scenarios) {
    if (model.state_index(*sc.initial_state) == 0) ++left;
  }
  const double sigma = std::sqrt(0.25 * k);
  CHECK(std::abs(left - k * 0.5) <= 3.0 * sigma);
}

TEST_CASE("scenario sampling is deterministic") {
  TigerModel model;
  Belief b = make_exact_belief(model, std::array<double, 2>{0.4, 0.6});
  const ScenarioSet a = sample_scenarios(b, 32, 99);
  const ScenarioSet c = sample_scenarios(b, 32, 99);
  REQUIRE(a.count() == c.count());
  for (int i = 0; i < a.count(); ++i) {
    CHECK(a.scenarios[i].id == c.scenarios[i].id);
    CHECK(a.scenarios[i].stream_seed == c.scenarios[i].stream_seed);
    CHECK(a.scenarios[i].initial_state.get() == c.scenarios[i].initial_state.get());
  }
  CHECK(a.scenarios[0].stream_seed != a.scenarios[1].stream_seed);
}

TEST_CASE("step_scenario is independent of the stream on deterministic domains") {
  test::ChainModel model;
  Scenario sc{0, std::make_shared<test::ChainState>(0), 123};
  Scenario other{1, sc.initial_state, 456};
  const StepResult a = step_scenario(sc, 1, *sc.initial_state, 0, model);
  const StepResult b = step_scenario(other, 3, *sc.initial_state, 0, model);
  CHECK(a.observation == b.observation);
  CHECK(a.reward.total() == b.reward.total());
}

TEST_CASE("step_scenario repeats bit-identically") {
  TigerModel model;
  Scenario sc{0, model.make_state(0), 7777};
  const StepResult a = step_scenario(sc, 2, *sc.initial_state, TigerModel::kListen, model);
  const StepResult b = step_scenario(sc, 2, *sc.initial_state, TigerModel::kListen, model);
  CHECK(a.observation == b.observation);
  CHECK(a.reward.safe == b.reward.safe);
  CHECK(model.state_index(*a.next) == model.state_index(*b.next));
}

TEST_CASE("different depths decorrelate stochastic outcomes") {
  TigerModel model;
  int diffs = 0;
  for (int i = 0; i < 100; ++i) {
    Scenario sc{i, model.make_state(0), mix64(3, i)};
    const StepResult a = step_scenario(sc, 1, *sc.initial_state, TigerModel::kListen, model);
    const StepResult b = step_scenario(sc, 2, *sc.initial_state, TigerModel::kListen, model);
    if (a.observation != b.observation) ++diffs;
  }
  CHECK(diffs > 5);  // ~25% of pairs differ in expectation
}

TEST_CASE("stepping a terminal state raises") {
  test::ChainModel model(4);
  Scenario sc{0, std::make_shared<test::ChainState>(4), 1};
  CHECK_THROWS_AS((void)step_scenario(sc, 1, *sc.initial_state, 0, model),
                  TerminalStateError);
}

TEST_CASE("stream values pass a serial-correlation sanity check") {
  const int n = 100000;
  Scenario sc{0, nullptr, 0xFEEDFACE};
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) xs[i] = to_unit(sc.stream(i + 1));
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double num = 0.0, den = 0.0;
  for (int i = 0; i + 1 < n; ++i) {
    num += (xs[i] - mean) * (xs[i + 1] - mean);
    den += (xs[i] - mean) * (xs[i] - mean);
  }
  CHECK(std::abs(num / den) < 0.05);
}

TEST_CASE("stream value is a pure function of (seed, depth)") {
  Scenario a{0, nullptr, 555};
  Scenario b{9, nullptr, 555};  // id does not enter the stream
  for (int d = 1; d < 20; ++d) CHECK(a.stream(d) == b.stream(d));
}

TEST_SUITE_END();
