#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "planlearn/cli.hpp"
#include "planlearn/rng.hpp"

using namespace planlearn;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("orchestrator");

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("planlearn_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig tiger_plan_config(const std::string& out) {
  RunConfig cfg;
  cfg.mode = "plan";
  cfg.domain = "tiger";
  cfg.out_dir = out;
  cfg.seed = 11;
  cfg.single_thread = true;
  cfg.plan_episodes = 3;
  cfg.step_cap = 5;
  cfg.actor_particles = 32;
  cfg.search.scenario_count = 6;
  cfg.search.max_depth = 2;
  cfg.search.max_trials = 20;
  cfg.search.rollout_extra = 4;
  return cfg;
}

}  // namespace

TEST_CASE("config files parse with line-precise errors") {
  const fs::path dir = temp_dir("cfg");
  {
    std::ofstream os(dir / "good.cfg");
    os << "# comment\n";
    os << "domain = driving\n";
    os << "search.k = 17\n";
    os << "driving.exo=4\n";
  }
  const RunConfig cfg = RunConfig::from_file((dir / "good.cfg").string());
  CHECK(cfg.domain == "driving");
  CHECK(cfg.search.scenario_count == 17);
  CHECK(cfg.driving.exo_count == 4);

  {
    std::ofstream os(dir / "bad.cfg");
    os << "domain = tiger\n";
    os << "search.k = banana\n";
  }
  try {
    (void)RunConfig::from_file((dir / "bad.cfg").string());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("validation rejects unknown keys, bad modes, and missing files") {
  RunConfig cfg;
  CHECK_THROWS_AS(cfg.set("definitely.not.a.key", "1"), ConfigError);

  cfg.mode = "ponder";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg.mode = "eval";
  cfg.checkpoint = "/nonexistent/ckpt";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg.mode = "plan";
  cfg.checkpoint.clear();
  cfg.search.max_depth = 99;
  cfg.step_cap = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("eval mode with a missing checkpoint produces no artifacts") {
  const fs::path dir = temp_dir("evalmissing");
  RunConfig cfg = tiger_plan_config((dir / "out").string());
  cfg.mode = "eval";
  cfg.checkpoint = (dir / "missing.ckpt").string();
  CHECK_THROWS_AS((void)run(cfg), ConfigError);
  CHECK_FALSE(fs::exists(dir / "out" / "eval.csv"));
  fs::remove_all(dir);
}

TEST_CASE("fixed-seed single-threaded plan runs are byte-identical") {
  const fs::path d1 = temp_dir("det1");
  const fs::path d2 = temp_dir("det2");
  RunConfig a = tiger_plan_config(d1.string());
  RunConfig b = tiger_plan_config(d2.string());
  REQUIRE(run(a) == 0);
  REQUIRE(run(b) == 0);
  const std::string m1 = read_file(d1 / "metrics.csv");
  const std::string m2 = read_file(d2 / "metrics.csv");
  CHECK(m1 == m2);
  CHECK_FALSE(m1.empty());
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("oracle-check agrees on a reduced sweep") {
  const OracleCheck check = oracle_equivalence_check(4, false);
  CHECK(check.runs == 32);
  CHECK(check.passed());
}

TEST_CASE("closed-loop training honors the data budget within one episode") {
  const fs::path dir = temp_dir("budget");
  RunConfig cfg = tiger_plan_config((dir / "out").string());
  cfg.mode = "train-ssl";
  cfg.data_budget = 23;
  cfg.step_cap = 5;
  cfg.eval_period = 0;  // no intermediate evaluation points
  cfg.eval_episodes = 1;
  cfg.learner.trunk = {8, 8};
  cfg.learner.batch = 4;
  cfg.snapshot_period = 5;
  const TrainResult result = train_closed_ssl(cfg);
  CHECK(result.inserted >= 23);
  CHECK(result.inserted < 23 + cfg.step_cap);  // one episode of slack
  fs::remove_all(dir);
}

TEST_CASE("evaluate: zero episodes is an empty summary, repeat runs identical") {
  RunConfig cfg = tiger_plan_config("unused");
  const auto provider = uniform_provider(3);
  const EvalSummary empty = evaluate_planner(cfg, provider, 0, 5);
  CHECK(empty.episodes == 0);
  CHECK(empty.mean_reward == 0.0);

  const EvalSummary a = evaluate_planner(cfg, provider, 3, 17);
  const EvalSummary b = evaluate_planner(cfg, provider, 3, 17);
  CHECK(a.mean_reward == b.mean_reward);
  CHECK(a.stderr_reward == b.stderr_reward);
}

TEST_CASE("train, checkpoint, eval round trip") {
  const fs::path dir = temp_dir("roundtrip");
  RunConfig cfg = tiger_plan_config((dir / "out").string());
  cfg.mode = "train-ssl";
  cfg.data_budget = 30;
  cfg.eval_period = 0;
  cfg.eval_episodes = 2;
  cfg.learner.trunk = {8, 8};
  cfg.learner.batch = 4;
  REQUIRE(run(cfg) == 0);

  const fs::path ckpt = dir / "out" / "checkpoints";
  REQUIRE(fs::exists(ckpt));
  fs::path found;
  for (const auto& entry : fs::directory_iterator(ckpt)) found = entry.path();
  REQUIRE_FALSE(found.empty());

  RunConfig ev = tiger_plan_config((dir / "eval_out").string());
  ev.mode = "eval";
  ev.checkpoint = found.string();
  ev.eval_episodes = 2;
  REQUIRE(run(ev) == 0);
  const std::string first = read_file(dir / "eval_out" / "eval.csv");

  RunConfig ev2 = ev;
  ev2.out_dir = (dir / "eval_out2").string();
  REQUIRE(run(ev2) == 0);
  CHECK(first == read_file(dir / "eval_out2" / "eval.csv"));
  CHECK_FALSE(first.empty());
  fs::remove_all(dir);
}

TEST_CASE("concurrent actors and learner close the loop and stop on budget") {
  const fs::path dir = temp_dir("concurrent");
  RunConfig cfg = tiger_plan_config((dir / "out").string());
  cfg.mode = "train-ssl";
  cfg.single_thread = false;
  cfg.actors = 2;
  cfg.data_budget = 40;
  cfg.eval_period = 0;
  cfg.eval_episodes = 1;
  cfg.learner.trunk = {8, 8};
  cfg.learner.batch = 4;
  cfg.snapshot_period = 3;
  const TrainResult result = train_closed_ssl(cfg);
  CHECK(result.inserted >= 40);
  CHECK_FALSE(result.episodes.empty());
  fs::remove_all(dir);
}

TEST_CASE("manifest echoes the configuration") {
  const fs::path dir = temp_dir("manifest");
  RunConfig cfg = tiger_plan_config(dir.string());
  REQUIRE(run(cfg) == 0);
  const std::string manifest = read_file(dir / "manifest.txt");
  CHECK(manifest.find("mode=plan") != std::string::npos);
  CHECK(manifest.find("search.k=6") != std::string::npos);
  CHECK(manifest.find("seed=11") != std::string::npos);
  fs::remove_all(dir);
}

TEST_SUITE_END();
