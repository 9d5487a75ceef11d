#include <CLI11.hpp>
#include <iostream>

#include "planlearn/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"planlearn: guided sparse belief-tree planning with a closed learning loop"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string checkpoint;
  long long seed = -1;
  bool single_thread = false;

  const std::vector<std::string> modes = {"plan",      "train-ssl",      "train-rl",
                                          "train-open-ssl", "eval",      "oracle-check"};
  for (const std::string& mode : modes) {
    CLI::App* sub = app.add_subcommand(mode);
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--set", overrides, "override: key=value (repeatable)");
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--checkpoint", checkpoint, "checkpoint path (eval / guided plan)");
    sub->add_flag("--single-thread", single_thread, "reference single-threaded mode");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    planlearn::RunConfig cfg;
    if (!config_path.empty()) cfg = planlearn::RunConfig::from_file(config_path);
    cfg.mode = app.get_subcommands().front()->get_name();
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::cerr << "--set expects key=value, got: " << kv << "\n";
        return 2;
      }
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    if (single_thread) cfg.single_thread = true;
    return planlearn::run(cfg);
  } catch (const planlearn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
