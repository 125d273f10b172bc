#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "brwlab/config.hpp"
#include "brwlab/experiments.hpp"
#include "brwlab/parallel.hpp"

namespace ex = brwlab::experiments;

int main(int argc, char** argv) {
  CLI::App app{"Tilted branching random walk and multiplicative chaos experiments"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  for (const auto& name : ex::command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("config", config_path, "experiment configuration file")->required();
    sub->add_option("--seed", seed, "override run.seed");
    sub->add_option("--threads", threads, "override run.threads")->check(CLI::Range(1, 1024));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : ex::kConfigInvalid;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    brwlab::config::ExperimentConfig cfg = brwlab::config::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    brwlab::config::validate(cfg);
    brwlab::par::set_threads(cfg.threads);
    const ex::CommandResult res = ex::run_command(command, cfg, std::cerr);
    if (!res.message.empty()) std::cerr << res.message << '\n';
    return res.exit_code;
  } catch (const brwlab::config::ConfigError& e) {
    std::cerr << config_path << ": " << e.what() << '\n';
    return ex::kConfigInvalid;
  } catch (const std::exception& e) {
    std::cerr << command << ": error: " << e.what() << '\n';
    return 1;
  }
}
