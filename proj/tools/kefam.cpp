#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "app.hpp"

int main(int argc, char** argv) {
  using namespace kefam::app;
  CLI::App cli{"Kahler-Einstein metrics on families of pseudoconvex domains"};
  cli.require_subcommand(1);
  cli.fallthrough();

  std::string config_path;
  Overrides o;
  cli.add_option("--config", config_path, "experiment configuration (JSON)")->check(CLI::ExistingFile);
  cli.add_option("--out", o.out, "output directory");
  cli.add_option("--workers", o.workers, "worker threads (0: available parallelism)");
  cli.add_option("--seed", o.seed, "sampling seed");
  cli.add_option("--resolution", o.resolution, "lattice nodes per axis");
  cli.add_option("--level", o.level, "Fefferman level (0: n + 1)");
  cli.add_option("--tol", o.tol, "Newton tolerance");
  for (const auto& name : subcommands()) cli.add_subcommand(name);

  CLI11_PARSE(cli, argc, argv);
  init_logging();

  nlohmann::json config = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    config = nlohmann::json::parse(f, nullptr, false);
    if (config.is_discarded()) {
      std::cerr << "ConfigInvalid: config: " << config_path << " is not valid JSON\n";
      return 2;
    }
  }
  return run_guarded(config, o, cli.get_subcommands().front()->get_name());
}
