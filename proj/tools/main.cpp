// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/config.hpp>
#include <cnnlab/experiments.hpp>
#include <cnnlab/parallel.hpp>

#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

int main(int argc, char** argv) {
  using namespace cnnlab;
  CLI::App app{"cnnlab: convolutional sample-complexity experiments"};
  app.require_subcommand(1);
  std::string config_path, out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t threads = default_threads();
  app.add_option("--config", config_path, "key=value parameter file");
  app.add_option("--seed", seed, "root seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--threads", threads, "worker threads (default CNNLAB_THREADS or 1)")
    ->check(CLI::PositiveNumber);
  for (const auto& name : subcommands())
    app.add_subcommand(name, "run " + name);
  app.fallthrough();

  CLI11_PARSE(app, argc, argv);

  ExperimentConfig ec;
  ec.subcommand = app.get_subcommands().front()->get_name();
  ec.seed = seed;
  ec.out_dir = out_dir;
  ec.threads = threads;
  try {
    if (!config_path.empty())
      ec.params = parse_config_file(config_path);
    return run_experiment(ec, std::cerr);
  } catch (const ConfigError& e) {
    std::cerr << "cnnlab: invalid config: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "cnnlab: error: " << e.what() << '\n';
    return 3;
  }
}
