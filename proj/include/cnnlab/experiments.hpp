// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cnnlab/config.hpp>
#include <cnnlab/tasks.hpp>
#include <cnnlab/training.hpp>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace cnnlab {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kCsvSchemaVersion = 1;

const std::vector<std::string>& subcommands();
std::map<std::string, std::string> subcommand_defaults(const std::string& sub);

/**
 * Runs one subcommand, writes its CSV files and manifest.json into
 * ec.out_dir and returns the exit status: 0 when every assertion of the
 * subcommand holds, 1 otherwise. Invalid parameters raise ConfigError.
 */
int run_experiment(const ExperimentConfig& ec, std::ostream& log);

struct ConstructionCheck {
  std::string builder;
  std::size_t d = 0;
  double max_gap = 0.0;
  double tol = 0.0;
  double norm = 0.0;
  double budget = 0.0;
  bool pass = false;
};

// gaps of the five builders against direct evaluation on Gaussian inputs
std::vector<ConstructionCheck> check_constructions(std::size_t d,
                                                   std::size_t samples,
                                                   std::uint64_t seed,
                                                   std::size_t threads = 1);

struct Figure2Settings {
  std::size_t d = 1024;
  std::size_t n = 400;
  std::size_t stride = 4;
  std::size_t channels = 4;
  std::size_t fcn_width = 10;
  double sigma = 0.0;
  InputDist dist = InputDist::uniform_cube;
  double lr = 1e-3;
  double lr_decay = 0.0;
  std::size_t steps = 4000;
  double early_stop = 1e-5;
  std::size_t restarts = 3;
  std::size_t n_test = 4000;
  std::size_t eval_every = 500;
  std::vector<std::string> targets{"short", "long"};
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct Figure2Point {
  std::string target;
  std::string model;
  std::size_t step = 0;
  double train_loss = 0.0;
  double test_mse = 0.0;
};

struct Figure2Summary {
  std::string target;
  std::string model;
  double test_mse = 0.0;
  double var_y = 0.0;
  double ratio = 0.0;
  double final_loss = 0.0;
  std::size_t steps_run = 0;
};

struct Figure2Result {
  std::vector<Figure2Point> curves;
  std::vector<Figure2Summary> summary;
};

// short: x1 x2, long: x1 x_d
TargetSpec figure2_target(const std::string& name, std::size_t d);
Figure2Result run_figure2(const Figure2Settings& st);

struct EquivarianceSettings {
  std::size_t d = 16; // inputs live in R^{4d}
  std::size_t n = 64;
  std::size_t steps = 200;
  std::size_t trials = 20;
  std::size_t batch = 16;
  double sigma = 0.5;
  std::size_t lcn_stride = 2;
  std::size_t lcn_channels = 4;
  double lcn_lr = 1e-2;
  std::size_t fcn_width = 16;
  double fcn_lr = 1e-2;
  double fcn_init = 0.1;
  std::uint64_t seed = 0;
};

struct EquivarianceRow {
  std::string test;
  std::string group;
  std::string family;
  std::string optimizer;
  std::size_t trial = 0;
  std::size_t T = 0;
  double deviation = 0.0;
};

std::vector<EquivarianceRow> run_equivariance(const EquivarianceSettings& st);

} // namespace cnnlab
