// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cnnlab/constructor.hpp>
#include <cnnlab/nets.hpp>
#include <cnnlab/tasks.hpp>

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace cnnlab {

enum class Optimizer { sgd, adam };
enum class RegForm { identity, square };
enum class InitKind { gaussian, uniform_fan_in, given };

Optimizer optimizer_from_string(const std::string& s);
std::string to_string(Optimizer o);

struct InitScheme {
  InitKind kind = InitKind::uniform_fan_in;
  double beta = 1.0; // standard deviation for gaussian
  Params theta0;

  static InitScheme gaussian(double beta) { return {InitKind::gaussian, beta, {}}; }
  static InitScheme uniform_fan_in() { return {InitKind::uniform_fan_in, 1.0, {}}; }
  static InitScheme given(Params p) { return {InitKind::given, 1.0, std::move(p)}; }
};

/**
 * Optimizer and objective settings. Adam follows
 *   v <- alpha v + (1-alpha) g^2,  m <- beta m + (1-beta) g,
 *   theta <- theta - eta_t (m / (1-beta^{t+1})) / (sqrt(v / (1-alpha^{t+1})) + eps).
 * batch = 0 means full batch; otherwise k iid uniform indices per step.
 */
struct TrainConfig {
  Optimizer optimizer = Optimizer::adam;
  double lr = 1e-3;
  double lr_decay = 0.0; // eta_t = lr / (1 + lr_decay * t)
  double adam_alpha = 0.999;
  double adam_beta = 0.9;
  double adam_eps = 1e-8;
  std::size_t batch = 0;
  std::size_t steps = 1000;
  double lambda = 0.0;
  RegForm reg = RegForm::identity;
  double A = std::numeric_limits<double>::infinity();
  double B = std::numeric_limits<double>::infinity();
  std::size_t restarts = 1;
  std::uint64_t seed = 0;
  double early_stop = 0.0; // stop once the training loss is below this
  std::vector<std::size_t> snapshot_steps;

  void validate() const;
  double eta(std::size_t t) const {
    return lr / (1.0 + lr_decay * static_cast<double>(t));
  }
};

struct TrajectoryRecord {
  std::vector<double> loss;
  std::vector<double> norm;
  std::vector<std::pair<std::size_t, Params>> snapshots;
};

struct TrainResult {
  Params theta;
  TrajectoryRecord traj;
  double final_objective = 0.0;
  double final_loss = 0.0;
  std::size_t steps_run = 0;
  std::size_t best_restart = 0;
  bool diverged = false;
  bool stopped_early = false;
};

struct AdamState {
  std::vector<double> v;
  std::vector<double> m;
  std::size_t t = 0;
};

// (1/n) sum l_B(pi_A h(x_i), y_i)
double empirical_loss(const ArchConfig& cfg, const Params& theta,
                      const Dataset& ds, double A, double B);
double objective(const ArchConfig& cfg, const Params& theta, const Dataset& ds,
                 double A, double B, double lambda,
                 RegForm reg = RegForm::identity);

// objective on the rows in idx and its gradient
std::pair<double, Params> objective_grad(const ArchConfig& cfg,
                                         const Params& theta,
                                         const Dataset& ds,
                                         std::span<const std::size_t> idx,
                                         const TrainConfig& tc);

void sgd_step(std::span<double> theta, std::span<const double> g, double eta);
void adam_step(AdamState& st, std::span<double> theta,
               std::span<const double> g, double eta, double alpha,
               double beta, double eps);

Params initialize(const ArchConfig& cfg, const InitScheme& init,
                  std::uint64_t seed, std::size_t restart = 0);

// minibatch rows for step t of restart r
std::vector<std::size_t> minibatch(std::size_t n, std::size_t k,
                                   std::uint64_t seed, std::size_t restart,
                                   std::size_t t);

using StepCallback = std::function<void(std::size_t, const Params&)>;

TrainResult train(const ArchConfig& cfg, const InitScheme& init,
                  const Dataset& ds, const TrainConfig& tc,
                  const StepCallback& on_step = {});

struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

Estimate mc_mean(std::span<const double> samples);

Estimate test_error(const ArchConfig& cfg, const Params& theta,
                    const TargetSpec& spec, InputDist dist, std::size_t n_test,
                    std::uint64_t seed, std::size_t threads = 1);

double hat_rho_n(const std::function<double(std::span<const double>)>& f,
                 const std::function<double(std::span<const double>)>& g,
                 const Tensor& X);

struct OlsModel {
  std::vector<double> w;
  double intercept = 0.0;

  double operator()(std::span<const double> x) const;
};

// ridge-regularized least squares with intercept; the n x n dual system is
// solved when n < input_dim + 1
OlsModel ols_fit(const Tensor& X, const Tensor& y, double ridge = 1e-10);

// one-hidden-layer ReLU FCN read as sum_j a_j relu(u_j . x + c_j)
TwoLayerNet two_layer_from_fcn(const ArchConfig& cfg, const Params& theta);

} // namespace cnnlab
