// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/training.hpp>

#include <cnnlab/parallel.hpp>
#include <cnnlab/rng.hpp>

#include <cmath>
#include <mutex>
#include <stdexcept>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <Eigen/Dense>
#include <fmt/format.h>

namespace cnnlab {

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "sgd" || s == "SGD")
    return Optimizer::sgd;
  if (s == "adam" || s == "Adam")
    return Optimizer::adam;
  throw std::invalid_argument(fmt::format("unknown optimizer '{}'", s));
}

std::string to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

void TrainConfig::validate() const {
  if (!(adam_alpha > 0.0 && adam_alpha < 1.0) ||
      !(adam_beta > 0.0 && adam_beta < 1.0))
    throw std::invalid_argument(fmt::format(
      "TrainConfig: Adam alpha={} beta={} must lie in (0,1)", adam_alpha,
      adam_beta));
  if (!(adam_eps > 0.0))
    throw std::invalid_argument("TrainConfig: eps must be positive");
  if (!(lr > 0.0) || !(lr_decay >= 0.0))
    throw std::invalid_argument("TrainConfig: lr must be positive");
  if (!(lambda >= 0.0))
    throw std::invalid_argument("TrainConfig: lambda must be >= 0");
  if (!(A > 0.0) || !(B > 0.0))
    throw std::invalid_argument("TrainConfig: A and B must be positive");
  if (restarts == 0)
    throw std::invalid_argument("TrainConfig: restarts must be >= 1");
}

namespace {

double reg_value(RegForm r, double norm) {
  return r == RegForm::identity ? norm : norm * norm;
}

double point_loss(double pred, double y, double A, double B) {
  double p = std::isinf(A) ? pred : truncate(pred, A);
  double r = p - y;
  double l = 0.5 * r * r;
  return std::isinf(B) ? l : std::min(l, 0.5 * B * B);
}

} // namespace

double empirical_loss(const ArchConfig& cfg, const Params& theta,
                      const Dataset& ds, double A, double B) {
  std::vector<double> pred = forward_batch(cfg, theta, ds.X);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    acc += point_loss(pred[i], ds.y[i], A, B);
  return acc / static_cast<double>(pred.size());
}

double objective(const ArchConfig& cfg, const Params& theta, const Dataset& ds,
                 double A, double B, double lambda, RegForm reg) {
  double obj = empirical_loss(cfg, theta, ds, A, B);
  if (lambda > 0.0)
    obj += lambda * reg_value(reg, param_norm_P(cfg, theta));
  return obj;
}

std::pair<double, Params> objective_grad(const ArchConfig& cfg,
                                         const Params& theta,
                                         const Dataset& ds,
                                         std::span<const std::size_t> idx,
                                         const TrainConfig& tc) {
  std::size_t D = ds.input_dim();
  std::vector<double> xs, ys;
  xs.reserve(idx.size() * D);
  ys.reserve(idx.size());
  for (std::size_t r : idx) {
    const double* row = ds.X.values.data() + r * D;
    xs.insert(xs.end(), row, row + D);
    ys.push_back(ds.y[r]);
  }
  Tensor yb({idx.size()}, std::move(ys));
  Tape tape;
  ParamVars pv = bind(tape, theta);
  Var pred = forward_tape(cfg, pv, Tensor({idx.size(), D}, std::move(xs)));
  if (!std::isinf(tc.A))
    pred = truncate(pred, tc.A);
  Var obj = truncated_sq_loss(pred, yb, tc.B);
  if (tc.lambda > 0.0) {
    Var nrm = param_norm_P_tape(cfg, pv);
    if (tc.reg == RegForm::square)
      nrm = square(nrm);
    obj = add(obj, scale(nrm, tc.lambda));
  }
  std::vector<Tensor> g = tape.gradient(obj, pv.all());
  return {obj.value().item(), unbind(g, cfg)};
}

void sgd_step(std::span<double> theta, std::span<const double> g, double eta) {
  if (theta.size() != g.size())
    throw std::invalid_argument("sgd_step: size mismatch");
  for (std::size_t i = 0; i < theta.size(); ++i)
    theta[i] -= eta * g[i];
}

void adam_step(AdamState& st, std::span<double> theta,
               std::span<const double> g, double eta, double alpha,
               double beta, double eps) {
  if (theta.size() != g.size())
    throw std::invalid_argument("adam_step: size mismatch");
  if (st.v.empty()) {
    st.v.assign(theta.size(), 0.0);
    st.m.assign(theta.size(), 0.0);
  }
  double t1 = static_cast<double>(st.t + 1);
  double cv = 1.0 - std::pow(alpha, t1);
  double cm = 1.0 - std::pow(beta, t1);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    st.v[i] = alpha * st.v[i] + (1.0 - alpha) * g[i] * g[i];
    st.m[i] = beta * st.m[i] + (1.0 - beta) * g[i];
    theta[i] -= eta * (st.m[i] / cm) / (std::sqrt(st.v[i] / cv) + eps);
  }
  ++st.t;
}

Params initialize(const ArchConfig& cfg, const InitScheme& init,
                  std::uint64_t seed, std::size_t restart) {
  if (init.kind == InitKind::given) {
    init.theta0.check(cfg);
    return init.theta0;
  }
  Params p = Params::zeros(cfg);
  Rng rng(seed, "init", restart);
  auto fill = [&](Tensor& t, double fan_in) {
    double bound = 1.0 / std::sqrt(fan_in);
    for (double& v : t.values)
      v = init.kind == InitKind::gaussian ? init.beta * rng.normal()
                                          : bound * (2.0 * rng.uniform() - 1.0);
  };
  for (std::size_t l = 1; l <= cfg.depth; ++l) {
    double fan_in = static_cast<double>(cfg.channels[l - 1]) *
                    (cfg.family == Family::FCN ? 1.0
                                               : static_cast<double>(cfg.stride));
    fill(p.W[l - 1], fan_in);
    fill(p.b[l - 1], fan_in);
  }
  fill(p.Wo, static_cast<double>(cfg.out_dim()));
  return p;
}

std::vector<std::size_t> minibatch(std::size_t n, std::size_t k,
                                   std::uint64_t seed, std::size_t restart,
                                   std::size_t t) {
  std::vector<std::size_t> idx;
  if (k == 0) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      idx[i] = i;
    return idx;
  }
  Rng rng(seed, "minibatch", (static_cast<std::uint64_t>(restart) << 40) ^ t);
  idx.resize(k);
  for (std::size_t i = 0; i < k; ++i)
    idx[i] = rng.below(n);
  return idx;
}

namespace {

struct RunOutcome {
  Params theta;
  TrajectoryRecord traj;
  double final_loss = 0.0;
  double final_objective = 0.0;
  std::size_t steps = 0;
  bool diverged = false;
  bool stopped = false;
};

RunOutcome run_once(const ArchConfig& cfg, const InitScheme& init,
                    const Dataset& ds, const TrainConfig& tc, std::size_t r,
                    const StepCallback& on_step) {
  RunOutcome out;
  Params theta = initialize(cfg, init, tc.seed, r);
  std::vector<double> flat = theta.flatten();
  AdamState st;
  std::size_t n = ds.n();
  bool full = tc.batch == 0;
  std::size_t snap = 0;
  for (std::size_t t = 0;; ++t) {
    std::vector<std::size_t> idx = minibatch(n, tc.batch, tc.seed, r, t);
    auto [obj, grad] = objective_grad(cfg, theta, ds, idx, tc);
    double loss = full ? obj - (tc.lambda > 0.0
                                  ? tc.lambda * reg_value(tc.reg,
                                                          param_norm_P(cfg, theta))
                                  : 0.0)
                       : empirical_loss(cfg, theta, ds, tc.A, tc.B);
    double nrm = param_norm_P(cfg, theta);
    out.traj.loss.push_back(loss);
    out.traj.norm.push_back(nrm);
    while (snap < tc.snapshot_steps.size() && tc.snapshot_steps[snap] < t)
      ++snap;
    if (snap < tc.snapshot_steps.size() && tc.snapshot_steps[snap] == t)
      out.traj.snapshots.emplace_back(t, theta);
    if (on_step)
      on_step(t, theta);
    out.steps = t;
    out.final_loss = loss;
    if (!std::isfinite(loss) || !std::isfinite(obj)) {
      out.diverged = true;
      break;
    }
    if (tc.early_stop > 0.0 && loss < tc.early_stop) {
      out.stopped = true;
      break;
    }
    if (t == tc.steps)
      break;
    std::vector<double> g = grad.flatten();
    if (tc.optimizer == Optimizer::sgd)
      sgd_step(flat, g, tc.eta(t));
    else
      adam_step(st, flat, g, tc.eta(t), tc.adam_alpha, tc.adam_beta,
                tc.adam_eps);
    theta.assign(flat);
  }
  out.theta = std::move(theta);
  out.final_objective =
    out.diverged ? std::numeric_limits<double>::infinity()
                 : out.final_loss +
                     (tc.lambda > 0.0
                        ? tc.lambda *
                            reg_value(tc.reg, param_norm_P(cfg, out.theta))
                        : 0.0);
  return out;
}

} // namespace

namespace {

// keep large tape buffers on the heap between steps instead of returning
// them to the kernel on every free
void tune_allocator() {
#ifdef __GLIBC__
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
#endif
}

} // namespace

TrainResult train(const ArchConfig& cfg, const InitScheme& init,
                  const Dataset& ds, const TrainConfig& tc,
                  const StepCallback& on_step) {
  tune_allocator();
  cfg.validate();
  tc.validate();
  if (ds.n() == 0 || ds.input_dim() != cfg.input_dim)
    throw std::invalid_argument(fmt::format(
      "train: dataset of dimension {} for input_dim {}", ds.input_dim(),
      cfg.input_dim));
  TrainResult best;
  bool have = false;
  for (std::size_t r = 0; r < tc.restarts; ++r) {
    RunOutcome o = run_once(cfg, init, ds, tc, r, on_step);
    bool better = !have || (!o.diverged && best.diverged) ||
                  (o.diverged == best.diverged &&
                   o.final_objective < best.final_objective);
    if (better) {
      best.theta = std::move(o.theta);
      best.traj = std::move(o.traj);
      best.final_objective = o.final_objective;
      best.final_loss = o.final_loss;
      best.steps_run = o.steps;
      best.best_restart = r;
      best.diverged = o.diverged;
      best.stopped_early = o.stopped;
      have = true;
    }
  }
  return best;
}

Estimate mc_mean(std::span<const double> samples) {
  Estimate e;
  std::size_t n = samples.size();
  if (n == 0)
    throw std::invalid_argument("mc_mean: no samples");
  double mean = 0.0;
  for (double v : samples)
    mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : samples)
    var += (v - mean) * (v - mean);
  var = n > 1 ? var / static_cast<double>(n - 1) : 0.0;
  e.value = mean;
  e.se = std::sqrt(var / static_cast<double>(n));
  return e;
}

Estimate test_error(const ArchConfig& cfg, const Params& theta,
                    const TargetSpec& spec, InputDist dist, std::size_t n_test,
                    std::uint64_t seed, std::size_t threads) {
  if (n_test == 0)
    throw std::invalid_argument("test_error: n_test must be >= 1");
  Tensor X = sample_inputs(dist, cfg.input_dim, n_test, seed, "test", threads);
  std::vector<double> sq(n_test);
  constexpr std::size_t kChunk = 256;
  std::size_t chunks = (n_test + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t c = lo; c < hi; ++c) {
      std::size_t r0 = c * kChunk, r1 = std::min(n_test, r0 + kChunk);
      Tensor Xc({r1 - r0, cfg.input_dim},
                std::vector<double>(X.values.begin() + r0 * cfg.input_dim,
                                    X.values.begin() + r1 * cfg.input_dim));
      std::vector<double> pred = forward_batch(cfg, theta, Xc);
      for (std::size_t r = r0; r < r1; ++r) {
        std::span<const double> x(X.values.data() + r * cfg.input_dim,
                                  cfg.input_dim);
        double gap = pred[r - r0] - eval_target(spec, x);
        sq[r] = gap * gap;
      }
    }
  });
  return mc_mean(sq);
}

double hat_rho_n(const std::function<double(std::span<const double>)>& f,
                 const std::function<double(std::span<const double>)>& g,
                 const Tensor& X) {
  if (X.rank() != 2 || X.dim(0) == 0)
    throw std::invalid_argument("hat_rho_n: sample must be a non-empty matrix");
  std::size_t n = X.dim(0), D = X.dim(1);
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    std::span<const double> x(X.values.data() + r * D, D);
    double gap = f(x) - g(x);
    acc += gap * gap;
  }
  return std::sqrt(acc / static_cast<double>(n));
}

double OlsModel::operator()(std::span<const double> x) const {
  if (x.size() != w.size())
    throw std::invalid_argument("OlsModel: input dimension");
  double acc = intercept;
  for (std::size_t i = 0; i < w.size(); ++i)
    acc += w[i] * x[i];
  return acc;
}

OlsModel ols_fit(const Tensor& X, const Tensor& y, double ridge) {
  if (X.rank() != 2 || X.dim(0) != y.size() || y.size() == 0)
    throw std::invalid_argument("ols_fit: X must be n x p with n labels");
  std::size_t n = X.dim(0), p = X.dim(1);
  Eigen::MatrixXd Z(n, p + 1);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < p; ++c)
      Z(r, c) = X[r * p + c];
    Z(r, p) = 1.0;
  }
  Eigen::VectorXd yy = Eigen::Map<const Eigen::VectorXd>(y.values.data(), n);
  Eigen::VectorXd beta;
  if (n < p + 1) {
    Eigen::MatrixXd G = Z * Z.transpose();
    G.diagonal().array() += ridge;
    beta = Z.transpose() * G.ldlt().solve(yy);
  } else {
    Eigen::MatrixXd G = Z.transpose() * Z;
    G.diagonal().array() += ridge;
    beta = G.ldlt().solve(Z.transpose() * yy);
  }
  OlsModel m;
  m.w.assign(beta.data(), beta.data() + p);
  m.intercept = beta(p);
  return m;
}

TwoLayerNet two_layer_from_fcn(const ArchConfig& cfg, const Params& theta) {
  theta.check(cfg);
  if (cfg.family != Family::FCN || cfg.depth != 1 ||
      cfg.activations[0] != Activation::relu)
    throw std::invalid_argument(
      "two_layer_from_fcn: one-hidden-layer ReLU FCN required");
  TwoLayerNet g;
  g.m = cfg.channels[1];
  g.k = cfg.channels[0];
  g.U = theta.W[0].values;
  g.c = theta.b[0].values;
  g.a = theta.Wo.values;
  return g;
}

} // namespace cnnlab
