// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cnnlab/nets.hpp>
#include <cnnlab/rng.hpp>
#include <cnnlab/training.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cnnlab::testing {

// smallest |pre-activation| feeding a ReLU, over all rows of X
inline double kink_margin(const ArchConfig& cfg, const Params& th, const Tensor& X) {
  double m = INFINITY;
  std::size_t D = X.dim(1);
  for (std::size_t r = 0; r < X.dim(0); ++r) {
    std::span<const double> x(X.values.data() + r * D, D);
    LayerTrace tr = trace(cfg, th, x);
    for (std::size_t l = 0; l < cfg.depth; ++l)
      if (cfg.activations[l] == Activation::relu)
        for (double v : tr.pre[l].values)
          m = std::min(m, std::abs(v));
  }
  return m;
}

// (1/2n) sum (h(x_i) - y_i)^2 through the scalar forward pass
inline double plain_loss(const ArchConfig& cfg, const Params& th, const Tensor& X,
                         const Tensor& y) {
  std::size_t D = X.dim(1), n = X.dim(0);
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double e = forward(cfg, th, std::span<const double>(X.values.data() + r * D, D)) - y[r];
    acc += 0.5 * e * e;
  }
  return acc / static_cast<double>(n);
}

// max over coordinates of |g - fd| / max(|g|, |fd|, 1e-3), with g from the
// training gradient and fd from central differences of plain_loss
inline double max_grad_error(const ArchConfig& cfg, const Params& th, const Tensor& X,
                             const Tensor& y, double h = 1e-5) {
  Dataset ds{X, y, 0.0, 0};
  std::vector<std::size_t> idx(X.dim(0));
  std::iota(idx.begin(), idx.end(), 0);
  TrainConfig tc;
  auto [obj, grad] = objective_grad(cfg, th, ds, idx, tc);
  std::vector<double> g = grad.flatten(), flat = th.flatten();
  Params probe = th;
  double worst = 0.0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    double keep = flat[i];
    flat[i] = keep + h;
    probe.assign(flat);
    double fp = plain_loss(cfg, probe, X, y);
    flat[i] = keep - h;
    probe.assign(flat);
    double fm = plain_loss(cfg, probe, X, y);
    flat[i] = keep;
    double fd = (fp - fm) / (2.0 * h);
    double scale = std::max({std::abs(g[i]), std::abs(fd), 1e-3});
    worst = std::max(worst, std::abs(g[i] - fd) / scale);
  }
  return worst;
}

} // namespace cnnlab::testing
