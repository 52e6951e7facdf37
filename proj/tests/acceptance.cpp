// SPDX-License-Identifier: Apache-2.0
// Acceptance runner: one PASS/FAIL line per criterion.
#include <cnnlab/bounds.hpp>
#include <cnnlab/constructor.hpp>
#include <cnnlab/experiments.hpp>
#include <cnnlab/parallel.hpp>
#include <cnnlab/rng.hpp>
#include <cnnlab/symmetry.hpp>
#include <cnnlab/tasks.hpp>
#include <cnnlab/training.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include <fmt/core.h>

#include "grad_check.hpp"

using namespace cnnlab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<double> randn(std::size_t n, std::uint64_t seed, std::uint64_t index = 0) {
  Rng rng(seed, "acceptance", index);
  std::vector<double> v(n);
  for (auto& x : v)
    x = rng.normal();
  return v;
}

// (1/d)(sum x_{2i-1}^2 - x_{2i}^2 over the first 2d)(same over the last 2d)
double separation_oracle(const std::vector<double>& x) {
  std::size_t d = x.size() / 4;
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    a += x[2 * i] * x[2 * i] - x[2 * i + 1] * x[2 * i + 1];
    b += x[2 * d + 2 * i] * x[2 * d + 2 * i] - x[2 * d + 2 * i + 1] * x[2 * d + 2 * i + 1];
  }
  return a * b / static_cast<double>(d);
}

std::uint64_t pascal_sum(std::size_t n, std::size_t m) {
  std::vector<std::uint64_t> row{1};
  for (std::size_t i = 1; i <= n; ++i) {
    std::vector<std::uint64_t> next(i + 1, 1);
    for (std::size_t k = 1; k < i; ++k)
      next[k] = row[k - 1] + row[k];
    row = std::move(next);
  }
  std::uint64_t s = 0;
  for (std::size_t k = 0; k <= m; ++k)
    s += row[k];
  return s;
}

// largest code in {0,1}^n with pairwise distance > m, branch and bound
std::size_t max_packing(std::size_t n, std::size_t m) {
  std::size_t best = 0;
  std::function<void(const std::vector<std::uint32_t>&, std::size_t)> rec =
    [&](const std::vector<std::uint32_t>& c, std::size_t size) {
      if (size + c.size() <= best)
        return;
      if (c.empty()) {
        best = size;
        return;
      }
      std::vector<std::uint32_t> keep;
      for (std::size_t i = 1; i < c.size(); ++i)
        if (static_cast<std::size_t>(std::popcount(c[i] ^ c[0])) > m)
          keep.push_back(c[i]);
      rec(keep, size + 1);
      rec(std::vector<std::uint32_t>(c.begin() + 1, c.end()), size);
    };
  std::vector<std::uint32_t> c;
  for (std::uint32_t i = 1; i < (1U << n); ++i)
    if (static_cast<std::size_t>(std::popcount(i)) > m)
      c.push_back(i);
  rec(c, 1);
  return best;
}

// --------------------------------------------------------------- criteria

Outcome construction_exactness() {
  double worst = 0.0;
  std::vector<double> ratios;
  for (std::size_t d : {4, 16, 64, 256}) {
    auto [cfg, th] = build_separation_cnn(d);
    for (std::size_t s = 0; s < 10000; ++s) {
      auto x = randn(4 * d, 1, d * 100000 + s);
      double want = separation_oracle(x);
      worst = std::max(worst, std::abs(forward(cfg, th, x) - want) / std::max(1.0, std::abs(want)));
    }
    ratios.push_back(param_norm_P(cfg, th) / std::log2(4.0 * static_cast<double>(d)));
  }
  double rmax = *std::max_element(ratios.begin(), ratios.end());
  return {worst <= 1e-8 && rmax <= kNormBudgetC,
          fmt::format("max rel err {:.3g}; norm/log2(4d) = {:.3f} {:.3f} {:.3f} {:.3f} (<= {})",
                      worst, ratios[0], ratios[1], ratios[2], ratios[3], kNormBudgetC)};
}

Outcome selector_exactness() {
  std::size_t bad = 0;
  {
    auto [cfg, th] = build_linear_selector(8, {4});
    auto x = randn(8, 2);
    bad += hidden_state(cfg, th, x, cfg.depth)[0] != x[3];
  }
  Rng rng(2, "selector_instances");
  for (std::size_t t = 0; t < 100; ++t) {
    std::size_t d = std::size_t{2} << rng.below(12);
    std::size_t k = 1 + rng.below(std::min<std::size_t>(8, d));
    IndexSet I;
    while (I.size() < k) {
      std::size_t v = 1 + rng.below(d);
      if (std::find(I.begin(), I.end(), v) == I.end())
        I.push_back(v);
    }
    std::sort(I.begin(), I.end());
    auto [cfg, th] = build_linear_selector(d, I);
    auto x = randn(d, 3, t);
    Tensor z = hidden_state(cfg, th, x, cfg.depth);
    for (std::size_t j = 0; j < k; ++j)
      bad += z[j] != x[I[j] - 1];
  }
  return {bad == 0, fmt::format("{} mismatched coordinates over 101 instances", bad)};
}

Outcome universality_path() {
  std::size_t d = 8, D = 32, m = 64;
  auto v = randn(m * (D + 2), 4);
  TwoLayerNet g;
  g.m = m;
  g.k = D;
  g.a.assign(v.begin(), v.begin() + m);
  g.c.assign(v.begin() + m, v.begin() + 2 * m);
  g.U.assign(v.begin() + 2 * m, v.end());
  auto [cfg, th] = build_two_layer_sim(d, g);
  double gap = 0.0;
  for (std::size_t s = 0; s < 10000; ++s) {
    auto x = randn(D, 5, s);
    double ref = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double z = v[m + j];
      for (std::size_t i = 0; i < D; ++i)
        z += v[2 * m + j * D + i] * x[i];
      ref += v[j] * std::max(z, 0.0);
    }
    gap = std::max(gap, std::abs(forward(cfg, th, x) - ref));
  }
  auto [ecfg, eth] = build_universal_feature_extractor(d);
  std::size_t bad = 0;
  for (std::size_t s = 0; s < 100; ++s) {
    auto x = randn(D, 6, s);
    Tensor z = hidden_state(ecfg, eth, x, ecfg.depth);
    for (std::size_t row = 0; row < 2; ++row)
      for (std::size_t i = 0; i < 2 * d; ++i) {
        double xi = x[row * 2 * d + i];
        bad += z[row * D + 2 * i] != std::max(xi, 0.0);
        bad += z[row * D + 2 * i + 1] != std::max(-xi, 0.0);
      }
  }
  return {gap <= 1e-10 && bad == 0,
          fmt::format("sup gap {:.3g}; extractor mismatches {}", gap, bad)};
}

Outcome distance_laws() {
  std::size_t threads = default_threads(), n = 100000, d = 64;
  double inf = INFINITY, dd = static_cast<double>(d);
  bool ok = true;
  std::string detail;
  for (std::size_t s : {1, 8, 32}) {
    double sd = static_cast<double>(s), target = 64.0 * sd / dd;
    Estimate e = lcn_distance(d, s, inf, n, 10 + s, threads);
    bool p1 = std::abs(e.value - target) <= 3.0 * e.se;
    Estimate t = lcn_distance(d, s, 10.0, n, 20 + s, threads);
    bool p2 = t.value >= 63.0 * sd / dd - 3.0 * t.se && t.value <= target + 3.0 * t.se;
    ok = ok && p1 && p2;
    detail += fmt::format("s={}: {:.4f}+-{:.4f} vs {:.4f}{}, truncated {:.4f} in [{:.4f},{:.4f}]{}; ",
                          s, e.value, e.se, target, p1 ? "" : " FAIL", t.value,
                          63.0 * sd / dd, target, p2 ? "" : " FAIL");
  }
  for (std::uint64_t k = 0; k < 3; ++k) {
    Eigen::MatrixXd U = sample_haar_orthogonal(16, 30, 2 * k).Q;
    Eigen::MatrixXd U2 = sample_haar_orthogonal(16, 30, 2 * k + 1).Q;
    double target = 4.0 * (U - U2).squaredNorm() / 16.0;
    Estimate e = fcn_distance(U, U2, inf, n, 40 + k, threads);
    bool p = std::abs(e.value - target) <= 3.0 * e.se;
    ok = ok && p;
    detail += fmt::format("fcn {:.4f}+-{:.4f} vs {:.4f}{}; ", e.value, e.se, target, p ? "" : " FAIL");
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

Outcome equivariance_coupling() {
  EquivarianceSettings st;
  st.seed = 5;
  std::map<std::string, double> worst, least;
  for (const EquivarianceRow& r : run_equivariance(st)) {
    worst[r.test] = std::max(worst[r.test], r.deviation);
    least.try_emplace(r.test, INFINITY);
    least[r.test] = std::min(least[r.test], r.deviation);
  }
  double lcn = worst["lcn_adam_local"], fcn = worst["fcn_sgd_orthogonal"];
  double neg = least["fcn_adam_orthogonal_negative"];
  return {lcn <= 1e-6 && fcn <= 1e-6 && neg >= 1e-2,
          fmt::format("LCN+Adam max {:.3g}; FCN+SGD max {:.3g}; FCN+Adam min {:.3g}", lcn, fcn, neg)};
}

Outcome figure2() {
  Figure2Settings st;
  st.seed = 7;
  st.threads = default_threads();
  Figure2Result r = run_figure2(st);
  bool ok = true;
  std::string detail;
  for (const Figure2Summary& s : r.summary) {
    bool p = s.model == "cnn" ? s.ratio < 0.05 : s.ratio > 0.5;
    ok = ok && p;
    detail += fmt::format("{}/{} {:.3f}{}; ", s.target, s.model, s.ratio, p ? "" : " FAIL");
  }
  detail.resize(detail.size() - 2);
  return {ok && r.summary.size() == 6, "test MSE / Var(y): " + detail};
}

Outcome depth_invariants() {
  auto mixed = [](const ArchConfig& cfg, const Params& th, std::vector<double> x,
                  std::size_t i, std::size_t j, const std::vector<double>& v) {
    auto at = [&](double a, double b) {
      x[i] = a;
      x[j] = b;
      return forward(cfg, th, x);
    };
    return at(v[0], v[2]) - at(v[0], v[3]) - at(v[1], v[2]) + at(v[1], v[3]);
  };
  double strided = 0.0, plain = 0.0;
  std::size_t d = 8, D = 4 * d, L = 4;
  std::vector<std::size_t> ch(L + 1, 3);
  ch[0] = 1;
  ArchConfig cfg = ArchConfig::cnn(D, 2, ch, std::vector<Activation>(L, Activation::relu));
  for (std::size_t t = 0; t < 100; ++t) {
    Params th = initialize(cfg, InitScheme::gaussian(1.0), 700 + t);
    strided = std::max(strided, std::abs(mixed(cfg, th, randn(D, 8, t), 0, 2 * d, randn(4, 9, t))));
  }
  std::size_t Dn = 16, Ln = 14;
  std::vector<std::size_t> chn(Ln + 1, 2);
  chn[0] = 1;
  ArchConfig ns = ArchConfig::cnn_no_stride(Dn, 2, chn, std::vector<Activation>(Ln, Activation::relu));
  for (std::size_t t = 0; t < 100; ++t) {
    Params th = initialize(ns, InitScheme::gaussian(1.0), 900 + t);
    plain = std::max(plain, std::abs(mixed(ns, th, randn(Dn, 10, t), 0, Dn - 1, randn(4, 11, t))));
  }
  auto [sc, sth] = build_separation_cnn(d);
  double pos = std::abs(mixed(sc, sth, std::vector<double>(D, 0.0), 0, 2 * d, {1.0, 0.0, 1.0, 0.0}));
  return {strided <= 1e-9 && plain <= 1e-9 && pos > 1e-3,
          fmt::format("strided L=4 max {:.3g}; no-stride L=14 max {:.3g}; full-depth control {:.3g}",
                      strided, plain, pos)};
}

Outcome combinatorial_bounds() {
  std::size_t bad = 0;
  for (std::size_t n = 1; n <= 30; ++n)
    for (std::size_t m = 1; m <= n; ++m) {
      BinomSum r = binom_sum_bound(n, m);
      double bound = std::pow(std::exp(1.0) * static_cast<double>(n) / static_cast<double>(m),
                              static_cast<double>(m));
      bad += r.exact != pascal_sum(n, m) || !r.holds ||
             static_cast<double>(pascal_sum(n, m)) > bound * (1.0 + 1e-12);
    }
  std::size_t pack_bad = 0;
  for (std::size_t n = 1; n <= 12; ++n)
    for (std::size_t m = 1; m <= n; ++m) {
      double lb = hamming_packing_lb(n, static_cast<double>(m)).value;
      // any valid code bounds the packing number from below
      std::vector<std::uint32_t> code;
      for (std::uint32_t v = 0; v < (1U << n); ++v) {
        bool far = true;
        for (std::uint32_t c : code)
          far = far && static_cast<std::size_t>(std::popcount(v ^ c)) > m;
        if (far)
          code.push_back(v);
      }
      double brute = n <= 6 ? static_cast<double>(max_packing(n, m)) : static_cast<double>(code.size());
      pack_bad += lb > brute;
    }
  double c = semiloc_base_constant(), want = 2.0 / std::pow(5.0 * std::exp(1.0), 0.25);
  return {bad == 0 && pack_bad == 0 && std::abs(c - want) <= 1e-12,
          fmt::format("binomial failures {}; packing failures {}; semiloc |c - 2/(5e)^(1/4)| = {:.3g}",
                      bad, pack_bad, std::abs(c - want))};
}

Outcome sweep_scalings() {
  std::size_t threads = default_threads();
  SweepSettings lcn, fcn;
  lcn.family = Family::LCN;
  lcn.c = calibrate_distance_law(Family::LCN, 64, 100000, 12, threads).c;
  fcn.family = Family::FCN;
  fcn.c = calibrate_distance_law(Family::FCN, 16, 100000, 13, threads).c;
  SweepResult a = lower_bound_sweep(lcn), b = lower_bound_sweep(fcn);
  double worst = 0.0;
  for (SweepSettings st : {lcn, fcn}) {
    SweepResult base = lower_bound_sweep(st);
    st.sigma *= 2.0;
    SweepResult twice = lower_bound_sweep(st);
    for (std::size_t i = 0; i < base.rows.size(); ++i)
      worst = std::max(worst, std::abs(twice.rows[i].n_star / base.rows[i].n_star / 4.0 - 1.0));
  }
  bool ok = a.slope >= 0.8 && a.slope <= 1.2 && b.slope >= 1.8 && b.slope <= 2.2 && worst <= 0.1;
  return {ok, fmt::format("LCN slope {:.3f} (c={:.2f}); FCN slope {:.3f} (c={:.2f}); "
                          "sigma-doubling max deviation {:.4f}",
                          a.slope, lcn.c, b.slope, fcn.c, worst)};
}

Outcome gradient_correctness() {
  double worst = 0.0;
  for (Family f : {Family::CNN, Family::LCN, Family::FCN})
    for (std::uint64_t t = 0; t < 50; ++t) {
      std::vector<Activation> acts{t % 2 ? Activation::relu : Activation::relu2, Activation::relu,
                                   t % 3 ? Activation::relu2 : Activation::identity};
      ArchConfig cfg = f == Family::CNN   ? ArchConfig::cnn(8, 2, {1, 2, 3, 2}, acts)
                       : f == Family::LCN ? ArchConfig::lcn(8, 2, {1, 3, 2, 2}, acts)
                                          : ArchConfig::fcn(8, {8, 6, 4}, {acts[0], acts[1]});
      Params th = initialize(cfg, InitScheme::gaussian(0.6), 1000 + t);
      Tensor X({4, 8}, randn(32, 14, t));
      for (std::uint64_t k = 1; testing::kink_margin(cfg, th, X) < 1e-3; ++k)
        X = Tensor({4, 8}, randn(32, 14, t + 1000 * k));
      Tensor y({4}, randn(4, 15, t));
      worst = std::max(worst, testing::max_grad_error(cfg, th, X, y));
    }
  return {worst <= 1e-5, fmt::format("max relative error {:.3g} over 150 nets", worst)};
}

} // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
    {"construction exactness", construction_exactness},
    {"selector exactness", selector_exactness},
    {"universality path", universality_path},
    {"distance laws", distance_laws},
    {"equivariance coupling", equivariance_coupling},
    {"figure2 sparse-target ordering", figure2},
    {"depth lower-bound invariants", depth_invariants},
    {"combinatorial bounds", combinatorial_bounds},
    {"lower-bound sweep scalings", sweep_scalings},
    {"gradient correctness", gradient_correctness},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    fmt::print("{} [{}] {}: {} ({:.1f}s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
               o.detail, secs);
    std::fflush(stdout);
  }
  fmt::print("{}/{} criteria passed\n", criteria.size() - static_cast<std::size_t>(failed),
             criteria.size());
  return failed == 0 ? 0 : 1;
}
