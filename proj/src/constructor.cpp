// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/constructor.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace cnnlab {

double TwoLayerNet::unit(std::size_t j, std::span<const double> x) const {
  std::span<const double> w = u(j);
  double acc = c[j];
  for (std::size_t i = 0; i < k; ++i)
    acc += w[i] * x[i];
  return relu(acc);
}

double TwoLayerNet::operator()(std::span<const double> x) const {
  if (x.size() != k)
    throw std::invalid_argument(
      fmt::format("TwoLayerNet: input of length {} for k={}", x.size(), k));
  double acc = 0.0;
  for (std::size_t j = 0; j < m; ++j)
    acc += a[j] * unit(j, x);
  return acc;
}

void TwoLayerNet::check() const {
  if (m == 0 || k == 0 || a.size() != m || c.size() != m || U.size() != m * k)
    throw std::invalid_argument(fmt::format(
      "TwoLayerNet: m={} k={} |a|={} |U|={} |c|={}", m, k, a.size(), U.size(),
      c.size()));
}

void check_index_set(const IndexSet& I, std::size_t input_dim) {
  if (I.empty())
    throw std::invalid_argument("index set is empty");
  for (std::size_t t = 0; t < I.size(); ++t) {
    if (I[t] < 1 || I[t] > input_dim)
      throw std::invalid_argument(
        fmt::format("index {} outside [1, {}]", I[t], input_dim));
    if (t > 0 && I[t] <= I[t - 1])
      throw std::invalid_argument("index set must be strictly increasing");
  }
}

std::size_t exact_log2(std::size_t n, const char* what) {
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument(
      fmt::format("{}: {} is not a power of two", what, n));
  std::size_t L = 0;
  while ((std::size_t{1} << L) < n)
    ++L;
  return L;
}

namespace {

// binary digit l of i - 1
double digit(std::size_t i, std::size_t l) {
  return static_cast<double>(((i - 1) >> l) & 1U);
}

// W[co, ci, 0..1] = scale * (1 - a, a)
void set_pick(Tensor& W, std::size_t Cin, std::size_t co, std::size_t ci,
              double a, double scale) {
  W[(co * Cin + ci) * 2 + 0] = scale * (1.0 - a);
  W[(co * Cin + ci) * 2 + 1] = scale * a;
}

void set_filter(Tensor& W, std::size_t Cin, std::size_t co, std::size_t ci,
                double w0, double w1) {
  W[(co * Cin + ci) * 2 + 0] = w0;
  W[(co * Cin + ci) * 2 + 1] = w1;
}

} // namespace

Built build_linear_selector(std::size_t d, const IndexSet& I) {
  std::size_t L = exact_log2(d, "build_linear_selector");
  if (L == 0)
    throw std::invalid_argument("build_linear_selector: d must be >= 2");
  check_index_set(I, d);
  std::size_t k = I.size();
  std::vector<std::size_t> ch(L + 1, k);
  ch[0] = 1;
  ArchConfig cfg = ArchConfig::cnn(
    d, 2, ch, std::vector<Activation>(L, Activation::identity));
  Params p = Params::zeros(cfg);
  for (std::size_t l = 1; l <= L; ++l)
    for (std::size_t j = 0; j < k; ++j)
      set_pick(p.W[l - 1], ch[l - 1], j, l == 1 ? 0 : j, digit(I[j], l - 1),
               1.0);
  return {cfg, p};
}

Built build_relu_selector(std::size_t d, const IndexSet& I,
                          const TwoLayerNet& feats) {
  if (d == 0)
    throw std::invalid_argument("build_relu_selector: d must be positive");
  std::size_t D = 4 * d;
  std::size_t L = exact_log2(D, "build_relu_selector (4d)");
  check_index_set(I, D);
  feats.check();
  std::size_t k = I.size(), m = feats.m;
  if (feats.k != k)
    throw std::invalid_argument(fmt::format(
      "build_relu_selector: net over {} inputs for |I|={}", feats.k, k));
  std::vector<std::size_t> ch(L + 1, 2 * k);
  ch[0] = 1;
  ch[L] = m;
  ArchConfig cfg = ArchConfig::cnn(
    D, 2, ch, std::vector<Activation>(L, Activation::relu));
  Params p = Params::zeros(cfg);
  for (std::size_t j = 0; j < k; ++j) {
    set_pick(p.W[0], 1, 2 * j, 0, digit(I[j], 0), 1.0);
    set_pick(p.W[0], 1, 2 * j + 1, 0, digit(I[j], 0), -1.0);
  }
  for (std::size_t l = 2; l < L; ++l) {
    Tensor& W = p.W[l - 1];
    std::size_t Cin = ch[l - 1];
    for (std::size_t j = 0; j < k; ++j) {
      double a = digit(I[j], l - 1);
      set_pick(W, Cin, 2 * j, 2 * j, a, 1.0);
      set_pick(W, Cin, 2 * j, 2 * j + 1, a, -1.0);
      set_pick(W, Cin, 2 * j + 1, 2 * j, a, -1.0);
      set_pick(W, Cin, 2 * j + 1, 2 * j + 1, a, 1.0);
    }
  }
  Tensor& WL = p.W[L - 1];
  std::size_t Cin = ch[L - 1];
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t q = 0; q < k; ++q) {
      double a = digit(I[q], L - 1);
      double w = feats.u(j)[q];
      set_pick(WL, Cin, j, 2 * q, a, w);
      set_pick(WL, Cin, j, 2 * q + 1, a, -w);
    }
    p.b[L - 1][j] = feats.c[j];
  }
  return {cfg, p};
}

namespace {

// extractor layers written into the first L-1 layers of (cfg, p)
void write_extractor(std::size_t L, Params& p) {
  // layer 1: value q=1 is the first patch element, q=2 the second
  set_filter(p.W[0], 1, 0, 0, 1.0, 0.0);
  set_filter(p.W[0], 1, 1, 0, -1.0, 0.0);
  set_filter(p.W[0], 1, 2, 0, 0.0, 1.0);
  set_filter(p.W[0], 1, 3, 0, 0.0, -1.0);
  for (std::size_t l = 2; l <= L - 1; ++l) {
    std::size_t half = std::size_t{1} << (l - 1);
    std::size_t Cin = 2 * half;
    Tensor& W = p.W[l - 1];
    for (std::size_t q = 0; q < 2 * half; ++q) {
      std::size_t src = q < half ? q : q - half;
      double w0 = q < half ? 1.0 : 0.0;
      double w1 = q < half ? 0.0 : 1.0;
      // value = relu(+v) - relu(-v) of the source pair
      set_filter(W, Cin, 2 * q, 2 * src, w0, w1);
      set_filter(W, Cin, 2 * q, 2 * src + 1, -w0, -w1);
      set_filter(W, Cin, 2 * q + 1, 2 * src, -w0, -w1);
      set_filter(W, Cin, 2 * q + 1, 2 * src + 1, w0, w1);
    }
  }
}

std::vector<std::size_t> extractor_channels(std::size_t L) {
  std::vector<std::size_t> ch(L, 0);
  ch[0] = 1;
  for (std::size_t l = 1; l < L; ++l)
    ch[l] = std::size_t{1} << (l + 1);
  return ch;
}

} // namespace

Built build_universal_feature_extractor(std::size_t d) {
  if (d == 0)
    throw std::invalid_argument("feature extractor: d must be positive");
  std::size_t L = exact_log2(4 * d, "feature extractor (4d)");
  std::vector<std::size_t> ch = extractor_channels(L);
  ArchConfig cfg = ArchConfig::cnn(
    4 * d, 2, ch, std::vector<Activation>(L - 1, Activation::relu));
  Params p = Params::zeros(cfg);
  write_extractor(L, p);
  return {cfg, p};
}

Built build_two_layer_sim(std::size_t d, const TwoLayerNet& net) {
  net.check();
  if (d == 0)
    throw std::invalid_argument("two_layer_sim: d must be positive");
  std::size_t D = 4 * d;
  if (net.k != D)
    throw std::invalid_argument(fmt::format(
      "two_layer_sim: net over {} inputs for input_dim {}", net.k, D));
  std::size_t L = exact_log2(D, "two_layer_sim (4d)");
  std::vector<std::size_t> ch = extractor_channels(L);
  ch.push_back(net.m);
  ArchConfig cfg =
    ArchConfig::cnn(D, 2, ch, std::vector<Activation>(L, Activation::relu));
  Params p = Params::zeros(cfg);
  write_extractor(L, p);
  Tensor& WL = p.W[L - 1];
  std::size_t Cin = ch[L - 1];
  std::size_t half = 2 * d;
  for (std::size_t j = 0; j < net.m; ++j) {
    std::span<const double> u = net.u(j);
    for (std::size_t q = 0; q < half; ++q) {
      set_filter(WL, Cin, j, 2 * q, u[q], u[q + half]);
      set_filter(WL, Cin, j, 2 * q + 1, -u[q], -u[q + half]);
    }
    p.b[L - 1][j] = net.c[j];
  }
  p.Wo.values = net.a;
  return {cfg, p};
}

namespace {

Built separation(std::size_t d) {
  if (d == 0)
    throw std::invalid_argument("separation CNN: d must be positive");
  std::size_t D = 4 * d;
  std::size_t L = exact_log2(D, "separation CNN (4d)");
  std::vector<std::size_t> ch(L + 1, 2);
  ch[0] = 1;
  ch[1] = 4;
  ch[L] = 4;
  std::vector<Activation> acts(L, Activation::relu);
  acts[0] = Activation::relu2;
  acts[L - 1] = Activation::relu2;
  ArchConfig cfg = ArchConfig::cnn(D, 2, ch, acts);
  Params p = Params::zeros(cfg);

  // layer 1: relu2(+-x_{2i-1}), relu2(+-x_{2i})
  set_filter(p.W[0], 1, 0, 0, 1.0, 0.0);
  set_filter(p.W[0], 1, 1, 0, -1.0, 0.0);
  set_filter(p.W[0], 1, 2, 0, 0.0, 1.0);
  set_filter(p.W[0], 1, 3, 0, 0.0, -1.0);

  // channel signs recovering the signed partial sum of a layer's output
  auto signs = [&](std::size_t l) {
    return l == 1 ? std::vector<double>{1.0, 1.0, -1.0, -1.0}
                  : std::vector<double>{1.0, -1.0};
  };
  for (std::size_t l = 2; l < L; ++l) {
    std::vector<double> g = signs(l - 1);
    for (std::size_t ci = 0; ci < g.size(); ++ci) {
      set_filter(p.W[l - 1], g.size(), 0, ci, g[ci], g[ci]);
      set_filter(p.W[l - 1], g.size(), 1, ci, -g[ci], -g[ci]);
    }
  }
  std::vector<double> g = signs(L - 1);
  for (std::size_t ci = 0; ci < g.size(); ++ci) {
    set_filter(p.W[L - 1], g.size(), 0, ci, g[ci], g[ci]);
    set_filter(p.W[L - 1], g.size(), 1, ci, -g[ci], -g[ci]);
    set_filter(p.W[L - 1], g.size(), 2, ci, g[ci], -g[ci]);
    set_filter(p.W[L - 1], g.size(), 3, ci, -g[ci], g[ci]);
  }
  double w = 1.0 / static_cast<double>(4 * d);
  p.Wo.values = {w, w, -w, -w};
  return {cfg, p};
}

} // namespace

Built build_separation_cnn(std::size_t d) { return separation(d); }

Built build_separation_lcn(std::size_t d) {
  auto [cfg, p] = separation(d);
  return embed_cnn_as_lcn(cfg, p);
}

Built assemble_sparse_cnn(std::size_t d, const IndexSet& I,
                          const TwoLayerNet& g) {
  auto [cfg, p] = build_relu_selector(d, I, g);
  for (std::size_t j = 0; j < g.m; ++j)
    p.Wo[j] = g.a[j] / static_cast<double>(g.m);
  return {cfg, p};
}

namespace {

double log_d(std::size_t d) { return std::log2(4.0 * static_cast<double>(d)); }

double sq_sum(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v)
    acc += x * x;
  return acc;
}

} // namespace

double relu_selector_norm_budget(std::size_t d, const TwoLayerNet& feats) {
  double k = static_cast<double>(feats.k);
  return kNormBudgetC *
         (std::sqrt(k) * log_d(d) + std::sqrt(sq_sum(feats.U)) +
          std::sqrt(sq_sum(feats.c)));
}

double sparse_cnn_norm_budget(std::size_t d, const TwoLayerNet& g) {
  double k = static_cast<double>(g.k), m = static_cast<double>(g.m);
  double abs_a = 0.0;
  for (double a : g.a)
    abs_a += std::abs(a);
  return kNormBudgetC * (std::sqrt(k) * log_d(d) + m + abs_a / m);
}

} // namespace cnnlab
