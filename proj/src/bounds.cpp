// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/bounds.hpp>

#include <cnnlab/rng.hpp>
#include <cnnlab/symmetry.hpp>
#include <cnnlab/training.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

namespace cnnlab {

BigInt binom_sum(std::size_t n, std::size_t m) {
  BigInt term = 1, acc = 1;
  for (std::size_t k = 1; k <= std::min(m, n); ++k) {
    term = term * (n - k + 1) / k;
    acc += term;
  }
  return acc;
}

double log_big(const BigInt& v) {
  if (v <= 0)
    return -std::numeric_limits<double>::infinity();
  std::size_t bits = boost::multiprecision::msb(v);
  std::size_t shift = bits > 60 ? bits - 60 : 0;
  BigInt top = v >> shift;
  return std::log(top.convert_to<double>()) +
         static_cast<double>(shift) * std::numbers::ln2;
}

double log_binom_sum(std::size_t n, std::size_t m) {
  m = std::min(m, n);
  double ln = std::lgamma(static_cast<double>(n) + 1.0);
  std::vector<double> terms(m + 1);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k <= m; ++k) {
    terms[k] = ln - std::lgamma(static_cast<double>(k) + 1.0) -
               std::lgamma(static_cast<double>(n - k) + 1.0);
    mx = std::max(mx, terms[k]);
  }
  double acc = 0.0;
  for (double t : terms)
    acc += std::exp(t - mx);
  return mx + std::log(acc);
}

BinomSum binom_sum_bound(std::size_t n, std::size_t m) {
  if (m < 1 || m > n)
    throw std::invalid_argument(
      fmt::format("binom_sum_bound: need 1 <= m <= n, got n={} m={}", n, m));
  BinomSum out;
  out.exact = binom_sum(n, m);
  out.log_exact = log_big(out.exact);
  double md = static_cast<double>(m);
  out.log_bound = md * std::log(std::numbers::e * static_cast<double>(n) / md);
  out.bound = std::exp(out.log_bound);
  if (std::isfinite(out.bound) && out.log_exact < 700.0)
    out.holds = out.exact.convert_to<double>() <= out.bound * (1.0 + 1e-14);
  else
    out.holds = out.log_exact <= out.log_bound + 1e-12;
  return out;
}

PackingLowerBound hamming_packing_lb(std::size_t n, double m) {
  if (!(m > 0.0) || m > static_cast<double>(n))
    throw std::invalid_argument(
      fmt::format("hamming_packing_lb: need 0 < m <= n, got n={} m={}", n, m));
  PackingLowerBound out;
  out.num = BigInt(1) << n;
  out.den = binom_sum(n, static_cast<std::size_t>(std::floor(m)));
  out.log_value = log_big(out.num) - log_big(out.den);
  out.value = std::exp(out.log_value);
  return out;
}

std::vector<std::uint32_t> greedy_hamming_packing(std::size_t n, double m) {
  if (n == 0 || n > 20)
    throw std::invalid_argument(
      fmt::format("greedy_hamming_packing: n={} outside 1..20", n));
  std::vector<std::uint32_t> code;
  std::uint32_t total = std::uint32_t{1} << n;
  for (std::uint32_t w = 0; w < total; ++w) {
    bool ok = true;
    for (std::uint32_t c : code)
      if (static_cast<double>(std::popcount(w ^ c)) <= m) {
        ok = false;
        break;
      }
    if (ok)
      code.push_back(w);
  }
  return code;
}

double semiloc_base_constant() {
  return 2.0 / std::pow(5.0 * std::numbers::e, 0.25);
}

double semiloc_log_packing(std::size_t d) {
  if (d == 0)
    throw std::invalid_argument("semiloc_log_packing: d must be >= 1");
  double lnum = static_cast<double>(d) * std::numbers::ln2;
  if (d <= 64)
    return lnum - log_big(binom_sum(d, d / 4));
  return lnum - log_binom_sum(d, d / 4);
}

double gaussian_kl(double mu1, double mu2, double sigma) {
  if (!(sigma > 0.0))
    throw std::invalid_argument("gaussian_kl: sigma must be positive");
  double g = mu1 - mu2;
  return g * g / (2.0 * sigma * sigma);
}

double fano_bound(std::size_t M, double A, const std::vector<double>& d,
                  double n, double sigma) {
  if (M < 2)
    throw std::invalid_argument("fano_bound: M must be >= 2");
  if (!(sigma > 0.0) || !(A > 0.0) || !(n >= 0.0))
    throw std::invalid_argument("fano_bound: need sigma > 0, A > 0, n >= 0");
  if (d.size() != M * M)
    throw std::invalid_argument(
      fmt::format("fano_bound: {} distances for M={}", d.size(), M));
  double sum = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    if (d[i * M + i] != 0.0)
      throw std::invalid_argument("fano_bound: nonzero diagonal");
    for (std::size_t j = 0; j < M; ++j) {
      double v = d[i * M + j];
      if (!(v >= 0.0) || std::abs(v - d[j * M + i]) > 1e-12 * (1.0 + v))
        throw std::invalid_argument("fano_bound: distances must be symmetric");
      if (i != j && 4.0 * A > v * (1.0 + 1e-12))
        throw std::invalid_argument(fmt::format(
          "fano_bound: pair ({}, {}) at distance {} violates 4A = {}", i, j, v,
          4.0 * A));
      sum += v;
    }
  }
  double Md = static_cast<double>(M);
  double logM = std::log(Md);
  double val = A * (1.0 - n / (2.0 * sigma * sigma * Md * Md * logM) * sum -
                    std::numbers::ln2 / logM);
  return std::max(0.0, val);
}

double fano_bound_log(double log_M, double A, double sup_l2, double n,
                      double sigma) {
  if (!(log_M >= std::numbers::ln2 * (1.0 - 1e-12)))
    throw std::invalid_argument("fano_bound_log: M must be >= 2");
  if (!(sigma > 0.0) || !(A > 0.0) || !(n >= 0.0) || !(sup_l2 >= 4.0 * A))
    throw std::invalid_argument(
      "fano_bound_log: need sigma > 0, A > 0, n >= 0, sup >= 4A");
  double val = A * (1.0 - n * sup_l2 / (2.0 * sigma * sigma * log_M) -
                    std::numbers::ln2 / log_M);
  return std::max(0.0, val);
}

void BoundReport::add(std::string name, double value, std::string formula) {
  entries.push_back({std::move(name), value, std::move(formula)});
}

double BoundReport::get(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name)
      return e.value;
  throw std::out_of_range(fmt::format("BoundReport: no entry '{}'", name));
}

void BoundReport::validate() const {
  for (const auto& e : entries)
    if (!std::isfinite(e.value) || e.formula.empty())
      throw std::runtime_error(
        fmt::format("BoundReport: entry '{}' = {} ({})", e.name, e.value,
                    e.formula.empty() ? "untagged" : e.formula));
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("loglog_slope: need two or more points");
  double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0))
      throw std::invalid_argument("loglog_slope: values must be positive");
    double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

SweepResult lower_bound_sweep(const SweepSettings& st) {
  if (st.family == Family::CNN)
    throw std::invalid_argument("lower_bound_sweep: family must be LCN or FCN");
  if (!(st.c > 0.0) || !(st.sigma > 0.0) || !(st.eps_frac > 0.0) ||
      !(st.eps_frac < 1.0))
    throw std::invalid_argument(
      "lower_bound_sweep: need c > 0, sigma > 0, eps_frac in (0,1)");
  if (st.dims.size() < 2)
    throw std::invalid_argument("lower_bound_sweep: need two or more dims");
  SweepResult res;
  std::vector<double> xs, ys;
  for (std::size_t d : st.dims) {
    SweepRow row;
    row.d = d;
    double dd = static_cast<double>(d);
    if (st.family == Family::LCN) {
      if (d < 4)
        throw std::invalid_argument("lower_bound_sweep: LCN needs d >= 4");
      row.log_M = semiloc_log_packing(d);
      double m = std::floor(dd / 4.0);
      row.A = st.c * (m + 1.0) / dd / 4.0;
      row.sup_l2 = st.c;
    } else {
      if (d < 2)
        throw std::invalid_argument("lower_bound_sweep: FCN needs d >= 2");
      row.log_M = dd * (dd - 1.0) / 2.0 * std::numbers::ln2;
      row.A = st.c / 16.0;
      row.sup_l2 = 4.0 * st.c;
    }
    double eps0 = st.eps_frac * row.A;
    double r = (1.0 - st.eps_frac - std::numbers::ln2 / row.log_M) * 2.0 *
               st.sigma * st.sigma * row.log_M / row.sup_l2;
    double n = std::max(1.0, std::floor(r) + 1.0);
    auto fb = [&](double nn) {
      return fano_bound_log(row.log_M, row.A, row.sup_l2, nn, st.sigma);
    };
    while (fb(n) >= eps0)
      n += 1.0;
    while (n > 1.0 && fb(n - 1.0) < eps0)
      n -= 1.0;
    row.n_star = n;
    xs.push_back(dd);
    ys.push_back(n);
    std::string tag = st.family == Family::LCN ? "fano_semiloc" : "fano_orthogonal";
    res.report.add(fmt::format("n_star_d{}", d), n, tag);
    res.report.add(fmt::format("log_M_d{}", d), row.log_M,
                   st.family == Family::LCN ? "hamming_volume" : "orthogonal_packing");
    res.rows.push_back(row);
  }
  res.slope = loglog_slope(xs, ys);
  res.report.add("slope", res.slope, "loglog_least_squares");
  res.report.validate();
  return res;
}

Calibration calibrate_distance_law(Family family, std::size_t d_ref,
                                   std::size_t n, std::uint64_t seed,
                                   std::size_t threads) {
  Calibration cal;
  double inf = std::numeric_limits<double>::infinity();
  double dd = static_cast<double>(d_ref);
  if (family == Family::LCN) {
    if (d_ref < 8)
      throw std::invalid_argument("calibrate_distance_law: LCN needs d_ref >= 8");
    std::size_t s1 = d_ref / 2, s2 = d_ref / 8;
    Estimate e1 = lcn_distance(d_ref, s1, inf, n, seed, threads);
    Estimate e2 = lcn_distance(d_ref, s2, inf, n, seed + 1, threads);
    cal.c = e1.value * dd / static_cast<double>(s1);
    cal.se = e1.se * dd / static_cast<double>(s1);
    cal.c_alt = e2.value * dd / static_cast<double>(s2);
  } else if (family == Family::FCN) {
    Eigen::MatrixXd U = sample_haar_orthogonal(d_ref, seed, 0).Q;
    Eigen::MatrixXd U2 = sample_haar_orthogonal(d_ref, seed, 1).Q;
    Eigen::MatrixXd U3 = Eigen::MatrixXd::Identity(U.rows(), U.cols());
    double f12 = (U - U2).squaredNorm(), f13 = (U - U3).squaredNorm();
    Estimate e1 = fcn_distance(U, U2, inf, n, seed, threads);
    Estimate e2 = fcn_distance(U, U3, inf, n, seed + 1, threads);
    cal.c = e1.value * dd / f12;
    cal.se = e1.se * dd / f12;
    cal.c_alt = e2.value * dd / f13;
  } else {
    throw std::invalid_argument("calibrate_distance_law: family must be LCN or FCN");
  }
  cal.constant = std::abs(cal.c - cal.c_alt) <= 0.1 * std::abs(cal.c);
  return cal;
}

CoveringBound covering_bound(const ArchConfig& cfg, double J, double t,
                             const Tensor& sample) {
  cfg.validate();
  if (!(J > 0.0))
    throw std::invalid_argument("covering_bound: J must be positive");
  if (sample.rank() != 2 || sample.dim(1) != cfg.input_dim || sample.dim(0) == 0)
    throw std::invalid_argument("covering_bound: sample must be n x input_dim");
  std::size_t n = sample.dim(0), D = cfg.input_dim;
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    std::span<const double> x(sample.values.data() + r * D, D);
    double qbar = 1.0;
    for (double q : activation_lipschitz(cfg, x, J))
      qbar *= q + 1.0;
    double xn = 0.0;
    for (double v : x)
      xn += v * v;
    double f = qbar * (std::sqrt(xn) + 1.0);
    acc += f * f;
  }
  CoveringBound out;
  out.M_hat = std::sqrt(acc / static_cast<double>(n));
  out.gamma_hat =
    out.M_hat * J * std::pow(1.0 + J, static_cast<double>(cfg.depth));
  if (!(t > 0.0) || t > out.gamma_hat)
    throw std::invalid_argument(fmt::format(
      "covering_bound: t={} outside (0, {}]", t, out.gamma_hat));
  out.N = param_count(cfg);
  out.log_value = static_cast<double>(out.N) * std::log(3.0 * out.gamma_hat / t);
  return out;
}

ExcessRiskTerms excess_risk_terms(const ExcessRiskInputs& in) {
  if (!(in.B > 2.0 * in.A) || !(in.A > 0.0))
    throw std::invalid_argument(
      fmt::format("excess_risk_bound: need B > 2A > 0, got A={} B={}", in.A, in.B));
  if (!(in.delta > 0.0 && in.delta < 0.5))
    throw std::invalid_argument("excess_risk_bound: delta must lie in (0, 1/2)");
  if (!(in.lambda > 0.0) || !(in.n > 0.0) || !(in.p > 0.0) ||
      !(in.alpha > 0.0) || !(in.sigma >= 0.0) || !(in.M_star >= 0.0) ||
      !(in.eps_star >= 0.0) || !in.gamma)
    throw std::invalid_argument("excess_risk_bound: invalid inputs");
  ExcessRiskTerms t;
  double gap = in.B - 2.0 * in.A;
  double s = in.sigma;
  t.truncation = s > 0.0 ? s * s * s * in.B / (gap * gap) *
                             std::exp(-gap * gap / (2.0 * s * s))
                         : 0.0;
  t.regularization = in.lambda * in.M_star;
  double B2 = in.B * in.B;
  t.U_lambda = (in.eps_star + s * s +
                B2 * std::sqrt(2.0 * std::log(2.0 / in.delta) / in.n)) /
                 (2.0 * in.lambda) +
               in.M_star;
  double gam = in.gamma(t.U_lambda / in.alpha);
  t.capacity = B2 * std::sqrt(in.p * std::log(in.B * gam + 3.0) / in.n);
  t.confidence = B2 * std::sqrt(std::log(4.0 / in.delta) / in.n);
  t.total = t.truncation + t.regularization + t.capacity + t.confidence;
  return t;
}

double excess_risk_bound(const ExcessRiskInputs& in) {
  return excess_risk_terms(in).total;
}

double mixed_difference(const ArchConfig& cfg, const Params& theta,
                        std::span<const double> x, std::size_t i, std::size_t j,
                        double a, double a2, double b, double b2) {
  if (x.size() != cfg.input_dim || i >= x.size() || j >= x.size() || i == j)
    throw std::invalid_argument("mixed_difference: bad coordinates");
  std::vector<double> z(x.begin(), x.end());
  auto h = [&](double u, double v) {
    z[i] = u;
    z[j] = v;
    return forward(cfg, theta, z);
  };
  return h(a, b) - h(a, b2) - h(a2, b) + h(a2, b2);
}

std::pair<std::size_t, std::size_t> depth_test_pair(const ArchConfig& cfg) {
  if (cfg.no_stride)
    return {0, cfg.input_dim - 1};
  return {0, cfg.input_dim / 2};
}

void check_depth_threshold(const ArchConfig& cfg) {
  cfg.validate();
  if (cfg.family == Family::FCN)
    throw std::invalid_argument(
      "depth test: a fully-connected network sees every coordinate");
  std::size_t D = cfg.input_dim;
  if (cfg.no_stride) {
    std::size_t field = cfg.depth * (cfg.stride - 1) + 1;
    if (field > D - 1)
      throw std::invalid_argument(fmt::format(
        "depth test: receptive field {} reaches coordinates 1 and {}", field, D));
    return;
  }
  std::size_t field = D / cfg.spatial(cfg.depth);
  if (D % 2 != 0 || field > D / 2)
    throw std::invalid_argument(fmt::format(
      "depth test: receptive field {} exceeds half of input_dim {}", field, D));
}

double depth_decomposition_test(const ArchConfig& cfg, std::size_t trials,
                                std::uint64_t seed, double init_scale) {
  check_depth_threshold(cfg);
  auto [i, j] = depth_test_pair(cfg);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Params theta = initialize(cfg, InitScheme::gaussian(init_scale), seed, t);
    Rng rng(seed, "depth_probe", t);
    std::vector<double> x(cfg.input_dim);
    for (double& v : x)
      v = rng.normal();
    double a = rng.normal(), a2 = rng.normal();
    double b = rng.normal(), b2 = rng.normal();
    worst = std::max(worst,
                     std::abs(mixed_difference(cfg, theta, x, i, j, a, a2, b, b2)));
  }
  return worst;
}

} // namespace cnnlab
