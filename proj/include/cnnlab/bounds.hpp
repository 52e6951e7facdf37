// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cnnlab/nets.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace cnnlab {

using BigInt = boost::multiprecision::cpp_int;

struct BinomSum {
  BigInt exact;       // sum_{k<=m} C(n, k)
  double log_exact = 0.0;
  double log_bound = 0.0; // m log(e n / m)
  double bound = 0.0;     // (e n / m)^m, inf when it overflows
  bool holds = false;
};

BinomSum binom_sum_bound(std::size_t n, std::size_t m);

// sum_{k<=m} C(n, k) exactly
BigInt binom_sum(std::size_t n, std::size_t m);
// log of the same sum through lgamma and log-sum-exp
double log_binom_sum(std::size_t n, std::size_t m);
double log_big(const BigInt& v);

struct PackingLowerBound {
  BigInt num; // 2^n
  BigInt den; // sum_{k<=floor(m)} C(n, k)
  double value = 0.0;
  double log_value = 0.0;
};

// volume bound for codes with pairwise Hamming distance > m
PackingLowerBound hamming_packing_lb(std::size_t n, double m);

// lexicographic greedy code with pairwise distance > m; n <= 24
std::vector<std::uint32_t> greedy_hamming_packing(std::size_t n, double m);

// 2 / (5e)^{1/4}
double semiloc_base_constant();
// log of 2^d / sum_{k<=floor(d/4)} C(d, k)
double semiloc_log_packing(std::size_t d);

// |mu1 - mu2|^2 / (2 sigma^2)
double gaussian_kl(double mu1, double mu2, double sigma);

// A (1 - n/(2 sigma^2 M^2 log M) sum_jj' d_jj' - log2/log M), clipped at 0;
// pairwise_l2 holds squared L2 distances, row-major M x M
double fano_bound(std::size_t M, double A, const std::vector<double>& pairwise_l2,
                  double n, double sigma);

// same bound with the average distance replaced by its supremum and
// log M supplied directly, for packings too large to enumerate
double fano_bound_log(double log_M, double A, double sup_l2, double n,
                      double sigma);

struct BoundEntry {
  std::string name;
  double value = 0.0;
  std::string formula;
};

struct BoundReport {
  std::vector<BoundEntry> entries;

  void add(std::string name, double value, std::string formula);
  double get(const std::string& name) const;
  // every entry finite and tagged with a formula identifier
  void validate() const;
};

struct SweepRow {
  std::size_t d = 0;
  double log_M = 0.0;
  double A = 0.0;
  double sup_l2 = 0.0;
  double n_star = 0.0;
};

struct SweepSettings {
  Family family = Family::LCN;
  std::vector<std::size_t> dims{16, 32, 64, 128, 256, 512};
  double sigma = 100.0;
  double eps_frac = 0.5; // eps0 = eps_frac * A
  // distance-law constant: c s/d for LCN, c ||U-U'||_F^2/d for FCN
  double c = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double slope = 0.0;
  BoundReport report;
};

// smallest n with fano_bound_log(...) < eps_frac * A for each d, and the
// least-squares slope of log n* against log d
SweepResult lower_bound_sweep(const SweepSettings& st);

struct Calibration {
  double c = 0.0;
  double c_alt = 0.0; // second probe of the law
  double se = 0.0;
  bool constant = false;
};

// estimates c from Monte Carlo distances at one reference d, untruncated,
// and checks it against a second configuration
Calibration calibrate_distance_law(Family family, std::size_t d_ref,
                                   std::size_t n, std::uint64_t seed,
                                   std::size_t threads = 1);

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct CoveringBound {
  double M_hat = 0.0;
  double gamma_hat = 0.0; // M_hat J (1+J)^L
  std::size_t N = 0;
  double log_value = 0.0; // N log(3 gamma_hat / t)
};

// sample is {n, input_dim}; t must lie in (0, gamma_hat]
CoveringBound covering_bound(const ArchConfig& cfg, double J, double t,
                             const Tensor& sample);

struct ExcessRiskInputs {
  double eps_star = 0.0;
  double M_star = 0.0;
  double A = 1.0;
  double B = 3.0;
  double lambda = 0.0;
  double delta = 0.1;
  double n = 1.0;
  double p = 1.0;
  std::function<double(double)> gamma;
  double alpha = 1.0;
  double sigma = 1.0;
};

struct ExcessRiskTerms {
  double truncation = 0.0;
  double regularization = 0.0;
  double capacity = 0.0;
  double confidence = 0.0;
  double U_lambda = 0.0;
  double total = 0.0;
};

ExcessRiskTerms excess_risk_terms(const ExcessRiskInputs& in);
double excess_risk_bound(const ExcessRiskInputs& in);

// h(x++) - h(x+0) - h(x0+) + h(x00) over the coordinates (i, j), 0-based
double mixed_difference(const ArchConfig& cfg, const Params& theta,
                        std::span<const double> x, std::size_t i, std::size_t j,
                        double a, double a2, double b, double b2);

// coordinate pair used by the depth test: (0, D/2) strided, (0, D-1) no-stride
std::pair<std::size_t, std::size_t> depth_test_pair(const ArchConfig& cfg);
// rejects architectures whose receptive field can reach both coordinates
void check_depth_threshold(const ArchConfig& cfg);

// max mixed difference over random Gaussian theta and inputs
double depth_decomposition_test(const ArchConfig& cfg, std::size_t trials,
                                std::uint64_t seed, double init_scale = 1.0);

} // namespace cnnlab
