// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/bounds.hpp>
#include <cnnlab/constructor.hpp>
#include <cnnlab/rng.hpp>
#include <cnnlab/tasks.hpp>

#include <bit>
#include <cmath>
#include <stdexcept>
#include <functional>

#include <doctest.h>

using namespace cnnlab;

namespace {

// Pascal-triangle sums in unsigned 64-bit arithmetic, exact for n <= 62
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

// size of the largest code in {0,1}^n with pairwise distance > m, by
// branch and bound over candidate sets
std::size_t max_packing(std::size_t n, std::size_t m) {
  std::size_t N = std::size_t{1} << n, best = 0;
  std::function<void(std::vector<std::uint32_t>&, std::size_t)> rec =
    [&](std::vector<std::uint32_t>& c, std::size_t size) {
      if (size + c.size() <= best)
        return;
      if (c.empty()) {
        best = size;
        return;
      }
      std::uint32_t v = c.front();
      std::vector<std::uint32_t> keep;
      for (std::size_t i = 1; i < c.size(); ++i)
        if (static_cast<std::size_t>(std::popcount(c[i] ^ v)) > m)
          keep.push_back(c[i]);
      rec(keep, size + 1);
      std::vector<std::uint32_t> rest(c.begin() + 1, c.end());
      rec(rest, size);
    };
  // the code can always be translated to contain 0
  std::vector<std::uint32_t> c;
  for (std::size_t i = 1; i < N; ++i)
    if (static_cast<std::size_t>(std::popcount(static_cast<unsigned>(i))) > m)
      c.push_back(static_cast<std::uint32_t>(i));
  rec(c, 1);
  return best;
}

} // namespace

TEST_CASE("binomial sums and their bound") {
  BinomSum nn = binom_sum_bound(10, 10);
  CHECK(nn.exact == 1024);
  CHECK(nn.holds);
  BinomSum b = binom_sum_bound(4, 1);
  CHECK(b.exact == 5);
  CHECK(b.bound == doctest::Approx(4.0 * std::exp(1.0)).epsilon(1e-12));
  for (std::size_t n = 1; n <= 30; ++n)
    for (std::size_t m = 1; m <= n; ++m) {
      BinomSum r = binom_sum_bound(n, m);
      CHECK(r.exact == pascal_sum(n, m));
      CHECK(r.holds);
      CHECK(r.exact.convert_to<double>() <=
            std::pow(std::exp(1.0) * static_cast<double>(n) / static_cast<double>(m),
                     static_cast<double>(m)) * (1 + 1e-12));
      CHECK(log_binom_sum(n, m) == doctest::Approx(std::log(static_cast<double>(pascal_sum(n, m)))).epsilon(1e-10));
    }
  CHECK_THROWS_AS(binom_sum_bound(3, 4), std::invalid_argument);
  CHECK_THROWS_AS(binom_sum_bound(3, 0), std::invalid_argument);
  // beyond 64-bit range
  CHECK(binom_sum(100, 50) > BigInt(1) << 96);
}

TEST_CASE("Hamming packing volume bound") {
  PackingLowerBound p = hamming_packing_lb(4, 1.0);
  CHECK(p.num == 16);
  CHECK(p.den == 5);
  CHECK(p.value == 3.2);
  CHECK(greedy_hamming_packing(8, 2.0).size() >= hamming_packing_lb(8, 2.0).value);
  for (std::size_t n = 1; n <= 12; ++n)
    for (std::size_t m = 1; m <= n; ++m) {
      auto code = greedy_hamming_packing(n, static_cast<double>(m));
      for (std::size_t i = 0; i < code.size(); ++i)
        for (std::size_t j = i + 1; j < code.size(); ++j)
          REQUIRE(static_cast<std::size_t>(std::popcount(code[i] ^ code[j])) > m);
      CHECK(hamming_packing_lb(n, static_cast<double>(m)).value <= static_cast<double>(code.size()));
    }
  for (std::size_t n = 1; n <= 6; ++n)
    for (std::size_t m = 1; m <= n; ++m)
      CHECK(hamming_packing_lb(n, static_cast<double>(m)).value <=
            static_cast<double>(max_packing(n, m)));
}

TEST_CASE("semi-local packing constant") {
  double c = semiloc_base_constant();
  CHECK(std::abs(c - 2.0 / std::pow(5.0 * std::exp(1.0), 0.25)) <= 1e-12);
  CHECK(c == doctest::Approx(1.0416).epsilon(1e-4));
  for (std::size_t d : {8, 16, 64, 128, 512})
    CHECK(semiloc_log_packing(d) >= static_cast<double>(d) * std::log(c) - 1e-9);
  // exact and log-domain paths agree at the switch-over
  double exact64 = std::log(std::pow(2.0, 64)) - std::log(binom_sum(64, 16).convert_to<double>());
  CHECK(semiloc_log_packing(64) == doctest::Approx(exact64).epsilon(1e-10));
}

TEST_CASE("Fano bound") {
  CHECK(gaussian_kl(1.0, 1.0, 2.0) == 0.0);
  CHECK(gaussian_kl(0.0, 2.0, 1.0) == 2.0);
  std::size_t M = 16;
  double A = 0.7, sigma = 1.3;
  std::vector<double> D(M * M, 4.0 * A);
  for (std::size_t i = 0; i < M; ++i)
    D[i * M + i] = 0.0;
  double sum = 4.0 * A * static_cast<double>(M * (M - 1));
  double n = 2.0 * sigma * sigma * static_cast<double>(M * M) * std::log(16.0) * 0.5 / sum;
  CHECK(fano_bound(M, A, D, n, sigma) == doctest::Approx(A / 4.0).epsilon(1e-12));
  CHECK(fano_bound(M, A, D, 10 * n, sigma) == 0.0);
  CHECK(fano_bound(M, A, D, n / 2, sigma) >= fano_bound(M, A, D, n, sigma));
  std::vector<double> D2 = D;
  for (auto& v : D2)
    v *= 1.5;
  CHECK(fano_bound(M, A, D2, n, sigma) <= fano_bound(M, A, D, n, sigma));
  CHECK_THROWS_AS(fano_bound(1, A, std::vector<double>{0.0}, n, sigma), std::invalid_argument);
  std::vector<double> close = D;
  close[1] = close[M] = A;
  CHECK_THROWS_AS(fano_bound(M, A, close, n, sigma), std::invalid_argument);
  CHECK_THROWS_AS(fano_bound(M, A, D, n, 0.0), std::invalid_argument);
  CHECK(fano_bound_log(std::log(16.0), A, 4.0 * A, n * 15.0 / 16.0, sigma) ==
        doctest::Approx(fano_bound(M, A, D, n, sigma)).epsilon(1e-12));
}

TEST_CASE("lower-bound sweeps") {
  SweepSettings lcn;
  lcn.family = Family::LCN;
  lcn.c = 64.0;
  SweepResult r = lower_bound_sweep(lcn);
  CHECK(r.slope >= 0.8);
  CHECK(r.slope <= 1.2);
  CHECK_NOTHROW(r.report.validate());
  SweepSettings fcn;
  fcn.family = Family::FCN;
  fcn.c = 4.0;
  SweepResult f = lower_bound_sweep(fcn);
  CHECK(f.slope >= 1.8);
  CHECK(f.slope <= 2.2);
  for (auto st : {lcn, fcn}) {
    SweepResult a = lower_bound_sweep(st);
    for (const SweepRow& row : a.rows) {
      double eps0 = st.eps_frac * row.A;
      CHECK(fano_bound_log(row.log_M, row.A, row.sup_l2, row.n_star, st.sigma) < eps0);
      if (row.n_star > 1.0)
        CHECK(fano_bound_log(row.log_M, row.A, row.sup_l2, row.n_star - 1.0, st.sigma) >= eps0);
    }
    st.sigma *= 2.0;
    SweepResult b = lower_bound_sweep(st);
    for (std::size_t i = 0; i < a.rows.size(); ++i)
      CHECK(b.rows[i].n_star / a.rows[i].n_star == doctest::Approx(4.0).epsilon(0.1));
  }
  SweepSettings bad;
  bad.family = Family::CNN;
  bad.c = 1.0;
  CHECK_THROWS_AS(lower_bound_sweep(bad), std::invalid_argument);
  CHECK(loglog_slope({1, 10, 100}, {3, 30, 300}) == doctest::Approx(1.0));
}

TEST_CASE("distance-law calibration") {
  Calibration l = calibrate_distance_law(Family::LCN, 32, 50000, 1);
  CHECK(l.constant);
  CHECK(l.c == doctest::Approx(64.0).epsilon(0.1));
  Calibration f = calibrate_distance_law(Family::FCN, 8, 50000, 2);
  CHECK(f.constant);
  CHECK(f.c == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("bound report") {
  BoundReport rep;
  rep.add("a", 1.0, "f1");
  CHECK(rep.get("a") == 1.0);
  CHECK_THROWS(rep.get("b"));
  CHECK_NOTHROW(rep.validate());
  rep.add("b", INFINITY, "f2");
  CHECK_THROWS(rep.validate());
  BoundReport untagged;
  untagged.add("c", 1.0, "");
  CHECK_THROWS(untagged.validate());
}

TEST_CASE("covering bound") {
  ArchConfig cfg = ArchConfig::cnn(16, 2, {1, 2, 2, 2, 2}, std::vector<Activation>(4, Activation::relu));
  Tensor X = sample_inputs(InputDist::std_gaussian, 16, 20, 1);
  double prev = -INFINITY;
  for (double J : {0.1, 0.5, 1.0, 2.0, 5.0}) {
    CoveringBound cb = covering_bound(cfg, J, 1e-3, X);
    CHECK(cb.N == param_count(cfg));
    CHECK(cb.log_value > prev);
    CHECK(cb.log_value == doctest::Approx(static_cast<double>(cb.N) * std::log(3.0 * cb.gamma_hat / 1e-3)));
    prev = cb.log_value;
  }
  CoveringBound small = covering_bound(cfg, 1e-3, 1e-3, X);
  CHECK_THROWS_AS(covering_bound(cfg, 1e-3, 10.0 * small.gamma_hat, X), std::invalid_argument);
  CHECK(covering_bound(cfg, 1e-3, small.gamma_hat, X).log_value ==
        doctest::Approx(static_cast<double>(small.N) * std::log(3.0)));
}

TEST_CASE("excess risk bound") {
  ExcessRiskInputs in;
  in.A = 1.0;
  in.B = 3.5;
  in.sigma = 1.0;
  in.eps_star = 0.01;
  in.M_star = 2.0;
  in.p = 50;
  in.gamma = [](double J) { return J * (1.0 + J) * (1.0 + J); };
  in.lambda = 1e-9;
  in.n = 1e30;
  in.delta = 0.1;
  ExcessRiskTerms t = excess_risk_terms(in);
  double gap = in.B - 2.0 * in.A;
  double trunc = std::pow(in.sigma, 3) * in.B / (gap * gap) * std::exp(-gap * gap / 2.0);
  CHECK(t.truncation == doctest::Approx(trunc).epsilon(1e-12));
  CHECK(t.total == doctest::Approx(trunc).epsilon(1e-3));
  CHECK(t.U_lambda == doctest::Approx((in.eps_star + 1.0 + in.B * in.B * std::sqrt(2.0 * std::log(20.0) / in.n)) /
                                        (2.0 * in.lambda) + in.M_star));

  in.n = 1000;
  in.lambda = 0.05;
  double prev = 0.0;
  for (double delta : {0.4, 0.2, 0.1, 0.01, 0.001}) {
    in.delta = delta;
    double v = excess_risk_bound(in);
    CHECK(v >= prev);
    prev = v;
  }
  in.B = 1.5;
  CHECK_THROWS_AS(excess_risk_bound(in), std::invalid_argument);
  in.B = 3.5;
  in.delta = 0.7;
  CHECK_THROWS_AS(excess_risk_bound(in), std::invalid_argument);
}

TEST_CASE("excess risk under the B = 2A + sigma sqrt(log n), lambda = 1/sqrt(n) recipe") {
  ExcessRiskInputs in;
  in.A = 1.0;
  in.sigma = 1.0;
  in.eps_star = 0.01;
  in.M_star = 1.0;
  in.p = 100;
  in.delta = 0.05;
  in.gamma = [](double J) { return J * std::pow(1.0 + J, 3.0); };
  std::vector<double> ns, vals;
  for (double n : {1e2, 1e3, 1e4, 1e5, 1e6}) {
    in.n = n;
    in.B = 2.0 * in.A + in.sigma * std::sqrt(std::log(n));
    in.lambda = 1.0 / std::sqrt(n);
    ns.push_back(n);
    vals.push_back(excess_risk_bound(in));
  }
  for (std::size_t i = 1; i < vals.size(); ++i)
    CHECK(vals[i] < vals[i - 1]);
  // the rate is n^{-1/2} up to logarithmic factors: dividing out log n leaves
  // a slope of -1/2 within the stated window
  std::vector<double> scaled;
  for (std::size_t i = 0; i < ns.size(); ++i)
    scaled.push_back(vals[i] / std::log(ns[i]));
  double raw = loglog_slope(ns, vals), adj = loglog_slope(ns, scaled);
  CHECK(raw < -0.3);
  CHECK(adj == doctest::Approx(-0.5).epsilon(0.1));
}

TEST_CASE("depth decomposition") {
  SUBCASE("identity-activation shallow CNN is additive") {
    ArchConfig cfg = ArchConfig::cnn(32, 2, {1, 2, 2, 2, 2},
                                     std::vector<Activation>(4, Activation::identity));
    CHECK(depth_decomposition_test(cfg, 20, 1) <= 1e-12);
  }
  SUBCASE("random ReLU CNNs below the threshold") {
    std::size_t d = 8, D = 4 * d;
    std::size_t L = 4; // log2(4d) - 1
    std::vector<std::size_t> ch(L + 1, 3);
    ch[0] = 1;
    ArchConfig cfg = ArchConfig::cnn(D, 2, ch, std::vector<Activation>(L, Activation::relu));
    CHECK(depth_test_pair(cfg) == std::pair<std::size_t, std::size_t>{0, 2 * d});
    CHECK(depth_decomposition_test(cfg, 100, 2) <= 1e-9);
  }
  SUBCASE("no-stride CNNs below the threshold") {
    std::size_t D = 16;
    std::vector<std::size_t> ch(15, 2);
    ch[0] = 1;
    ArchConfig cfg = ArchConfig::cnn_no_stride(D, 2, ch, std::vector<Activation>(14, Activation::relu));
    CHECK(depth_test_pair(cfg) == std::pair<std::size_t, std::size_t>{0, D - 1});
    CHECK(depth_decomposition_test(cfg, 100, 3) <= 1e-9);
  }
  SUBCASE("full depth is rejected, and the separation CNN is not additive") {
    std::vector<std::size_t> ch(6, 2);
    ch[0] = 1;
    ArchConfig full = ArchConfig::cnn(32, 2, ch, std::vector<Activation>(5, Activation::relu));
    CHECK_THROWS_AS(check_depth_threshold(full), std::invalid_argument);
    CHECK_THROWS_AS(depth_decomposition_test(ArchConfig::fcn(8, {8, 4}, {Activation::relu}), 2, 1),
                    std::invalid_argument);
    auto [cfg, th] = build_separation_cnn(8);
    std::vector<double> x(32, 0.0);
    double md = mixed_difference(cfg, th, x, 0, 16, 1.0, 0.0, 1.0, 0.0);
    CHECK(std::abs(md) > 1e-3);
  }
}
