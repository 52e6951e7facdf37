// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/tasks.hpp>

#include <cmath>
#include <stdexcept>
#include <sstream>

#include <doctest.h>

using namespace cnnlab;

TEST_CASE("uniform cube sample means") {
  std::size_t n = 100000, D = 4;
  Tensor X = sample_inputs(InputDist::uniform_cube, D, n, 1);
  double tol = 4.0 * std::sqrt(1.0 / 12.0) / std::sqrt(static_cast<double>(n));
  for (std::size_t j = 0; j < D; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double v = X[i * D + j];
      REQUIRE(v >= 0.0);
      REQUIRE(v < 1.0);
      m += v;
    }
    CHECK(std::abs(m / static_cast<double>(n) - 0.5) <= tol);
  }
}

TEST_CASE("gaussian sample covariance diagonal") {
  std::size_t n = 100000, D = 4;
  Tensor X = sample_inputs(InputDist::std_gaussian, D, n, 2);
  for (std::size_t j = 0; j < D; ++j) {
    double m = 0.0, q = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m += X[i * D + j];
      q += X[i * D + j] * X[i * D + j];
    }
    m /= static_cast<double>(n);
    double var = q / static_cast<double>(n) - m * m;
    CHECK(std::abs(var - 1.0) <= 0.05);
  }
}

TEST_CASE("sampling is reproducible and independent of threads") {
  Tensor a = sample_inputs(InputDist::std_gaussian, 8, 500, 3);
  Tensor b = sample_inputs(InputDist::std_gaussian, 8, 500, 3, "inputs", 4);
  Tensor c = sample_inputs(InputDist::std_gaussian, 8, 500, 4);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  CHECK_THROWS_AS(dist_from_string("cauchy"), std::invalid_argument);
  CHECK(dist_from_string(to_string(InputDist::uniform_cube)) == InputDist::uniform_cube);
}

TEST_CASE("target evaluation") {
  TargetSpec sep = TargetSpec::separation(8);
  std::vector<double> same(8, 0.7);
  CHECK(eval_target(sep, same) == 0.0);
  std::vector<double> x{1, 0, 1, 0};
  CHECK(eval_target(TargetSpec::separation(4), x) == 1.0);
  CHECK(eval_target(TargetSpec::truncated_separation(4, 0.5), x) == 0.5);
  // (1/2)(4 - 1 + 0 - 4)(1 - 0 + 9 - 1) = -4.5
  std::vector<double> y{2, 1, 0, 2, 1, 0, 3, 1};
  CHECK(separation_target(y) == doctest::Approx(-4.5));
  TargetSpec pr = TargetSpec::product(8, 2, 7);
  CHECK(eval_target(pr, y) == 1.0 * 3.0);
  CHECK_THROWS(TargetSpec::product(8, 2, 9));
  CHECK_THROWS(TargetSpec::separation(6));
}

TEST_CASE("datasets") {
  TargetSpec spec = TargetSpec::separation(8);
  Dataset ds = make_dataset(spec, InputDist::std_gaussian, 300, 0.0, 5);
  for (std::size_t i = 0; i < ds.n(); ++i)
    CHECK(ds.y[i] == eval_target(spec, std::span<const double>(ds.X.values.data() + 8 * i, 8)));
  Dataset again = make_dataset(spec, InputDist::std_gaussian, 300, 0.0, 5);
  CHECK(again.X.values == ds.X.values);
  CHECK(again.y.values == ds.y.values);

  std::size_t n = 100000;
  Dataset noisy = make_dataset(spec, InputDist::std_gaussian, n, 1.0, 6);
  Dataset clean = make_dataset(spec, InputDist::std_gaussian, n, 0.0, 6);
  CHECK(noisy.X.values == clean.X.values);
  double m = 0.0, q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = noisy.y[i] - clean.y[i];
    m += r;
    q += r * r;
  }
  m /= static_cast<double>(n);
  CHECK(std::abs(q / static_cast<double>(n) - m * m - 1.0) <= 0.03);
}

TEST_CASE("dataset files round-trip") {
  Dataset ds = make_dataset(TargetSpec::product(4, 1, 4), InputDist::uniform_cube, 20, 0.1, 7);
  std::stringstream bin;
  write_binary(bin, ds);
  Dataset b = read_binary(bin);
  CHECK(b.X.values == ds.X.values);
  CHECK(b.y.values == ds.y.values);
  CHECK(b.sigma == ds.sigma);
  CHECK(b.seed == ds.seed);
  std::stringstream csv;
  write_csv(csv, ds);
  CHECK(csv.str().rfind("x1,x2,x3,x4,y\n", 0) == 0);
  Dataset c = read_csv(csv);
  CHECK(c.X.values == ds.X.values);
  CHECK(c.y.values == ds.y.values);
  std::stringstream bad("x1,y\n1\n");
  CHECK_THROWS(read_csv(bad));
}
