// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/rng.hpp>
#include <cnnlab/symmetry.hpp>

#include <cmath>
#include <stdexcept>

#include <doctest.h>

using namespace cnnlab;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
  Rng rng(seed, "test_symmetry");
  std::vector<double> v(n);
  for (auto& x : v)
    x = rng.normal();
  return v;
}

std::vector<std::uint8_t> bits_of(std::size_t n, std::uint64_t seed) {
  Rng rng(seed, "test_bits");
  std::vector<std::uint8_t> b(n);
  for (auto& v : b)
    v = static_cast<std::uint8_t>(rng() & 1U);
  return b;
}

} // namespace

TEST_CASE("group element validation") {
  CHECK_NOTHROW(GroupElement::local_perm({1, 0, 1}).validate());
  CHECK(GroupElement::local_perm({1, 0, 1}).dim == 6);
  CHECK_THROWS_AS(GroupElement::semilocal_perm({1, 0, 0, 1}), std::invalid_argument);
  CHECK_NOTHROW(GroupElement::semilocal_perm({1, 1, 0, 0}));
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(3, 3);
  bad(0, 1) = 1e-6;
  CHECK_THROWS_AS(GroupElement::orthogonal(bad), std::invalid_argument);
  GroupElement q = sample_haar_orthogonal(6, 1);
  CHECK((q.Q * q.Q.transpose() - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("apply, compose and rho_loc") {
  auto x = randn(8, 1);
  GroupElement id = GroupElement::identity(8);
  CHECK(cnnlab::apply(id, x) == x);
  CHECK(rho_loc(id, id) == 0);
  GroupElement ones = GroupElement::local_perm({1, 1, 1, 1});
  CHECK(cnnlab::apply(ones, cnnlab::apply(ones, x)) == x);
  CHECK(cnnlab::apply(ones, x)[0] == x[1]);
  CHECK(cnnlab::apply(ones, x)[1] == x[0]);
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto b1 = bits_of(16, s), b2 = bits_of(16, 100 + s);
    GroupElement e1 = GroupElement::local_perm(b1), e2 = GroupElement::local_perm(b2);
    std::size_t ham = 0;
    for (std::size_t i = 0; i < 16; ++i)
      ham += b1[i] != b2[i];
    CHECK(rho_loc(e1, e2) == ham);
    auto y = randn(32, 200 + s);
    CHECK(cnnlab::apply(compose(e1, e2), y) == cnnlab::apply(e1, cnnlab::apply(e2, y)));
    CHECK(cnnlab::apply(compose(inverse(e1), e1), y) == y);
    Eigen::MatrixXd M = to_matrix(e1);
    Eigen::VectorXd yv = Eigen::Map<Eigen::VectorXd>(y.data(), 32);
    Eigen::VectorXd mv = M * yv;
    auto ey = cnnlab::apply(e1, y);
    for (std::size_t i = 0; i < 32; ++i)
      CHECK(ey[i] == mv(static_cast<Eigen::Index>(i)));
  }
  GroupElement q1 = sample_haar_orthogonal(8, 3), q2 = sample_haar_orthogonal(8, 4);
  auto a = cnnlab::apply(compose(q1, q2), x), b = cnnlab::apply(q1, cnnlab::apply(q2, x));
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  CHECK_THROWS_AS(cnnlab::apply(q1, randn(7, 1)), std::invalid_argument);
  CHECK_THROWS(rho_loc(q1, q2));
}

TEST_CASE("flip_pairs flips exactly s pairs among the first ones") {
  GroupElement e = flip_pairs(32, 5, 16, 7, 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < 32; ++i) {
    total += e.bits[i];
    if (i >= 16)
      CHECK(e.bits[i] == 0);
  }
  CHECK(total == 5);
}

TEST_CASE("Haar sampling moments") {
  std::size_t N = 10000;
  double plus = 0.0;
  for (std::size_t k = 0; k < N; ++k)
    plus += sample_haar_orthogonal(1, 11, k).Q(0, 0) > 0 ? 1.0 : 0.0;
  double p = plus / static_cast<double>(N);
  CHECK(std::abs(p - 0.5) <= 3.0 * std::sqrt(0.25 / static_cast<double>(N)));

  double m = 0.0, q = 0.0;
  for (std::size_t k = 0; k < N; ++k) {
    Eigen::MatrixXd Q = sample_haar_orthogonal(8, 12, k).Q;
    CHECK((Q.transpose() * Q - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() <= 1e-10);
    double t = Q.trace();
    m += t;
    q += t * t;
  }
  m /= static_cast<double>(N);
  double se = std::sqrt((q / static_cast<double>(N) - m * m) / static_cast<double>(N));
  CHECK(std::abs(m) <= 3.0 * se);
}

TEST_CASE("tau_U turns q into a multiple of g_U") {
  SUBCASE("U = I with v = u") {
    TauU t = tau_U_construct(Eigen::MatrixXd::Identity(4, 4), 100, 1);
    auto u = randn(4, 5);
    std::vector<double> x(u);
    x.insert(x.end(), u.begin(), u.end());
    Eigen::VectorXd xv = Eigen::Map<Eigen::VectorXd>(x.data(), 8);
    Eigen::VectorXd tx = t.tau * xv;
    double uu = 0.0;
    for (double v : u)
      uu += v * v;
    CHECK(q_form(std::span<const double>(tx.data(), 8)) == doctest::Approx(t.c * uu).epsilon(1e-12));
  }
  SUBCASE("random U") {
    Eigen::MatrixXd U = sample_haar_orthogonal(6, 2).Q;
    TauU t = tau_U_construct(U, 10000, 3);
    CHECK((t.tau * t.tau.transpose() - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(t.c == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(t.spread <= 1e-10);
    for (std::uint64_t s = 0; s < 100; ++s) {
      auto x = randn(12, 300 + s);
      Eigen::VectorXd xv = Eigen::Map<Eigen::VectorXd>(x.data(), 12);
      Eigen::VectorXd tx = t.tau * xv;
      CHECK(q_form(std::span<const double>(tx.data(), 12)) ==
            doctest::Approx(2.0 * g_U(U, x)).epsilon(1e-10).scale(1.0));
    }
  }
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(3, 3) * 2.0;
  CHECK_THROWS_AS(tau_U_construct(bad), std::invalid_argument);
}

TEST_CASE("parameter action realizes input transformations") {
  std::size_t D = 16;
  ArchConfig lcn = ArchConfig::lcn(D, 2, {1, 3, 3, 3, 3}, std::vector<Activation>(4, Activation::relu));
  ArchConfig fcn = ArchConfig::fcn(D, {D, 5}, {Activation::relu});
  ArchConfig cnn = ArchConfig::cnn(D, 2, {1, 3, 3, 3, 3}, std::vector<Activation>(4, Activation::relu));
  GroupElement perm = random_local_perm(D / 2, 4);
  GroupElement orth = sample_haar_orthogonal(D, 4);
  CHECK(param_action_supported(lcn, perm));
  CHECK_FALSE(param_action_supported(lcn, orth));
  CHECK(param_action_supported(fcn, orth));
  CHECK_FALSE(param_action_supported(cnn, perm));
  for (const auto& [cfg, e] : {std::pair{lcn, perm}, std::pair{fcn, orth}, std::pair{fcn, perm}}) {
    Params th = initialize(cfg, InitScheme::gaussian(0.5), 6);
    Params qt = apply_param_action(cfg, e, th);
    for (std::uint64_t s = 0; s < 20; ++s) {
      auto x = randn(D, 400 + s);
      CHECK(forward(cfg, qt, cnnlab::apply(e, x)) ==
            doctest::Approx(forward(cfg, th, x)).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(apply_param_action(lcn, orth, initialize(lcn, InitScheme::uniform_fan_in(), 1)),
                  std::invalid_argument);
}

TEST_CASE("coupled trajectories") {
  std::size_t D = 16;
  Dataset ds = make_dataset(TargetSpec::separation(D), InputDist::std_gaussian, 32, 0.3, 5);
  ArchConfig lcn = ArchConfig::lcn(D, 2, {1, 3, 3, 3, 3}, std::vector<Activation>(4, Activation::relu));
  ArchConfig fcn = ArchConfig::fcn(D, {D, 8}, {Activation::relu});
  TrainConfig tc;
  tc.steps = 200;
  tc.batch = 8;
  tc.lr = 1e-2;
  tc.seed = 3;

  SUBCASE("identity gives zero deviation") {
    CoupledResult r = coupled_equivariance_test(lcn, GroupElement::identity(D), ds, tc,
                                                InitScheme::uniform_fan_in());
    CHECK(r.max_deviation == 0.0);
    CHECK(r.deviation.size() == 201);
  }
  SUBCASE("LCN + Adam + local permutation") {
    CoupledResult r = coupled_equivariance_test(lcn, random_local_perm(D / 2, 7), ds, tc,
                                                InitScheme::uniform_fan_in());
    CHECK(r.max_deviation <= 1e-6);
  }
  SUBCASE("FCN + SGD + orthogonal") {
    TrainConfig sgd = tc;
    sgd.optimizer = Optimizer::sgd;
    CoupledResult r = coupled_equivariance_test(fcn, sample_haar_orthogonal(D, 8), ds, sgd,
                                                InitScheme::gaussian(0.2));
    CHECK(r.max_deviation <= 1e-6);
  }
  SUBCASE("FCN + Adam + orthogonal breaks the coupling") {
    CoupledResult r = coupled_equivariance_test(fcn, sample_haar_orthogonal(D, 9), ds, tc,
                                                InitScheme::gaussian(0.2));
    CHECK(r.max_deviation >= 1e-2);
  }
  SUBCASE("unsupported pairs are rejected") {
    ArchConfig cnn = ArchConfig::cnn(D, 2, {1, 3, 3, 3, 3}, std::vector<Activation>(4, Activation::relu));
    CHECK_THROWS_AS(coupled_equivariance_test(cnn, random_local_perm(D / 2, 1), ds, tc,
                                              InitScheme::uniform_fan_in()),
                    std::invalid_argument);
  }
}

TEST_CASE("Monte Carlo distances") {
  auto f = [](std::span<const double> x) { return x[0] * x[1]; };
  Estimate zero = mc_l2_distance(f, f, InputDist::std_gaussian, 4, 1000, 1);
  CHECK(zero.value == 0.0);
  auto g = [](std::span<const double> x) { return x[0]; };
  auto h = [](std::span<const double> x) { return 0.0 * x[0]; };
  Estimate one = mc_l2_distance(g, h, InputDist::std_gaussian, 4, 20000, 2);
  CHECK(std::abs(one.value - 1.0) <= 3.0 * one.se);
  Estimate par = mc_l2_distance(g, h, InputDist::std_gaussian, 4, 20000, 2, 3);
  CHECK(par.value == one.value);

  Estimate e = lcn_distance(16, 4, INFINITY, 100000, 3);
  CHECK(std::abs(e.value - 64.0 * 4 / 16) <= 3.0 * e.se);
  Eigen::MatrixXd U = sample_haar_orthogonal(8, 1).Q, U2 = sample_haar_orthogonal(8, 2).Q;
  Estimate ef = fcn_distance(U, U2, INFINITY, 100000, 4);
  CHECK(std::abs(ef.value - 4.0 * (U - U2).squaredNorm() / 8.0) <= 3.0 * ef.se);
}
