// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/symmetry.hpp>

#include <cnnlab/parallel.hpp>
#include <cnnlab/rng.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace cnnlab {

std::string to_string(GroupKind k) {
  switch (k) {
  case GroupKind::local_perm:
    return "local_perm";
  case GroupKind::semilocal_perm:
    return "semilocal_perm";
  case GroupKind::orthogonal:
    return "orthogonal";
  case GroupKind::block_ortho:
    return "block_ortho";
  }
  return "?";
}

namespace {

void check_orthogonal(const Eigen::MatrixXd& Q, const char* what) {
  if (Q.rows() == 0 || Q.rows() != Q.cols())
    throw std::invalid_argument(fmt::format("{}: matrix must be square", what));
  double err = (Q * Q.transpose() -
                Eigen::MatrixXd::Identity(Q.rows(), Q.cols()))
                 .cwiseAbs()
                 .maxCoeff();
  if (!(err <= 1e-10))
    throw std::invalid_argument(
      fmt::format("{}: matrix is not orthogonal (|QQ^T - I|_max = {:.3g})", what,
                  err));
}

} // namespace

GroupElement GroupElement::local_perm(std::vector<std::uint8_t> bits) {
  GroupElement e;
  e.kind = GroupKind::local_perm;
  e.dim = 2 * bits.size();
  e.bits = std::move(bits);
  e.validate();
  return e;
}

GroupElement GroupElement::semilocal_perm(std::vector<std::uint8_t> bits) {
  GroupElement e;
  e.kind = GroupKind::semilocal_perm;
  e.dim = 2 * bits.size();
  e.bits = std::move(bits);
  e.validate();
  return e;
}

GroupElement GroupElement::orthogonal(Eigen::MatrixXd Q) {
  GroupElement e;
  e.kind = GroupKind::orthogonal;
  e.dim = static_cast<std::size_t>(Q.rows());
  e.Q = std::move(Q);
  e.validate();
  return e;
}

GroupElement GroupElement::block_ortho(Eigen::MatrixXd tau, std::size_t dim) {
  GroupElement e;
  e.kind = GroupKind::block_ortho;
  e.dim = dim;
  e.Q = std::move(tau);
  e.validate();
  return e;
}

GroupElement GroupElement::identity(std::size_t dim) {
  if (dim == 0 || dim % 2 != 0)
    return orthogonal(Eigen::MatrixXd::Identity(static_cast<long>(dim),
                                                static_cast<long>(dim)));
  return local_perm(std::vector<std::uint8_t>(dim / 2, 0));
}

void GroupElement::validate() const {
  switch (kind) {
  case GroupKind::local_perm:
  case GroupKind::semilocal_perm:
    if (bits.empty() || dim != 2 * bits.size())
      throw std::invalid_argument(fmt::format(
        "GroupElement: {} bits for dimension {}", bits.size(), dim));
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i] > 1)
        throw std::invalid_argument("GroupElement: bits must be 0 or 1");
      if (kind == GroupKind::semilocal_perm && bits.size() % 2 != 0)
        throw std::invalid_argument(
          "GroupElement: semi-local permutation needs an even pair count");
      if (kind == GroupKind::semilocal_perm && i >= bits.size() / 2 && bits[i])
        throw std::invalid_argument(fmt::format(
          "GroupElement: semi-local permutation flips pair {} of the second half",
          i + 1));
    }
    break;
  case GroupKind::orthogonal:
    if (static_cast<std::size_t>(Q.rows()) != dim)
      throw std::invalid_argument("GroupElement: matrix size differs from dim");
    check_orthogonal(Q, "GroupElement");
    break;
  case GroupKind::block_ortho:
    if (static_cast<std::size_t>(Q.rows()) > dim)
      throw std::invalid_argument("GroupElement: block larger than dim");
    check_orthogonal(Q, "GroupElement");
    break;
  }
}

std::vector<double> apply(const GroupElement& e, std::span<const double> x) {
  if (x.size() != e.dim)
    throw std::invalid_argument(fmt::format(
      "apply: input of length {} for a group element on R^{}", x.size(), e.dim));
  std::vector<double> out(x.begin(), x.end());
  if (e.is_perm()) {
    for (std::size_t i = 0; i < e.bits.size(); ++i)
      if (e.bits[i])
        std::swap(out[2 * i], out[2 * i + 1]);
    return out;
  }
  long k = e.Q.rows();
  Eigen::Map<const Eigen::VectorXd> xin(x.data(), k);
  Eigen::Map<Eigen::VectorXd> xo(out.data(), k);
  xo = e.Q * xin;
  return out;
}

Tensor apply_rows(const GroupElement& e, const Tensor& X) {
  if (X.rank() != 2 || X.dim(1) != e.dim)
    throw std::invalid_argument(fmt::format(
      "apply_rows: matrix {} for a group element on R^{}", X.shape_str(), e.dim));
  Tensor out(X.shape);
  std::size_t D = e.dim;
  for (std::size_t r = 0; r < X.dim(0); ++r) {
    std::vector<double> y =
      apply(e, std::span<const double>(X.values.data() + r * D, D));
    std::copy(y.begin(), y.end(), out.values.begin() + r * D);
  }
  return out;
}

Eigen::MatrixXd to_matrix(const GroupElement& e) {
  long n = static_cast<long>(e.dim);
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n);
  if (e.is_perm()) {
    for (std::size_t i = 0; i < e.bits.size(); ++i)
      if (e.bits[i]) {
        long a = static_cast<long>(2 * i);
        M(a, a) = M(a + 1, a + 1) = 0.0;
        M(a, a + 1) = M(a + 1, a) = 1.0;
      }
    return M;
  }
  M.topLeftCorner(e.Q.rows(), e.Q.cols()) = e.Q;
  return M;
}

GroupElement compose(const GroupElement& e1, const GroupElement& e2) {
  if (e1.dim != e2.dim)
    throw std::invalid_argument(
      fmt::format("compose: dimensions {} and {}", e1.dim, e2.dim));
  if (e1.is_perm() && e2.is_perm()) {
    std::vector<std::uint8_t> b(e1.bits.size());
    for (std::size_t i = 0; i < b.size(); ++i)
      b[i] = e1.bits[i] ^ e2.bits[i];
    bool semi = e1.kind == GroupKind::semilocal_perm &&
                e2.kind == GroupKind::semilocal_perm;
    return semi ? GroupElement::semilocal_perm(std::move(b))
                : GroupElement::local_perm(std::move(b));
  }
  if (e1.kind == GroupKind::block_ortho && e2.kind == GroupKind::block_ortho &&
      e1.Q.rows() == e2.Q.rows())
    return GroupElement::block_ortho(e1.Q * e2.Q, e1.dim);
  return GroupElement::orthogonal(to_matrix(e1) * to_matrix(e2));
}

GroupElement inverse(const GroupElement& e) {
  switch (e.kind) {
  case GroupKind::local_perm:
  case GroupKind::semilocal_perm:
    return e;
  case GroupKind::orthogonal:
    return GroupElement::orthogonal(e.Q.transpose());
  case GroupKind::block_ortho:
    return GroupElement::block_ortho(e.Q.transpose(), e.dim);
  }
  return e;
}

std::size_t rho_loc(const GroupElement& e1, const GroupElement& e2) {
  if (!e1.is_perm() || !e2.is_perm())
    throw std::invalid_argument("rho_loc: defined for local permutations only");
  if (e1.dim != e2.dim)
    throw std::invalid_argument(
      fmt::format("rho_loc: dimensions {} and {}", e1.dim, e2.dim));
  std::size_t n = 0;
  for (std::size_t i = 0; i < e1.bits.size(); ++i)
    n += e1.bits[i] != e2.bits[i] ? 1 : 0;
  return n;
}

GroupElement random_local_perm(std::size_t pairs, std::uint64_t seed,
                               std::uint64_t index) {
  Rng rng(seed, "local_perm", index);
  std::vector<std::uint8_t> b(pairs);
  for (auto& v : b)
    v = static_cast<std::uint8_t>(rng() >> 63);
  return GroupElement::local_perm(std::move(b));
}

GroupElement flip_pairs(std::size_t pairs, std::size_t s, std::size_t among,
                        std::uint64_t seed, std::uint64_t index) {
  if (among > pairs || s > among)
    throw std::invalid_argument(fmt::format(
      "flip_pairs: {} flips among {} of {} pairs", s, among, pairs));
  Rng rng(seed, "flip_pairs", index);
  std::vector<std::size_t> pos(among);
  std::iota(pos.begin(), pos.end(), 0);
  for (std::size_t i = 0; i < s; ++i)
    std::swap(pos[i], pos[i + rng.below(among - i)]);
  std::vector<std::uint8_t> b(pairs, 0);
  for (std::size_t i = 0; i < s; ++i)
    b[pos[i]] = 1;
  return GroupElement::local_perm(std::move(b));
}

GroupElement sample_haar_orthogonal(std::size_t dim, std::uint64_t seed,
                                    std::uint64_t index) {
  if (dim == 0)
    throw std::invalid_argument("sample_haar_orthogonal: dim must be >= 1");
  Rng rng(seed, "haar", index);
  long n = static_cast<long>(dim);
  Eigen::MatrixXd G(n, n);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j)
      G(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (long j = 0; j < n; ++j)
    if (R(j, j) < 0.0)
      Q.col(j) = -Q.col(j);
  return GroupElement::orthogonal(std::move(Q));
}

double q_form(std::span<const double> x) {
  if (x.size() % 2 != 0)
    throw std::invalid_argument("q_form: odd input length");
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); i += 2)
    acc += x[i] * x[i] - x[i + 1] * x[i + 1];
  return acc;
}

double g_U(const Eigen::MatrixXd& U, std::span<const double> x) {
  std::size_t d = static_cast<std::size_t>(U.rows());
  if (x.size() != 2 * d)
    throw std::invalid_argument("g_U: input length must be 2d");
  Eigen::Map<const Eigen::VectorXd> u(x.data(), U.rows());
  Eigen::Map<const Eigen::VectorXd> v(x.data() + d, U.rows());
  return u.dot(U * v);
}

TauU tau_U_construct(const Eigen::MatrixXd& U, std::size_t probes,
                     std::uint64_t seed) {
  check_orthogonal(U, "tau_U_construct");
  long d = U.rows();
  TauU out;
  out.tau = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  double r = 1.0 / std::sqrt(2.0);
  for (long i = 0; i < d; ++i) {
    out.tau(2 * i, i) = r;
    out.tau(2 * i + 1, i) = r;
    out.tau.row(2 * i).tail(d) = r * U.row(i);
    out.tau.row(2 * i + 1).tail(d) = -r * U.row(i);
  }
  check_orthogonal(out.tau, "tau_U_construct");
  std::vector<double> ratios;
  ratios.reserve(probes);
  for (std::size_t p = 0; p < probes; ++p) {
    Rng rng(seed, "tau_probe", p);
    Eigen::VectorXd x(2 * d);
    for (long i = 0; i < 2 * d; ++i)
      x(i) = rng.normal();
    double g = g_U(U, std::span<const double>(x.data(), 2 * d));
    if (std::abs(g) < 1e-3)
      continue;
    Eigen::VectorXd w = out.tau * x;
    ratios.push_back(q_form(std::span<const double>(w.data(), 2 * d)) / g);
  }
  if (ratios.empty())
    throw std::runtime_error("tau_U_construct: no usable probes");
  std::vector<double> sorted = ratios;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                   sorted.end());
  out.c = sorted[sorted.size() / 2];
  for (double v : ratios)
    out.spread = std::max(out.spread, std::abs(v - out.c) / std::abs(out.c));
  return out;
}

bool param_action_supported(const ArchConfig& cfg, const GroupElement& e) {
  if (e.dim != cfg.input_dim)
    return false;
  if (cfg.family == Family::FCN)
    return true;
  return cfg.family == Family::LCN && e.is_perm() && cfg.stride % 2 == 0;
}

Params apply_param_action(const ArchConfig& cfg, const GroupElement& e,
                          const Params& theta) {
  theta.check(cfg);
  if (!param_action_supported(cfg, e))
    throw std::invalid_argument(fmt::format(
      "apply_param_action: {} action on a {} with input_dim {} and stride {} is "
      "not supported",
      to_string(e.kind), to_string(cfg.family), cfg.input_dim, cfg.stride));
  Params out = theta;
  std::size_t D = cfg.input_dim;
  std::size_t rows = cfg.channels[1];
  if (cfg.family == Family::LCN) {
    for (std::size_t co = 0; co < rows; ++co)
      for (std::size_t i = 0; i < e.bits.size(); ++i)
        if (e.bits[i])
          std::swap(out.W[0][co * D + 2 * i], out.W[0][co * D + 2 * i + 1]);
    return out;
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
    W(theta.W[0].values.data(), static_cast<long>(rows), static_cast<long>(D));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                           Eigen::RowMajor>>
    Wn(out.W[0].values.data(), static_cast<long>(rows), static_cast<long>(D));
  Wn = W * to_matrix(e).transpose();
  return out;
}

CoupledResult coupled_equivariance_test(const ArchConfig& cfg,
                                        const GroupElement& e,
                                        const Dataset& ds,
                                        const TrainConfig& tc,
                                        const InitScheme& init) {
  if (!param_action_supported(cfg, e))
    throw std::invalid_argument(fmt::format(
      "coupled_equivariance_test: unsupported pair ({}, {})",
      to_string(cfg.family), to_string(e.kind)));
  if (tc.restarts != 1)
    throw std::invalid_argument(
      "coupled_equivariance_test: a single restart is required");
  Params theta0 = initialize(cfg, init, tc.seed, 0);
  Params theta0t = apply_param_action(cfg, e, theta0);

  Dataset dst = ds;
  dst.X = apply_rows(e, ds.X);

  std::vector<Params> traj;
  train(cfg, InitScheme::given(theta0), ds, tc,
        [&](std::size_t, const Params& th) { traj.push_back(th); });
  CoupledResult res;
  std::size_t t = 0;
  train(cfg, InitScheme::given(theta0t), dst, tc,
        [&](std::size_t, const Params& th) {
          if (t >= traj.size())
            return;
          std::vector<double> a = apply_param_action(cfg, e, traj[t]).flatten();
          std::vector<double> b = th.flatten();
          double m = 0.0;
          for (std::size_t i = 0; i < a.size(); ++i)
            m = std::max(m, std::abs(a[i] - b[i]));
          double dev = m / (1.0 + param_norm_P(cfg, traj[t]));
          if (!std::isfinite(dev))
            dev = std::numeric_limits<double>::infinity();
          res.deviation.push_back(dev);
          res.max_deviation = std::max(res.max_deviation, dev);
          ++t;
        });
  return res;
}

Estimate mc_l2_distance(const Fn& f, const Fn& g, InputDist dist,
                        std::size_t input_dim, std::size_t n,
                        std::uint64_t seed, std::size_t threads) {
  if (n < 100)
    throw std::invalid_argument("mc_l2_distance: n must be >= 100");
  std::vector<double> sq(n);
  std::uint64_t pid = purpose_id("mc_l2");
  parallel_for(n, threads, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> x(input_dim);
    for (std::size_t r = lo; r < hi; ++r) {
      Rng rng(seed, pid, r);
      for (double& v : x)
        v = dist == InputDist::uniform_cube ? rng.uniform() : rng.normal();
      double gap = f(x) - g(x);
      sq[r] = gap * gap;
    }
  });
  return mc_mean(sq);
}

Fn separation_composed(std::size_t d, const GroupElement& e, double A0) {
  if (e.dim != 4 * d)
    throw std::invalid_argument("separation_composed: element must act on R^{4d}");
  return [e, A0](std::span<const double> x) {
    double v = separation_target(apply(e, x));
    return std::isinf(A0) ? v : truncate(v, A0);
  };
}

Fn f_U(const Eigen::MatrixXd& U, double A0) {
  check_orthogonal(U, "f_U");
  return [U, A0](std::span<const double> x) {
    std::size_t d = static_cast<std::size_t>(U.rows());
    if (x.size() != 4 * d)
      throw std::invalid_argument("f_U: input length must be 4d");
    double v = g_U(U, x.first(2 * d)) * q_form(x.subspan(2 * d)) /
               static_cast<double>(d);
    return std::isinf(A0) ? v : truncate(v, A0);
  };
}

Estimate lcn_distance(std::size_t d, std::size_t s, double A0, std::size_t n,
                      std::uint64_t seed, std::size_t threads) {
  GroupElement id = GroupElement::identity(4 * d);
  GroupElement tau = flip_pairs(2 * d, s, d, seed);
  return mc_l2_distance(separation_composed(d, id, A0),
                        separation_composed(d, tau, A0),
                        InputDist::std_gaussian, 4 * d, n, seed, threads);
}

Estimate fcn_distance(const Eigen::MatrixXd& U, const Eigen::MatrixXd& U2,
                      double A0, std::size_t n, std::uint64_t seed,
                      std::size_t threads) {
  if (U.rows() != U2.rows())
    throw std::invalid_argument("fcn_distance: U and U' sizes differ");
  return mc_l2_distance(f_U(U, A0), f_U(U2, A0), InputDist::std_gaussian,
                        4 * static_cast<std::size_t>(U.rows()), n, seed,
                        threads);
}

Estimate truncation_rate(std::size_t d, double A0, std::size_t n,
                         std::uint64_t seed, std::size_t threads) {
  Tensor X = sample_inputs(InputDist::std_gaussian, 4 * d, n, seed,
                           "truncation", threads);
  std::vector<double> hit(n);
  for (std::size_t r = 0; r < n; ++r)
    hit[r] = std::abs(separation_target(std::span<const double>(
               X.values.data() + r * 4 * d, 4 * d))) > A0
               ? 1.0
               : 0.0;
  return mc_mean(hit);
}

} // namespace cnnlab
