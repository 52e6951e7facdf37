// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cnnlab/nets.hpp>
#include <cnnlab/tasks.hpp>
#include <cnnlab/training.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace cnnlab {

enum class GroupKind { local_perm, semilocal_perm, orthogonal, block_ortho };

std::string to_string(GroupKind k);

/**
 * Linear map on R^dim.
 *
 * local_perm / semilocal_perm: bits[i] = 1 swaps coordinates 2i+1 and 2i+2
 * (1-based), dim = 2 * bits.size(). Semi-local elements leave the second half
 * of the pairs fixed.
 * orthogonal: Q is dim x dim.
 * block_ortho: Q is a k x k orthogonal block on the first k coordinates,
 * identity on the rest.
 */
struct GroupElement {
  GroupKind kind = GroupKind::local_perm;
  std::size_t dim = 0;
  std::vector<std::uint8_t> bits;
  Eigen::MatrixXd Q;

  static GroupElement local_perm(std::vector<std::uint8_t> bits);
  static GroupElement semilocal_perm(std::vector<std::uint8_t> bits);
  static GroupElement orthogonal(Eigen::MatrixXd Q);
  static GroupElement block_ortho(Eigen::MatrixXd tau, std::size_t dim);
  static GroupElement identity(std::size_t dim);

  void validate() const;
  bool is_perm() const {
    return kind == GroupKind::local_perm || kind == GroupKind::semilocal_perm;
  }
};

std::vector<double> apply(const GroupElement& e, std::span<const double> x);
// rows of X mapped by e
Tensor apply_rows(const GroupElement& e, const Tensor& X);
// (e1 * e2)(x) = e1(e2(x))
GroupElement compose(const GroupElement& e1, const GroupElement& e2);
GroupElement inverse(const GroupElement& e);
Eigen::MatrixXd to_matrix(const GroupElement& e);
// number of pairs where the two permutations differ
std::size_t rho_loc(const GroupElement& e1, const GroupElement& e2);

GroupElement random_local_perm(std::size_t pairs, std::uint64_t seed,
                               std::uint64_t index = 0);
// s distinct flipped pairs among the first `among` pairs
GroupElement flip_pairs(std::size_t pairs, std::size_t s, std::size_t among,
                        std::uint64_t seed, std::uint64_t index = 0);

// QR of a Gaussian matrix with R's diagonal made positive
GroupElement sample_haar_orthogonal(std::size_t dim, std::uint64_t seed,
                                    std::uint64_t index = 0);

// q(x) = sum_i x_{2i-1}^2 - x_{2i}^2
double q_form(std::span<const double> x);
// x_{1:d}^T U x_{d+1:2d}
double g_U(const Eigen::MatrixXd& U, std::span<const double> x);

struct TauU {
  Eigen::MatrixXd tau; // 2d x 2d
  double c = 0.0;      // q(tau x) = c g_U(x), measured
  double spread = 0.0; // max relative deviation of the probed ratio from c
};

// w_{2i-1} = (u_i + (Uv)_i)/sqrt2, w_{2i} = (u_i - (Uv)_i)/sqrt2 for x = (u, v)
TauU tau_U_construct(const Eigen::MatrixXd& U, std::size_t probes = 10000,
                     std::uint64_t seed = 0);

/**
 * theta -> Q(tau) theta with h_{Q(tau) theta}(tau x) = h_theta(x).
 * FCN: W1 <- W1 M^T for any element M.
 * LCN: permutation of the first-layer filter entries; needs a local or
 * semi-local permutation and an even stride.
 */
Params apply_param_action(const ArchConfig& cfg, const GroupElement& e,
                          const Params& theta);
bool param_action_supported(const ArchConfig& cfg, const GroupElement& e);

struct CoupledResult {
  double max_deviation = 0.0;
  std::vector<double> deviation; // per step
};

// trajectories from theta0 on S and from Q(tau) theta0 on tau(S) with the
// same minibatch masks; deviation max|theta'_t - Q theta_t| / (1 + ||theta_t||_P)
CoupledResult coupled_equivariance_test(const ArchConfig& cfg,
                                        const GroupElement& e,
                                        const Dataset& ds,
                                        const TrainConfig& tc,
                                        const InitScheme& init);

using Fn = std::function<double(std::span<const double>)>;

// unbiased estimate of ||f - g||^2_{L2(P)} with its standard error
Estimate mc_l2_distance(const Fn& f, const Fn& g, InputDist dist,
                        std::size_t input_dim, std::size_t n,
                        std::uint64_t seed, std::size_t threads = 1);

// separation target on R^{4d} composed with e, truncated at A0 when finite
Fn separation_composed(std::size_t d, const GroupElement& e, double A0);

// f_U(x) = (1/d) g_U(x_{1:2d}) q(x_{2d+1:4d}), truncated at A0 when finite
Fn f_U(const Eigen::MatrixXd& U, double A0);

// ||h o tau - h o tau'||^2 with tau' flipping s of the first d pairs
Estimate lcn_distance(std::size_t d, std::size_t s, double A0, std::size_t n,
                      std::uint64_t seed, std::size_t threads = 1);
Estimate fcn_distance(const Eigen::MatrixXd& U, const Eigen::MatrixXd& U2,
                      double A0, std::size_t n, std::uint64_t seed,
                      std::size_t threads = 1);

// fraction of std Gaussian inputs with |h*(x)| > A0
Estimate truncation_rate(std::size_t d, double A0, std::size_t n,
                         std::uint64_t seed, std::size_t threads = 1);

} // namespace cnnlab
