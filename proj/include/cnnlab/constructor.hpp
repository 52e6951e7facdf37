// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cnnlab/nets.hpp>

#include <span>
#include <utility>
#include <vector>

namespace cnnlab {

// ordered distinct 1-based coordinates
using IndexSet = std::vector<std::size_t>;

/**
 * f(x) = sum_j a_j relu(u_j . x + c_j); U is m x k row-major.
 */
struct TwoLayerNet {
  std::size_t m = 0;
  std::size_t k = 0;
  std::vector<double> a;
  std::vector<double> U;
  std::vector<double> c;

  std::span<const double> u(std::size_t j) const {
    return std::span<const double>(U).subspan(j * k, k);
  }
  double unit(std::size_t j, std::span<const double> x) const;
  double operator()(std::span<const double> x) const;
  void check() const;
};

void check_index_set(const IndexSet& I, std::size_t input_dim);
std::size_t exact_log2(std::size_t n, const char* what);

using Built = std::pair<ArchConfig, Params>;

// identity-activation CNN on R^d with z^(L) = x_I
Built build_linear_selector(std::size_t d, const IndexSet& I);

// ReLU CNN on R^{4d} with z^(L) = (relu(u_j . x_I + c_j))_j, W_o = 0
Built build_relu_selector(std::size_t d, const IndexSet& I,
                          const TwoLayerNet& feats);

// first log2(4d) - 1 layers; z^(L-1) is 2 x 4d with channels
// (relu(x_i), relu(-x_i)) for i = 1..2d in row 1 and 2d+1..4d in row 2
Built build_universal_feature_extractor(std::size_t d);

// extractor plus a last layer reproducing a two-layer net over R^{4d}
Built build_two_layer_sim(std::size_t d, const TwoLayerNet& net);

// exact CNN for (1/d)(sum_i x_{2i-1}^2 - x_{2i}^2)(sum_i x_{2d+2i-1}^2 - x_{2d+2i}^2)
Built build_separation_cnn(std::size_t d);
Built build_separation_lcn(std::size_t d);

// relu selector with W_o = a / m
Built assemble_sparse_cnn(std::size_t d, const IndexSet& I,
                          const TwoLayerNet& g);

// budgets used by norm assertions, with log d read as log2(4d)
constexpr double kNormBudgetC = 10.0;
double relu_selector_norm_budget(std::size_t d, const TwoLayerNet& feats);
double sparse_cnn_norm_budget(std::size_t d, const TwoLayerNet& g);

} // namespace cnnlab
