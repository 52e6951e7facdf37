// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cnnlab/constructor.hpp>
#include <cnnlab/tensor.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>

namespace cnnlab {

enum class InputDist { uniform_cube, std_gaussian };

InputDist dist_from_string(const std::string& s);
std::string to_string(InputDist d);

enum class TargetKind { sparse, separation, truncated_separation, product, custom };

/**
 * Target function over R^{input_dim}. Sparse targets evaluate g on x_I;
 * product(i, j) is x_i * x_j with 1-based indices in I.
 */
struct TargetSpec {
  TargetKind kind = TargetKind::separation;
  std::size_t input_dim = 0;
  double A0 = 10.0;
  IndexSet I;
  TwoLayerNet g;
  std::function<double(std::span<const double>)> custom;

  static TargetSpec separation(std::size_t input_dim);
  static TargetSpec truncated_separation(std::size_t input_dim, double A0 = 10.0);
  static TargetSpec product(std::size_t input_dim, std::size_t i, std::size_t j);
  static TargetSpec sparse(std::size_t input_dim, IndexSet I, TwoLayerNet g);

  void validate() const;
};

// (1/d) (sum_{i<=d} x_{2i-1}^2 - x_{2i}^2)(sum_{i<=d} x_{2d+2i-1}^2 - x_{2d+2i}^2)
double separation_target(std::span<const double> x);

double eval_target(const TargetSpec& spec, std::span<const double> x);

// rows drawn from the per-row streams (seed, purpose, row)
Tensor sample_inputs(InputDist dist, std::size_t input_dim, std::size_t n,
                     std::uint64_t seed, std::string_view purpose = "inputs",
                     std::size_t threads = 1);

struct Dataset {
  Tensor X; // n x input_dim
  Tensor y; // n
  double sigma = 0.0;
  std::uint64_t seed = 0;

  std::size_t n() const { return y.size(); }
  std::size_t input_dim() const { return X.dim(1); }
};

Dataset make_dataset(const TargetSpec& spec, InputDist dist, std::size_t n,
                     double sigma, std::uint64_t seed, std::size_t threads = 1);

// x columns then y, header x1..xD,y
void write_csv(std::ostream& os, const Dataset& ds);
Dataset read_csv(std::istream& is);
// magic, n, input_dim, sigma, seed, then X and y as little-endian float64
void write_binary(std::ostream& os, const Dataset& ds);
Dataset read_binary(std::istream& is);

} // namespace cnnlab
