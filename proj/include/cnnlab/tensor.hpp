// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cnnlab {

/**
 * Dense row-major float64 array.
 */
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape_, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape_, std::vector<double> values_);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  double item() const;
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  double frobenius() const;

  std::string shape_str() const;

  bool operator==(const Tensor&) const = default;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

// (v *_s w)_j = <v[I_j], w>,  I_j = [j s, (j+1) s)
std::vector<double> conv_stride(std::span<const double> v,
                                std::span<const double> w, std::size_t s);
// (v * w)_i = sum_j v_{i+j} w_j
std::vector<double> conv_plain(std::span<const double> v,
                               std::span<const double> w);
// patchwise dot of v and w over I_j
std::vector<double> local_op(std::span<const double> v,
                             std::span<const double> w, std::size_t s);

double relu(double x);
double relu2(double x);
double truncate(double x, double A);

Tensor relu(const Tensor& t);
Tensor relu2(const Tensor& t);
Tensor truncate(const Tensor& t, double A);

} // namespace cnnlab
