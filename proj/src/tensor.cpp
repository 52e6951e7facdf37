// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace cnnlab {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape_, double fill)
  : shape(std::move(shape_)), values(shape_product(shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> values_)
  : shape(std::move(shape_)), values(std::move(values_)) {
  if (shape_product(shape) != values.size())
    throw std::invalid_argument(
      fmt::format("tensor shape {} does not match {} values", shape_str(),
                  values.size()));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::vector(std::vector<double> v) {
  std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

double Tensor::item() const {
  if (values.size() != 1)
    throw std::invalid_argument(
      fmt::format("item() on tensor of shape {}", shape_str()));
  return values[0];
}

bool Tensor::all_finite() const {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

double Tensor::frobenius() const {
  double acc = 0.0;
  for (double v : values)
    acc += v * v;
  return std::sqrt(acc);
}

std::string Tensor::shape_str() const { return fmt::format("{}", shape); }

std::vector<double> conv_stride(std::span<const double> v,
                                std::span<const double> w, std::size_t s) {
  if (s == 0 || w.size() != s || v.size() % s != 0)
    throw std::invalid_argument(
      fmt::format("conv_stride: |v|={} |w|={} s={}", v.size(), w.size(), s));
  std::size_t k = v.size() / s;
  std::vector<double> out(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    double acc = 0.0;
    for (std::size_t t = 0; t < s; ++t)
      acc += v[j * s + t] * w[t];
    out[j] = acc;
  }
  return out;
}

std::vector<double> conv_plain(std::span<const double> v,
                               std::span<const double> w) {
  if (w.empty() || v.size() < w.size())
    throw std::invalid_argument(
      fmt::format("conv_plain: |v|={} < |w|={}", v.size(), w.size()));
  std::size_t k = v.size() - w.size() + 1;
  std::vector<double> out(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double acc = 0.0;
    for (std::size_t t = 0; t < w.size(); ++t)
      acc += v[i + t] * w[t];
    out[i] = acc;
  }
  return out;
}

std::vector<double> local_op(std::span<const double> v,
                             std::span<const double> w, std::size_t s) {
  if (s == 0 || v.size() != w.size() || v.size() % s != 0)
    throw std::invalid_argument(
      fmt::format("local_op: |v|={} |w|={} s={}", v.size(), w.size(), s));
  std::size_t k = v.size() / s;
  std::vector<double> out(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    double acc = 0.0;
    for (std::size_t t = 0; t < s; ++t)
      acc += v[j * s + t] * w[j * s + t];
    out[j] = acc;
  }
  return out;
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

double relu2(double x) {
  double r = relu(x);
  return r * r;
}

double truncate(double x, double A) {
  if (!(A >= 0.0))
    throw std::invalid_argument(fmt::format("truncate: A={} < 0", A));
  return std::max(std::min(x, A), -A);
}

namespace {
template <class F> Tensor map(const Tensor& t, F f) {
  Tensor out = t;
  for (double& v : out.values)
    v = f(v);
  return out;
}
} // namespace

Tensor relu(const Tensor& t) { return map(t, [](double x) { return relu(x); }); }

Tensor relu2(const Tensor& t) {
  return map(t, [](double x) { return relu2(x); });
}

Tensor truncate(const Tensor& t, double A) {
  if (!(A >= 0.0))
    throw std::invalid_argument(fmt::format("truncate: A={} < 0", A));
  return map(t, [A](double x) { return std::max(std::min(x, A), -A); });
}

} // namespace cnnlab
