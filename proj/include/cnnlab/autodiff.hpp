// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cnnlab/tensor.hpp>

#include <functional>
#include <vector>

namespace cnnlab {

class Tape;

/**
 * Handle to a node recorded on a Tape.
 */
class Var {
public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/**
 * Reverse-mode tape. Nodes are appended in evaluation order, so reverse
 * index order is a valid topological order for back-propagation.
 */
class Tape {
public:
  using Backward = std::function<void(Tape&, const Tensor& grad)>;

  Var constant(Tensor t);
  Var variable(Tensor t);
  Var record(Tensor value, std::vector<Var> parents, Backward backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  // zero-initialized on first access during a backward sweep
  Tensor& grad(Var v);

  std::vector<Tensor> gradient(Var objective, const std::vector<Var>& params);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool is_variable = false;
    bool requires_grad = false;
    Backward backward;
  };

  void check(Var v, const char* what) const;

  std::vector<Node> nodes_;
};

// elementwise and reductions
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
Var dot(Var a, Var b);
Var frob_norm(Var a);

// activations
Var relu(Var a);
Var relu2(Var a);
Var truncate(Var a, double A);

// vector convolutions
Var conv_stride(Var v, Var w, std::size_t s);
Var conv_plain(Var v, Var w);
Var local_op(Var v, Var w, std::size_t s);

// batched layers; z is N x D x C row-major (N x C for dense)
Var conv_layer(Var z, Var W, Var b, std::size_t filter, std::size_t stride);
Var local_layer(Var z, Var W, Var b, std::size_t s);
Var dense_layer(Var z, Var W, Var b);
Var readout(Var z, Var Wo);

// mean over samples of min(0.5 (p - y)^2, 0.5 B^2); B = inf disables the cap
Var truncated_sq_loss(Var pred, const Tensor& y, double B);

} // namespace cnnlab
