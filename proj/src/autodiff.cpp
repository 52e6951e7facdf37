// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/autodiff.hpp>

#include "kernels.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

namespace cnnlab {

const Tensor& Var::value() const {
  if (!valid())
    throw std::invalid_argument("value() on an unbound Var");
  return tape_->value(*this);
}

void Tape::check(Var v, const char* what) const {
  if (v.tape() != this || v.id() < 0 ||
      static_cast<std::size_t>(v.id()) >= nodes_.size())
    throw std::invalid_argument(fmt::format("{}: Var is not on this tape", what));
}

Var Tape::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Tensor t) {
  Node n;
  n.value = std::move(t);
  n.is_variable = true;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Tensor value, std::vector<Var> parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    check(p, "record");
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (n.requires_grad)
    n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Tensor& Tape::value(Var v) const {
  check(v, "value");
  return nodes_[v.id()].value;
}

bool Tape::requires_grad(Var v) const {
  check(v, "requires_grad");
  return nodes_[v.id()].requires_grad;
}

Tensor& Tape::grad(Var v) {
  check(v, "grad");
  Node& n = nodes_[v.id()];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape, 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

std::vector<Tensor> Tape::gradient(Var objective,
                                   const std::vector<Var>& params) {
  check(objective, "gradient");
  for (const Var& p : params) {
    if (p.tape() != this || p.id() < 0 ||
        static_cast<std::size_t>(p.id()) >= nodes_.size() ||
        !nodes_[p.id()].is_variable)
      throw std::invalid_argument(
        "gradient: parameter is not a variable recorded on this tape");
  }
  if (nodes_[objective.id()].value.size() != 1)
    throw std::invalid_argument(
      fmt::format("gradient: objective must be scalar, got shape {}",
                  nodes_[objective.id()].value.shape_str()));

  for (Node& n : nodes_) {
    n.grad = Tensor();
    n.has_grad = false;
  }
  grad(objective).values[0] = 1.0;
  for (int i = objective.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward)
      continue;
    n.backward(*this, n.grad);
  }

  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Var& p : params) {
    const Node& n = nodes_[p.id()];
    out.push_back(n.has_grad ? n.grad : Tensor(n.value.shape, 0.0));
  }
  return out;
}

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape())
    throw std::invalid_argument(fmt::format("{}: operands on different tapes", op));
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(fmt::format("{}: shape {} vs {}", op,
                                            a.value().shape_str(),
                                            b.value().shape_str()));
}

template <class F, class D> Var unary(Var a, F f, D df) {
  Tensor out = a.value();
  for (double& v : out.values)
    v = f(v);
  return a.tape()->record(std::move(out), {a},
                          [a, df](Tape& t, const Tensor& g) {
                            const Tensor& x = t.value(a);
                            Tensor& ga = t.grad(a);
                            for (std::size_t i = 0; i < g.size(); ++i)
                              ga[i] += g[i] * df(x[i]);
                          });
}

} // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] += b.value()[i];
  return a.tape()->record(std::move(out), {a, b},
                          [a, b](Tape& t, const Tensor& g) {
                            if (t.requires_grad(a)) {
                              Tensor& ga = t.grad(a);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                ga[i] += g[i];
                            }
                            if (t.requires_grad(b)) {
                              Tensor& gb = t.grad(b);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                gb[i] += g[i];
                            }
                          });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] -= b.value()[i];
  return a.tape()->record(std::move(out), {a, b},
                          [a, b](Tape& t, const Tensor& g) {
                            if (t.requires_grad(a)) {
                              Tensor& ga = t.grad(a);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                ga[i] += g[i];
                            }
                            if (t.requires_grad(b)) {
                              Tensor& gb = t.grad(b);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                gb[i] -= g[i];
                            }
                          });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] *= b.value()[i];
  return a.tape()->record(std::move(out), {a, b},
                          [a, b](Tape& t, const Tensor& g) {
                            const Tensor& av = t.value(a);
                            const Tensor& bv = t.value(b);
                            if (t.requires_grad(a)) {
                              Tensor& ga = t.grad(a);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                ga[i] += g[i] * bv[i];
                            }
                            if (t.requires_grad(b)) {
                              Tensor& gb = t.grad(b);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                gb[i] += g[i] * av[i];
                            }
                          });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; },
               [c](double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; },
               [](double) { return 1.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; },
               [](double x) { return 2.0 * x; });
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().values)
    acc += v;
  return a.tape()->record(Tensor::scalar(acc), {a},
                          [a](Tape& t, const Tensor& g) {
                            Tensor& ga = t.grad(a);
                            for (double& v : ga.values)
                              v += g[0];
                          });
}

Var mean(Var a) {
  std::size_t n = a.value().size();
  if (n == 0)
    throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var dot(Var a, Var b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i)
    acc += a.value()[i] * b.value()[i];
  return a.tape()->record(Tensor::scalar(acc), {a, b},
                          [a, b](Tape& t, const Tensor& g) {
                            const Tensor& av = t.value(a);
                            const Tensor& bv = t.value(b);
                            if (t.requires_grad(a)) {
                              Tensor& ga = t.grad(a);
                              for (std::size_t i = 0; i < av.size(); ++i)
                                ga[i] += g[0] * bv[i];
                            }
                            if (t.requires_grad(b)) {
                              Tensor& gb = t.grad(b);
                              for (std::size_t i = 0; i < av.size(); ++i)
                                gb[i] += g[0] * av[i];
                            }
                          });
}

// subgradient 0 at the origin
Var frob_norm(Var a) {
  double nrm = a.value().frobenius();
  return a.tape()->record(Tensor::scalar(nrm), {a},
                          [a, nrm](Tape& t, const Tensor& g) {
                            if (nrm == 0.0)
                              return;
                            const Tensor& av = t.value(a);
                            Tensor& ga = t.grad(a);
                            for (std::size_t i = 0; i < av.size(); ++i)
                              ga[i] += g[0] * av[i] / nrm;
                          });
}

Var relu(Var a) {
  return unary(a, [](double x) { return relu(x); },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var relu2(Var a) {
  return unary(a, [](double x) { return relu2(x); },
               [](double x) { return 2.0 * relu(x); });
}

Var truncate(Var a, double A) {
  if (!(A >= 0.0))
    throw std::invalid_argument(fmt::format("truncate: A={} < 0", A));
  return unary(a, [A](double x) { return std::max(std::min(x, A), -A); },
               [A](double x) { return (x > -A && x < A) ? 1.0 : 0.0; });
}

Var conv_stride(Var v, Var w, std::size_t s) {
  const Tensor& vv = v.value();
  const Tensor& wv = w.value();
  Tensor out = Tensor::vector(cnnlab::conv_stride(vv.values, wv.values, s));
  std::size_t D = vv.size();
  return v.tape()->record(
    std::move(out), {v, w}, [v, w, s, D](Tape& t, const Tensor& g) {
      double* dv = t.requires_grad(v) ? t.grad(v).values.data() : nullptr;
      double* dw = t.requires_grad(w) ? t.grad(w).values.data() : nullptr;
      kernels::conv_bwd(t.value(v).values.data(), 1, D, 1,
                        t.value(w).values.data(), 1, s, s, g.values.data(), dv,
                        dw, nullptr);
    });
}

Var conv_plain(Var v, Var w) {
  const Tensor& vv = v.value();
  const Tensor& wv = w.value();
  Tensor out = Tensor::vector(cnnlab::conv_plain(vv.values, wv.values));
  std::size_t D = vv.size();
  std::size_t f = wv.size();
  return v.tape()->record(
    std::move(out), {v, w}, [v, w, f, D](Tape& t, const Tensor& g) {
      double* dv = t.requires_grad(v) ? t.grad(v).values.data() : nullptr;
      double* dw = t.requires_grad(w) ? t.grad(w).values.data() : nullptr;
      kernels::conv_bwd(t.value(v).values.data(), 1, D, 1,
                        t.value(w).values.data(), 1, f, 1, g.values.data(), dv,
                        dw, nullptr);
    });
}

Var local_op(Var v, Var w, std::size_t s) {
  const Tensor& vv = v.value();
  const Tensor& wv = w.value();
  Tensor out = Tensor::vector(cnnlab::local_op(vv.values, wv.values, s));
  std::size_t D = vv.size();
  return v.tape()->record(
    std::move(out), {v, w}, [v, w, s, D](Tape& t, const Tensor& g) {
      double* dv = t.requires_grad(v) ? t.grad(v).values.data() : nullptr;
      double* dw = t.requires_grad(w) ? t.grad(w).values.data() : nullptr;
      kernels::local_bwd(t.value(v).values.data(), 1, D, 1,
                         t.value(w).values.data(), 1, s, g.values.data(), dv,
                         dw, nullptr);
    });
}

Var conv_layer(Var z, Var W, Var b, std::size_t filter, std::size_t stride) {
  const Tensor& zv = z.value();
  const Tensor& Wv = W.value();
  if (zv.rank() != 3 || Wv.rank() != 3 || Wv.dim(2) != filter ||
      Wv.dim(1) != zv.dim(2) || b.value().size() != Wv.dim(0) || stride == 0 ||
      zv.dim(1) < filter || (zv.dim(1) - filter) % stride != 0)
    throw std::invalid_argument(fmt::format(
      "conv_layer: z {} W {} b {} filter {} stride {}", zv.shape_str(),
      Wv.shape_str(), b.value().shape_str(), filter, stride));
  std::size_t N = zv.dim(0), D = zv.dim(1), Cin = zv.dim(2), Cout = Wv.dim(0);
  std::size_t Dout = (D - filter) / stride + 1;
  Tensor out({N, Dout, Cout});
  kernels::conv_fwd(zv.values.data(), N, D, Cin, Wv.values.data(),
                    b.value().values.data(), Cout, filter, stride,
                    out.values.data());
  return z.tape()->record(
    std::move(out), {z, W, b},
    [=](Tape& t, const Tensor& g) {
      double* dz = t.requires_grad(z) ? t.grad(z).values.data() : nullptr;
      double* dW = t.requires_grad(W) ? t.grad(W).values.data() : nullptr;
      double* db = t.requires_grad(b) ? t.grad(b).values.data() : nullptr;
      kernels::conv_bwd(t.value(z).values.data(), N, D, Cin,
                        t.value(W).values.data(), Cout, filter, stride,
                        g.values.data(), dz, dW, db);
    });
}

Var local_layer(Var z, Var W, Var b, std::size_t s) {
  const Tensor& zv = z.value();
  const Tensor& Wv = W.value();
  if (zv.rank() != 3 || Wv.rank() != 3 || s == 0 || zv.dim(1) % s != 0 ||
      Wv.dim(1) != zv.dim(2) || Wv.dim(2) != zv.dim(1) ||
      b.value().size() != (zv.dim(1) / s) * Wv.dim(0))
    throw std::invalid_argument(fmt::format("local_layer: z {} W {} b {} s {}",
                                            zv.shape_str(), Wv.shape_str(),
                                            b.value().shape_str(), s));
  std::size_t N = zv.dim(0), D = zv.dim(1), Cin = zv.dim(2), Cout = Wv.dim(0);
  Tensor out({N, D / s, Cout});
  kernels::local_fwd(zv.values.data(), N, D, Cin, Wv.values.data(),
                     b.value().values.data(), Cout, s, out.values.data());
  return z.tape()->record(
    std::move(out), {z, W, b}, [=](Tape& t, const Tensor& g) {
      double* dz = t.requires_grad(z) ? t.grad(z).values.data() : nullptr;
      double* dW = t.requires_grad(W) ? t.grad(W).values.data() : nullptr;
      double* db = t.requires_grad(b) ? t.grad(b).values.data() : nullptr;
      kernels::local_bwd(t.value(z).values.data(), N, D, Cin,
                         t.value(W).values.data(), Cout, s, g.values.data(), dz,
                         dW, db);
    });
}

Var dense_layer(Var z, Var W, Var b) {
  const Tensor& zv = z.value();
  const Tensor& Wv = W.value();
  if (zv.rank() != 2 || Wv.rank() != 2 || Wv.dim(1) != zv.dim(1) ||
      b.value().size() != Wv.dim(0))
    throw std::invalid_argument(fmt::format("dense_layer: z {} W {} b {}",
                                            zv.shape_str(), Wv.shape_str(),
                                            b.value().shape_str()));
  std::size_t N = zv.dim(0), Cin = zv.dim(1), Cout = Wv.dim(0);
  Tensor out({N, Cout});
  kernels::dense_fwd(zv.values.data(), N, Cin, Wv.values.data(),
                     b.value().values.data(), Cout, out.values.data());
  return z.tape()->record(
    std::move(out), {z, W, b}, [=](Tape& t, const Tensor& g) {
      double* dz = t.requires_grad(z) ? t.grad(z).values.data() : nullptr;
      double* dW = t.requires_grad(W) ? t.grad(W).values.data() : nullptr;
      double* db = t.requires_grad(b) ? t.grad(b).values.data() : nullptr;
      kernels::dense_bwd(t.value(z).values.data(), N, Cin,
                         t.value(W).values.data(), Cout, g.values.data(), dz,
                         dW, db);
    });
}

Var readout(Var z, Var Wo) {
  const Tensor& zv = z.value();
  const Tensor& wv = Wo.value();
  if (zv.rank() < 1 || zv.size() != zv.dim(0) * wv.size())
    throw std::invalid_argument(fmt::format("readout: z {} Wo {}",
                                            zv.shape_str(), wv.shape_str()));
  std::size_t N = zv.dim(0), K = wv.size();
  Tensor out({N});
  kernels::dense_fwd(zv.values.data(), N, K, wv.values.data(), nullptr, 1,
                     out.values.data());
  return z.tape()->record(
    std::move(out), {z, Wo}, [=](Tape& t, const Tensor& g) {
      double* dz = t.requires_grad(z) ? t.grad(z).values.data() : nullptr;
      double* dW = t.requires_grad(Wo) ? t.grad(Wo).values.data() : nullptr;
      kernels::dense_bwd(t.value(z).values.data(), N, K,
                         t.value(Wo).values.data(), 1, g.values.data(), dz, dW,
                         nullptr);
    });
}

Var truncated_sq_loss(Var pred, const Tensor& y, double B) {
  const Tensor& p = pred.value();
  if (p.size() != y.size() || p.size() == 0)
    throw std::invalid_argument(fmt::format(
      "truncated_sq_loss: prediction {} vs labels {}", p.shape_str(),
      y.shape_str()));
  double cap = std::isinf(B) ? std::numeric_limits<double>::infinity()
                             : 0.5 * B * B;
  std::size_t n = p.size();
  std::vector<double> dl(n, 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = p[i] - y[i];
    double l = 0.5 * r * r;
    if (l < cap) {
      acc += l;
      dl[i] = r / static_cast<double>(n);
    } else {
      acc += cap;
    }
  }
  return pred.tape()->record(
    Tensor::scalar(acc / static_cast<double>(n)), {pred},
    [pred, dl = std::move(dl)](Tape& t, const Tensor& g) {
      Tensor& gp = t.grad(pred);
      for (std::size_t i = 0; i < dl.size(); ++i)
        gp[i] += g[0] * dl[i];
    });
}

} // namespace cnnlab
