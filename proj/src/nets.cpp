// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/nets.hpp>

#include "kernels.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <fmt/format.h>

namespace cnnlab {

std::string to_string(Family f) {
  switch (f) {
  case Family::CNN:
    return "CNN";
  case Family::LCN:
    return "LCN";
  case Family::FCN:
    return "FCN";
  }
  return "?";
}

std::string to_string(Activation a) {
  switch (a) {
  case Activation::relu:
    return "relu";
  case Activation::relu2:
    return "relu2";
  case Activation::identity:
    return "identity";
  }
  return "?";
}

Family family_from_string(const std::string& s) {
  if (s == "CNN" || s == "cnn")
    return Family::CNN;
  if (s == "LCN" || s == "lcn")
    return Family::LCN;
  if (s == "FCN" || s == "fcn")
    return Family::FCN;
  throw std::invalid_argument(fmt::format("unknown family '{}'", s));
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu")
    return Activation::relu;
  if (s == "relu2")
    return Activation::relu2;
  if (s == "identity")
    return Activation::identity;
  throw std::invalid_argument(fmt::format("unknown activation '{}'", s));
}

double activate(Activation a, double x) {
  switch (a) {
  case Activation::relu:
    return relu(x);
  case Activation::relu2:
    return relu2(x);
  case Activation::identity:
    return x;
  }
  return x;
}

namespace {

void activate_inplace(Activation a, Tensor& t) {
  if (a == Activation::identity)
    return;
  for (double& v : t.values)
    v = activate(a, v);
}

Var activate(Activation a, Var v) {
  switch (a) {
  case Activation::relu:
    return relu(v);
  case Activation::relu2:
    return relu2(v);
  case Activation::identity:
    return v;
  }
  return v;
}

ArchConfig make(Family f, std::size_t input_dim, std::size_t s,
                std::vector<std::size_t> channels,
                std::vector<Activation> acts, bool no_stride) {
  ArchConfig c;
  c.family = f;
  c.input_dim = input_dim;
  c.depth = channels.empty() ? 0 : channels.size() - 1;
  c.stride = s;
  c.no_stride = no_stride;
  c.channels = std::move(channels);
  c.activations = std::move(acts);
  c.validate();
  return c;
}

double bias_weight(const ArchConfig& cfg, std::size_t l) {
  return cfg.family == Family::CNN
           ? std::sqrt(static_cast<double>(cfg.spatial(l)))
           : 1.0;
}

} // namespace

ArchConfig ArchConfig::cnn(std::size_t input_dim, std::size_t s,
                           std::vector<std::size_t> channels,
                           std::vector<Activation> acts) {
  return make(Family::CNN, input_dim, s, std::move(channels), std::move(acts),
              false);
}

ArchConfig ArchConfig::lcn(std::size_t input_dim, std::size_t s,
                           std::vector<std::size_t> channels,
                           std::vector<Activation> acts) {
  return make(Family::LCN, input_dim, s, std::move(channels), std::move(acts),
              false);
}

ArchConfig ArchConfig::fcn(std::size_t input_dim,
                           std::vector<std::size_t> widths,
                           std::vector<Activation> acts) {
  return make(Family::FCN, input_dim, 1, std::move(widths), std::move(acts),
              false);
}

ArchConfig ArchConfig::cnn_no_stride(std::size_t input_dim, std::size_t filter,
                                     std::vector<std::size_t> channels,
                                     std::vector<Activation> acts) {
  return make(Family::CNN, input_dim, filter, std::move(channels),
              std::move(acts), true);
}

void ArchConfig::validate() const {
  if (input_dim == 0 || depth == 0)
    throw std::invalid_argument(fmt::format(
      "ArchConfig: input_dim={} depth={} must be positive", input_dim, depth));
  if (channels.size() != depth + 1)
    throw std::invalid_argument(fmt::format(
      "ArchConfig: {} channel entries for depth {}", channels.size(), depth));
  if (activations.size() != depth)
    throw std::invalid_argument(
      fmt::format("ArchConfig: {} activations for depth {}",
                  activations.size(), depth));
  for (std::size_t c : channels)
    if (c == 0)
      throw std::invalid_argument("ArchConfig: zero channel count");
  if (family == Family::FCN) {
    if (channels[0] != input_dim)
      throw std::invalid_argument(fmt::format(
        "ArchConfig: FCN width C_0={} must equal input_dim={}", channels[0],
        input_dim));
    if (no_stride)
      throw std::invalid_argument("ArchConfig: no_stride is CNN-only");
    return;
  }
  if (channels[0] != 1)
    throw std::invalid_argument(
      fmt::format("ArchConfig: C_0={} must be 1", channels[0]));
  if (stride == 0)
    throw std::invalid_argument("ArchConfig: stride must be positive");
  if (no_stride) {
    if (family != Family::CNN)
      throw std::invalid_argument("ArchConfig: no_stride is CNN-only");
    if (input_dim < depth * (stride - 1) + 1)
      throw std::invalid_argument(fmt::format(
        "ArchConfig: depth {} with filter {} exceeds input_dim {}", depth,
        stride, input_dim));
    return;
  }
  std::size_t D = input_dim;
  for (std::size_t l = 0; l < depth; ++l) {
    if (D % stride != 0)
      throw std::invalid_argument(
        fmt::format("ArchConfig: stride^{} does not divide input_dim {}",
                    depth, input_dim));
    D /= stride;
  }
}

std::size_t ArchConfig::spatial(std::size_t l) const {
  if (family == Family::FCN)
    return l == 0 ? input_dim : 1;
  std::size_t D = input_dim;
  for (std::size_t i = 0; i < l; ++i)
    D = no_stride ? D - stride + 1 : D / stride;
  return D;
}

std::vector<std::size_t> ArchConfig::w_shape(std::size_t l) const {
  switch (family) {
  case Family::CNN:
    return {channels[l], channels[l - 1], stride};
  case Family::LCN:
    return {channels[l], channels[l - 1], spatial(l - 1)};
  case Family::FCN:
    return {channels[l], channels[l - 1]};
  }
  return {};
}

std::vector<std::size_t> ArchConfig::b_shape(std::size_t l) const {
  if (family == Family::LCN)
    return {spatial(l), channels[l]};
  return {channels[l]};
}

Params Params::zeros(const ArchConfig& cfg) {
  cfg.validate();
  Params p;
  for (std::size_t l = 1; l <= cfg.depth; ++l) {
    p.W.emplace_back(cfg.w_shape(l), 0.0);
    p.b.emplace_back(cfg.b_shape(l), 0.0);
  }
  p.Wo = Tensor({cfg.out_dim()}, 0.0);
  return p;
}

void Params::check(const ArchConfig& cfg) const {
  if (W.size() != cfg.depth || b.size() != cfg.depth)
    throw std::invalid_argument(fmt::format(
      "Params: {} layers for depth {}", W.size(), cfg.depth));
  for (std::size_t l = 1; l <= cfg.depth; ++l) {
    if (W[l - 1].shape != cfg.w_shape(l) ||
        W[l - 1].size() != shape_product(cfg.w_shape(l)))
      throw std::invalid_argument(
        fmt::format("Params: W^({}) has shape {}", l, W[l - 1].shape_str()));
    if (b[l - 1].shape != cfg.b_shape(l) ||
        b[l - 1].size() != shape_product(cfg.b_shape(l)))
      throw std::invalid_argument(
        fmt::format("Params: b^({}) has shape {}", l, b[l - 1].shape_str()));
  }
  if (Wo.size() != cfg.out_dim())
    throw std::invalid_argument(fmt::format(
      "Params: W_o has {} entries, expected {}", Wo.size(), cfg.out_dim()));
}

std::vector<double> Params::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  for (std::size_t l = 0; l < W.size(); ++l) {
    out.insert(out.end(), W[l].values.begin(), W[l].values.end());
    out.insert(out.end(), b[l].values.begin(), b[l].values.end());
  }
  out.insert(out.end(), Wo.values.begin(), Wo.values.end());
  return out;
}

void Params::assign(std::span<const double> flat) {
  if (flat.size() != size())
    throw std::invalid_argument(fmt::format(
      "Params::assign: {} values for {} parameters", flat.size(), size()));
  std::size_t k = 0;
  auto fill = [&](Tensor& t) {
    std::memcpy(t.values.data(), flat.data() + k, t.size() * sizeof(double));
    k += t.size();
  };
  for (std::size_t l = 0; l < W.size(); ++l) {
    fill(W[l]);
    fill(b[l]);
  }
  fill(Wo);
}

std::size_t Params::size() const {
  std::size_t n = Wo.size();
  for (std::size_t l = 0; l < W.size(); ++l)
    n += W[l].size() + b[l].size();
  return n;
}

Params Params::operator-(const Params& o) const {
  Params r = *this;
  auto sub = [](Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
      throw std::invalid_argument("Params difference: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i)
      a[i] -= b[i];
  };
  if (W.size() != o.W.size())
    throw std::invalid_argument("Params difference: depth mismatch");
  for (std::size_t l = 0; l < W.size(); ++l) {
    sub(r.W[l], o.W[l]);
    sub(r.b[l], o.b[l]);
  }
  sub(r.Wo, o.Wo);
  return r;
}

namespace {

// one layer on a batch; z is {N, D, C} (or {N, C} for FCN)
Tensor apply_layer(const ArchConfig& cfg, const Params& theta, std::size_t l,
                   const Tensor& z) {
  std::size_t N = z.dim(0);
  std::size_t Cin = cfg.channels[l - 1], Cout = cfg.channels[l];
  const Tensor& W = theta.W[l - 1];
  const Tensor& b = theta.b[l - 1];
  if (cfg.family == Family::FCN) {
    Tensor out({N, Cout});
    kernels::dense_fwd(z.values.data(), N, Cin, W.values.data(),
                       b.values.data(), Cout, out.values.data());
    return out;
  }
  std::size_t D = cfg.spatial(l - 1), Dout = cfg.spatial(l);
  Tensor out({N, Dout, Cout});
  if (cfg.family == Family::CNN)
    kernels::conv_fwd(z.values.data(), N, D, Cin, W.values.data(),
                      b.values.data(), Cout, cfg.stride,
                      cfg.no_stride ? 1 : cfg.stride, out.values.data());
  else
    kernels::local_fwd(z.values.data(), N, D, Cin, W.values.data(),
                       b.values.data(), Cout, cfg.stride, out.values.data());
  return out;
}

Tensor input_tensor(const ArchConfig& cfg, Tensor X) {
  if (X.rank() != 2 || X.dim(1) != cfg.input_dim)
    throw std::invalid_argument(fmt::format(
      "input of shape {} for input_dim {}", X.shape_str(), cfg.input_dim));
  if (cfg.family != Family::FCN)
    X.shape.push_back(1);
  return X;
}

Tensor single(const ArchConfig& cfg, std::span<const double> x) {
  if (x.size() != cfg.input_dim)
    throw std::invalid_argument(fmt::format(
      "input of length {} for input_dim {}", x.size(), cfg.input_dim));
  return Tensor({1, cfg.input_dim}, std::vector<double>(x.begin(), x.end()));
}

} // namespace

std::vector<double> forward_batch(const ArchConfig& cfg, const Params& theta,
                                  const Tensor& X) {
  theta.check(cfg);
  Tensor z = input_tensor(cfg, X);
  for (std::size_t l = 1; l <= cfg.depth; ++l) {
    z = apply_layer(cfg, theta, l, z);
    activate_inplace(cfg.activations[l - 1], z);
  }
  std::size_t N = z.dim(0);
  std::vector<double> out(N);
  kernels::dense_fwd(z.values.data(), N, cfg.out_dim(),
                     theta.Wo.values.data(), nullptr, 1, out.data());
  return out;
}

double forward(const ArchConfig& cfg, const Params& theta,
               std::span<const double> x) {
  return forward_batch(cfg, theta, single(cfg, x))[0];
}

LayerTrace trace(const ArchConfig& cfg, const Params& theta,
                 std::span<const double> x) {
  theta.check(cfg);
  LayerTrace tr;
  Tensor z = input_tensor(cfg, single(cfg, x));
  auto drop_batch = [&](const Tensor& t, std::size_t l) {
    if (cfg.family == Family::FCN)
      return Tensor({cfg.channels[l]}, t.values);
    return Tensor({cfg.spatial(l), cfg.channels[l]}, t.values);
  };
  tr.post.push_back(drop_batch(z, 0));
  for (std::size_t l = 1; l <= cfg.depth; ++l) {
    z = apply_layer(cfg, theta, l, z);
    tr.pre.push_back(drop_batch(z, l));
    activate_inplace(cfg.activations[l - 1], z);
    tr.post.push_back(drop_batch(z, l));
  }
  double out = 0.0;
  for (std::size_t k = 0; k < theta.Wo.size(); ++k)
    out += theta.Wo[k] * z[k];
  tr.output = out;
  return tr;
}

Tensor hidden_state(const ArchConfig& cfg, const Params& theta,
                    std::span<const double> x, std::size_t l) {
  if (l > cfg.depth)
    throw std::invalid_argument(
      fmt::format("hidden_state: layer {} beyond depth {}", l, cfg.depth));
  return trace(cfg, theta, x).post[l];
}

double param_norm_P(const ArchConfig& cfg, const Params& theta) {
  theta.check(cfg);
  double acc = theta.Wo.frobenius();
  for (std::size_t l = 1; l <= cfg.depth; ++l)
    acc += theta.W[l - 1].frobenius() +
           bias_weight(cfg, l) * theta.b[l - 1].frobenius();
  return acc;
}

std::size_t param_count(const ArchConfig& cfg) {
  cfg.validate();
  std::size_t n = cfg.out_dim();
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    std::size_t Cl = cfg.channels[l], Cn = cfg.channels[l + 1];
    switch (cfg.family) {
    case Family::CNN:
      n += (cfg.stride * Cl + 1) * Cn;
      break;
    case Family::LCN:
      n += (cfg.stride * Cl + 1) * Cn * cfg.spatial(l + 1);
      break;
    case Family::FCN:
      n += (Cl + 1) * Cn;
      break;
    }
  }
  return n;
}

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                         Eigen::RowMajor>;

double spectral_norm(const Mat& m) {
  if (m.size() == 0)
    return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

// rows co, columns (t, ci) of the patch block for patch j
Mat patch_block(const ArchConfig& cfg, const Params& theta, std::size_t l,
                std::size_t j) {
  std::size_t Cin = cfg.channels[l - 1], Cout = cfg.channels[l];
  std::size_t s = cfg.stride;
  const Tensor& W = theta.W[l - 1];
  Mat blk(Cout, s * Cin);
  for (std::size_t co = 0; co < Cout; ++co)
    for (std::size_t ci = 0; ci < Cin; ++ci)
      for (std::size_t t = 0; t < s; ++t)
        blk(co, t * Cin + ci) =
          cfg.family == Family::CNN
            ? W[(co * Cin + ci) * s + t]
            : W[(co * Cin + ci) * cfg.spatial(l - 1) + j * s + t];
  return blk;
}

void require_strided(const ArchConfig& cfg, const char* what) {
  if (cfg.no_stride)
    throw std::invalid_argument(
      fmt::format("{}: not defined for the no-stride mode", what));
}

} // namespace

double param_norm_operator(const ArchConfig& cfg, const Params& theta) {
  theta.check(cfg);
  require_strided(cfg, "param_norm_operator");
  double acc = theta.Wo.frobenius();
  for (std::size_t l = 1; l <= cfg.depth; ++l) {
    const Tensor& W = theta.W[l - 1];
    const Tensor& b = theta.b[l - 1];
    switch (cfg.family) {
    case Family::FCN: {
      Mat m = Eigen::Map<const Mat>(W.values.data(), W.dim(0), W.dim(1));
      acc += spectral_norm(m) + b.frobenius();
      break;
    }
    case Family::CNN:
      acc += spectral_norm(patch_block(cfg, theta, l, 0)) +
             std::sqrt(static_cast<double>(cfg.spatial(l))) * b.frobenius();
      break;
    case Family::LCN: {
      double k = 0.0;
      for (std::size_t j = 0; j < cfg.spatial(l); ++j)
        k = std::max(k, spectral_norm(patch_block(cfg, theta, l, j)));
      acc += k + b.frobenius();
      break;
    }
    }
  }
  return acc;
}

std::vector<double> activation_lipschitz(const ArchConfig& cfg,
                                         std::span<const double> x,
                                         double J) {
  double bound = 0.0;
  for (double v : x)
    bound += v * v;
  bound = std::sqrt(bound);
  std::vector<double> Q;
  for (std::size_t l = 1; l <= cfg.depth; ++l) {
    double pre = J * (bound + 1.0);
    if (cfg.activations[l - 1] == Activation::relu2) {
      Q.push_back(2.0 * pre);
      bound = pre * pre;
    } else {
      Q.push_back(1.0);
      bound = pre;
    }
  }
  return Q;
}

double lipschitz_gap_bound(const ArchConfig& cfg, const Params& theta,
                           const Params& theta2, std::span<const double> x,
                           double J) {
  require_strided(cfg, "lipschitz_gap_bound");
  double n1 = param_norm_P(cfg, theta), n2 = param_norm_P(cfg, theta2);
  if (n1 > J || n2 > J)
    throw std::invalid_argument(fmt::format(
      "lipschitz_gap_bound: parameter norms {} and {} exceed J={}", n1, n2, J));
  if (x.size() != cfg.input_dim)
    throw std::invalid_argument("lipschitz_gap_bound: input dimension");
  double qbar = 1.0;
  for (double q : activation_lipschitz(cfg, x, J))
    qbar *= q + 1.0;
  double xn = 0.0;
  for (double v : x)
    xn += v * v;
  xn = std::sqrt(xn);
  return qbar * (xn + 1.0) * std::pow(1.0 + J, static_cast<double>(cfg.depth)) *
         param_norm_operator(cfg, theta - theta2);
}

double forward_patch_form(const ArchConfig& cfg, const Params& theta,
                          std::span<const double> x) {
  theta.check(cfg);
  if (x.size() != cfg.input_dim)
    throw std::invalid_argument("forward_patch_form: input dimension");
  Eigen::VectorXd z = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
  for (std::size_t l = 1; l <= cfg.depth; ++l) {
    std::size_t Cin = cfg.channels[l - 1], Cout = cfg.channels[l];
    std::size_t Din = cfg.spatial(l - 1), Dout = cfg.spatial(l);
    const Tensor& W = theta.W[l - 1];
    const Tensor& b = theta.b[l - 1];
    Mat K = Mat::Zero(Dout * Cout, Din * Cin);
    Eigen::VectorXd sv(Dout * Cout);
    if (cfg.family == Family::FCN) {
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t ci = 0; ci < Cin; ++ci)
          K(co, ci) = W[co * Cin + ci];
      for (std::size_t co = 0; co < Cout; ++co)
        sv(co) = b[co];
    } else if (cfg.no_stride) {
      std::size_t f = cfg.stride;
      for (std::size_t i = 0; i < Dout; ++i)
        for (std::size_t co = 0; co < Cout; ++co) {
          for (std::size_t ci = 0; ci < Cin; ++ci)
            for (std::size_t t = 0; t < f; ++t)
              K(i * Cout + co, (i + t) * Cin + ci) = W[(co * Cin + ci) * f + t];
          sv(i * Cout + co) = b[co];
        }
    } else {
      std::size_t s = cfg.stride;
      for (std::size_t j = 0; j < Dout; ++j) {
        K.block(j * Cout, j * s * Cin, Cout, s * Cin) =
          patch_block(cfg, theta, l, j);
        for (std::size_t co = 0; co < Cout; ++co)
          sv(j * Cout + co) =
            cfg.family == Family::CNN ? b[co] : b[j * Cout + co];
      }
    }
    Eigen::VectorXd pre = K * z + sv;
    for (Eigen::Index i = 0; i < pre.size(); ++i)
      pre(i) = activate(cfg.activations[l - 1], pre(i));
    z = pre;
  }
  return Eigen::Map<const Eigen::VectorXd>(theta.Wo.values.data(),
                                           theta.Wo.size())
    .dot(z);
}

std::pair<ArchConfig, Params> embed_cnn_as_lcn(const ArchConfig& cfg,
                                               const Params& theta) {
  theta.check(cfg);
  if (cfg.family != Family::CNN || cfg.no_stride)
    throw std::invalid_argument("embed_cnn_as_lcn: strided CNN required");
  ArchConfig lc = cfg;
  lc.family = Family::LCN;
  lc.validate();
  Params p = Params::zeros(lc);
  std::size_t s = cfg.stride;
  for (std::size_t l = 1; l <= cfg.depth; ++l) {
    std::size_t Cin = cfg.channels[l - 1], Cout = cfg.channels[l];
    std::size_t Din = cfg.spatial(l - 1), Dout = cfg.spatial(l);
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t ci = 0; ci < Cin; ++ci)
        for (std::size_t j = 0; j < Dout; ++j)
          for (std::size_t t = 0; t < s; ++t)
            p.W[l - 1][(co * Cin + ci) * Din + j * s + t] =
              theta.W[l - 1][(co * Cin + ci) * s + t];
    for (std::size_t j = 0; j < Dout; ++j)
      for (std::size_t co = 0; co < Cout; ++co)
        p.b[l - 1][j * Cout + co] = theta.b[l - 1][co];
  }
  p.Wo = theta.Wo;
  return {lc, p};
}

std::vector<Var> ParamVars::all() const {
  std::vector<Var> out;
  for (std::size_t l = 0; l < W.size(); ++l) {
    out.push_back(W[l]);
    out.push_back(b[l]);
  }
  out.push_back(Wo);
  return out;
}

ParamVars bind(Tape& tape, const Params& theta) {
  ParamVars pv;
  for (std::size_t l = 0; l < theta.W.size(); ++l) {
    pv.W.push_back(tape.variable(theta.W[l]));
    pv.b.push_back(tape.variable(theta.b[l]));
  }
  pv.Wo = tape.variable(theta.Wo);
  return pv;
}

Params unbind(const std::vector<Tensor>& grads, const ArchConfig& cfg) {
  Params p = Params::zeros(cfg);
  if (grads.size() != 2 * cfg.depth + 1)
    throw std::invalid_argument("unbind: gradient list length");
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    p.W[l] = grads[2 * l];
    p.b[l] = grads[2 * l + 1];
  }
  p.Wo = grads.back();
  p.check(cfg);
  return p;
}

Var forward_tape(const ArchConfig& cfg, const ParamVars& pv, Tensor X) {
  Tape* tape = pv.Wo.tape();
  Var z = tape->constant(input_tensor(cfg, std::move(X)));
  for (std::size_t l = 1; l <= cfg.depth; ++l) {
    Var W = pv.W[l - 1], b = pv.b[l - 1];
    switch (cfg.family) {
    case Family::CNN:
      z = conv_layer(z, W, b, cfg.stride, cfg.no_stride ? 1 : cfg.stride);
      break;
    case Family::LCN:
      z = local_layer(z, W, b, cfg.stride);
      break;
    case Family::FCN:
      z = dense_layer(z, W, b);
      break;
    }
    z = activate(cfg.activations[l - 1], z);
  }
  return readout(z, pv.Wo);
}

Var param_norm_P_tape(const ArchConfig& cfg, const ParamVars& pv) {
  Var acc = frob_norm(pv.Wo);
  for (std::size_t l = 1; l <= cfg.depth; ++l) {
    acc = add(acc, frob_norm(pv.W[l - 1]));
    acc = add(acc, scale(frob_norm(pv.b[l - 1]), bias_weight(cfg, l)));
  }
  return acc;
}

namespace {

constexpr char kMagic[8] = {'C', 'N', 'N', 'L', 'A', 'B', 'P', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i)
    buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8))
    throw std::runtime_error("load_binary: truncated stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& os, double v) {
  put_u64(os, std::bit_cast<std::uint64_t>(v));
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

} // namespace

// layout: magic[8], family u64, no_stride u64, input_dim u64, depth u64,
// stride u64, channels u64[L+1], activations u64[L], count u64,
// then count float64 in Params::flatten order; all little-endian
void save_binary(std::ostream& os, const ArchConfig& cfg,
                 const Params& theta) {
  theta.check(cfg);
  os.write(kMagic, 8);
  put_u64(os, static_cast<std::uint64_t>(cfg.family));
  put_u64(os, cfg.no_stride ? 1 : 0);
  put_u64(os, cfg.input_dim);
  put_u64(os, cfg.depth);
  put_u64(os, cfg.stride);
  for (std::size_t c : cfg.channels)
    put_u64(os, c);
  for (Activation a : cfg.activations)
    put_u64(os, static_cast<std::uint64_t>(a));
  std::vector<double> flat = theta.flatten();
  put_u64(os, flat.size());
  for (double v : flat)
    put_f64(os, v);
}

std::pair<ArchConfig, Params> load_binary(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_binary: bad magic");
  ArchConfig cfg;
  std::uint64_t fam = get_u64(is);
  if (fam > 2)
    throw std::runtime_error("load_binary: bad family tag");
  cfg.family = static_cast<Family>(fam);
  cfg.no_stride = get_u64(is) != 0;
  cfg.input_dim = get_u64(is);
  cfg.depth = get_u64(is);
  cfg.stride = get_u64(is);
  if (cfg.depth > 4096)
    throw std::runtime_error("load_binary: implausible depth");
  for (std::size_t l = 0; l <= cfg.depth; ++l)
    cfg.channels.push_back(get_u64(is));
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    std::uint64_t a = get_u64(is);
    if (a > 2)
      throw std::runtime_error("load_binary: bad activation tag");
    cfg.activations.push_back(static_cast<Activation>(a));
  }
  cfg.validate();
  Params p = Params::zeros(cfg);
  std::uint64_t n = get_u64(is);
  if (n != p.size())
    throw std::runtime_error("load_binary: parameter count mismatch");
  std::vector<double> flat(n);
  for (double& v : flat)
    v = get_f64(is);
  p.assign(flat);
  return {cfg, p};
}

void save_binary(const std::string& path, const ArchConfig& cfg,
                 const Params& theta) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw std::runtime_error(fmt::format("cannot open {} for writing", path));
  save_binary(os, cfg, theta);
}

std::pair<ArchConfig, Params> load_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error(fmt::format("cannot open {}", path));
  return load_binary(is);
}

nlohmann::json to_json(const ArchConfig& cfg) {
  nlohmann::json j;
  j["family"] = to_string(cfg.family);
  j["input_dim"] = cfg.input_dim;
  j["depth"] = cfg.depth;
  j["stride"] = cfg.stride;
  j["no_stride"] = cfg.no_stride;
  j["channels"] = cfg.channels;
  std::vector<std::string> acts;
  for (Activation a : cfg.activations)
    acts.push_back(to_string(a));
  j["activations"] = acts;
  return j;
}

ArchConfig config_from_json(const nlohmann::json& j) {
  ArchConfig cfg;
  cfg.family = family_from_string(j.at("family").get<std::string>());
  cfg.input_dim = j.at("input_dim").get<std::size_t>();
  cfg.depth = j.at("depth").get<std::size_t>();
  cfg.stride = j.at("stride").get<std::size_t>();
  cfg.no_stride = j.value("no_stride", false);
  cfg.channels = j.at("channels").get<std::vector<std::size_t>>();
  for (const auto& a : j.at("activations"))
    cfg.activations.push_back(activation_from_string(a.get<std::string>()));
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const ArchConfig& cfg, const Params& theta) {
  theta.check(cfg);
  nlohmann::json j;
  j["config"] = to_json(cfg);
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < cfg.depth; ++l)
    layers.push_back({{"W", theta.W[l].values}, {"b", theta.b[l].values}});
  j["layers"] = layers;
  j["Wo"] = theta.Wo.values;
  return j;
}

std::pair<ArchConfig, Params> from_json(const nlohmann::json& j) {
  ArchConfig cfg = config_from_json(j.at("config"));
  Params p = Params::zeros(cfg);
  const auto& layers = j.at("layers");
  if (layers.size() != cfg.depth)
    throw std::invalid_argument("from_json: layer count mismatch");
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    auto W = layers[l].at("W").get<std::vector<double>>();
    auto b = layers[l].at("b").get<std::vector<double>>();
    if (W.size() != p.W[l].size() || b.size() != p.b[l].size())
      throw std::invalid_argument(
        fmt::format("from_json: layer {} size mismatch", l + 1));
    p.W[l].values = std::move(W);
    p.b[l].values = std::move(b);
  }
  auto Wo = j.at("Wo").get<std::vector<double>>();
  if (Wo.size() != p.Wo.size())
    throw std::invalid_argument("from_json: W_o size mismatch");
  p.Wo.values = std::move(Wo);
  return {cfg, p};
}

} // namespace cnnlab
