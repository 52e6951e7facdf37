// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cnnlab/autodiff.hpp>
#include <cnnlab/tensor.hpp>

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace cnnlab {

enum class Family { CNN, LCN, FCN };
enum class Activation { relu, relu2, identity };

std::string to_string(Family f);
std::string to_string(Activation a);
Family family_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

double activate(Activation a, double x);

/**
 * Architecture of a CNN / LCN / FCN.
 *
 * For CNN and LCN, channels[0] must be 1 and the spatial dimension shrinks
 * by the stride at each layer. For FCN, channels are layer widths with
 * channels[0] == input_dim. The no_stride flag selects the CNN mode whose
 * layers slide a length-`stride` filter with step 1 (D_l = D_{l-1}-s+1).
 */
struct ArchConfig {
  Family family = Family::CNN;
  std::size_t input_dim = 0;
  std::size_t depth = 0;
  std::size_t stride = 2;
  bool no_stride = false;
  std::vector<std::size_t> channels;
  std::vector<Activation> activations;

  static ArchConfig cnn(std::size_t input_dim, std::size_t s,
                        std::vector<std::size_t> channels,
                        std::vector<Activation> acts);
  static ArchConfig lcn(std::size_t input_dim, std::size_t s,
                        std::vector<std::size_t> channels,
                        std::vector<Activation> acts);
  static ArchConfig fcn(std::size_t input_dim, std::vector<std::size_t> widths,
                        std::vector<Activation> acts);
  static ArchConfig cnn_no_stride(std::size_t input_dim, std::size_t filter,
                                  std::vector<std::size_t> channels,
                                  std::vector<Activation> acts);

  void validate() const;
  // D_l; 1 for every FCN layer
  std::size_t spatial(std::size_t l) const;
  std::vector<std::size_t> w_shape(std::size_t l) const;
  std::vector<std::size_t> b_shape(std::size_t l) const;
  std::size_t out_dim() const { return spatial(depth) * channels[depth]; }

  bool operator==(const ArchConfig&) const = default;
};

/**
 * Trainable weights. W[l-1], b[l-1] hold layer l; Wo is the read-out of
 * vec(z^(L)) in row-major (position, channel) order. No output bias.
 */
struct Params {
  std::vector<Tensor> W;
  std::vector<Tensor> b;
  Tensor Wo;

  static Params zeros(const ArchConfig& cfg);
  void check(const ArchConfig& cfg) const;

  // layer-ordered W1, b1, ..., WL, bL, Wo
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  std::size_t size() const;

  Params operator-(const Params& o) const;
  bool operator==(const Params&) const = default;
};

double forward(const ArchConfig& cfg, const Params& theta,
               std::span<const double> x);
// X has shape {N, input_dim}
std::vector<double> forward_batch(const ArchConfig& cfg, const Params& theta,
                                  const Tensor& X);

// z^(l) as D_l x C_l (C_l for FCN); l = 0 returns the input
Tensor hidden_state(const ArchConfig& cfg, const Params& theta,
                    std::span<const double> x, std::size_t l);

struct LayerTrace {
  std::vector<Tensor> pre;  // T_l(z^(l-1)), l = 1..L
  std::vector<Tensor> post; // z^(l), l = 0..L
  double output = 0.0;
};
LayerTrace trace(const ArchConfig& cfg, const Params& theta,
                 std::span<const double> x);

double param_norm_P(const ArchConfig& cfg, const Params& theta);
std::size_t param_count(const ArchConfig& cfg);

// ||W_o||_2 + sum_l (||K^(l)||_2 + ||s^(l)||_2) with K^(l), s^(l) the
// matrix form of layer l; not defined for the no-stride mode
double param_norm_operator(const ArchConfig& cfg, const Params& theta);

// layer-wise local Lipschitz constants Q_l(x) valid on ||theta|| <= J
std::vector<double> activation_lipschitz(const ArchConfig& cfg,
                                         std::span<const double> x, double J);
double lipschitz_gap_bound(const ArchConfig& cfg, const Params& theta,
                           const Params& theta2, std::span<const double> x,
                           double J);

// forward through the dense block-matrix form T_l z = K^(l) z + s^(l)
double forward_patch_form(const ArchConfig& cfg, const Params& theta,
                          std::span<const double> x);

// LCN with the CNN's filters and biases replicated over every patch
std::pair<ArchConfig, Params> embed_cnn_as_lcn(const ArchConfig& cfg,
                                               const Params& theta);

struct ParamVars {
  std::vector<Var> W;
  std::vector<Var> b;
  Var Wo;

  std::vector<Var> all() const;
};
ParamVars bind(Tape& tape, const Params& theta);
Params unbind(const std::vector<Tensor>& grads, const ArchConfig& cfg);

// predictions {N} for X of shape {N, input_dim}
Var forward_tape(const ArchConfig& cfg, const ParamVars& pv, Tensor X);
Var param_norm_P_tape(const ArchConfig& cfg, const ParamVars& pv);

void save_binary(std::ostream& os, const ArchConfig& cfg, const Params& theta);
std::pair<ArchConfig, Params> load_binary(std::istream& is);
void save_binary(const std::string& path, const ArchConfig& cfg,
                 const Params& theta);
std::pair<ArchConfig, Params> load_binary(const std::string& path);

nlohmann::json to_json(const ArchConfig& cfg);
ArchConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ArchConfig& cfg, const Params& theta);
std::pair<ArchConfig, Params> from_json(const nlohmann::json& j);

} // namespace cnnlab
