#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "avae/gaussian.hpp"
#include "avae/rng.hpp"
#include "avae/tensor.hpp"

namespace avae {

/// Minimum variance emitted by the encoder head.
inline constexpr double kVarianceFloor = 1e-6;

struct Linear {
  Tensor weight;  ///< [in, out]
  Tensor bias;    ///< [out]

  std::size_t in() const { return weight.shape()[0]; }
  std::size_t out() const { return weight.shape()[1]; }
};

/// f^mu and f^Sigma share a tanh trunk; the variance head is
/// softplus(.) + kVarianceFloor so it is a variance, not a log-variance.
struct Encoder {
  std::vector<Linear> trunk;
  Linear head_mu;
  Linear head_var;

  std::size_t input_dim() const;
  std::size_t latent_dim() const { return head_mu.out(); }
};

struct Decoder {
  std::vector<Linear> trunk;
  Linear head;

  std::size_t latent_dim() const;
  std::size_t output_dim() const { return head.out(); }
};

/// How log p(x|z) is evaluated. With mse_mode the Gaussian normaliser is
/// dropped and the residual is scaled by 1/(2 v): the v -> 0 "no observation
/// noise" regime, where v then acts only as a reconstruction weight.
struct ObservationModel {
  double v = 1.0;
  bool mse_mode = false;
};

struct ModelPair {
  Encoder encoder;
  Decoder decoder;
  ObservationModel obs;
};

struct Architecture {
  std::size_t input_dim = 0;
  std::size_t latent_dim = 8;
  std::vector<std::size_t> hidden = {64, 64};
};

/// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights, zero biases.
Linear init_linear(std::size_t in, std::size_t out, Rng& rng);
Encoder init_encoder(const Architecture& arch, Rng& rng);
Decoder init_decoder(const Architecture& arch, Rng& rng);
ModelPair init_model(const Architecture& arch, const ObservationModel& obs, std::uint64_t seed);

/// Parameter tensors in a fixed order with dotted names, e.g. "encoder.trunk.0.weight".
std::vector<std::pair<std::string, Tensor*>> named_parameters(ModelPair& m);
std::vector<std::pair<std::string, const Tensor*>> named_parameters(const ModelPair& m);
std::vector<std::pair<std::string, Tensor*>> named_parameters(Encoder& e, const std::string& prefix = "encoder");

/// Graph-bound views of the networks.
struct LinearVars {
  Var weight;
  Var bias;
};

struct EncoderVars {
  std::vector<LinearVars> trunk;
  LinearVars head_mu;
  LinearVars head_var;
};

struct DecoderVars {
  std::vector<LinearVars> trunk;
  LinearVars head;
};

struct ModelVars {
  EncoderVars encoder;
  DecoderVars decoder;
  ObservationModel obs;
  /// Same order as named_parameters(); frozen entries are graph constants.
  std::vector<std::pair<std::string, Var>> params;
};

struct Freeze {
  bool encoder = false;
  bool decoder = false;
};

ModelVars bind(Graph& g, const ModelPair& m, Freeze freeze = {});
EncoderVars bind_encoder(Graph& g, const Encoder& e, bool frozen, std::vector<std::pair<std::string, Var>>* out = nullptr);

/// q(Z|x) for a batch x: [batch, input] -> mu, var [batch, latent].
DiagGaussian encode(const EncoderVars& enc, const Var& x);
/// g(z): [batch, latent] -> [batch, output].
Var decode(const DecoderVars& dec, const Var& z);

/// log p(x|z) per example, [batch].
Var log_likelihood(const ObservationModel& obs, const Var& x, const Var& mean);

/// Forward-only conveniences for evaluation code.
struct DiagMoments {
  Tensor mu;
  Tensor var;
};
DiagMoments encode_values(const Encoder& e, const Tensor& x);
Tensor decode_values(const Decoder& d, const Tensor& z);

/// Collect gradients in named_parameters() order (zeros for frozen entries).
std::vector<Tensor> gather_gradients(const Gradients& grads, const ModelVars& vars);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::uint64_t step = 0;
  std::vector<std::string> names;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  AdamState() = default;
  AdamState(AdamConfig c, const std::vector<std::pair<std::string, Tensor*>>& params);
};

/// One bias-corrected Adam update. Throws NumericError naming the parameter
/// if any gradient is NaN or infinite.
void adam_step(AdamState& state, const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

/// FNV-1a over the raw bytes of all parameters, for bitwise-equality checks.
std::uint64_t parameter_checksum(const std::vector<std::pair<std::string, const Tensor*>>& params);

}  // namespace avae
