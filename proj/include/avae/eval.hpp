#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "avae/data.hpp"
#include "avae/nets.hpp"
#include "avae/objectives.hpp"

namespace avae {

/// Softmax classifier on f^mu features.
struct LinearProbe {
  Tensor weight;  ///< [latent, classes]
  Tensor bias;    ///< [classes]
};

struct ProbeConfig {
  AdamConfig adam{1e-3};
  std::size_t steps = 2000;
};

/// Full-batch Adam on mean cross-entropy, zero init.
LinearProbe train_probe_features(const Tensor& features, const std::vector<int>& labels, int classes,
                                 const ProbeConfig& cfg = {});
/// Features are the encoder means; the encoder is only read.
LinearProbe train_probe(const Encoder& enc, const Dataset& d, const std::string& task, const ProbeConfig& cfg = {});

Tensor probe_logits(const LinearProbe& p, const Tensor& features);
std::vector<int> probe_predict(const LinearProbe& p, const Tensor& features);
double probe_accuracy(const LinearProbe& p, const Tensor& features, const std::vector<int>& labels);

/// Per-row cross-entropy of probe(f^mu(x)); writes d(sum)/dx into grad when given.
Tensor probe_cross_entropy(const Encoder& enc, const LinearProbe& p, const Tensor& x, const std::vector<int>& labels,
                           Tensor* grad = nullptr);

struct AttackResult {
  /// Correct at x and at every iterate of every restart.
  std::vector<char> robust;
  double accuracy = 0.0;
  double nominal = 0.0;
  /// Highest-loss iterate per row, usable as a warm start.
  Tensor adversarial;
};

/// PGD on the probe's cross-entropy. Row i draws restart noise from
/// Rng(seed, "eval.attack." + stream).split(first_index + i), so results do not
/// depend on how rows are chunked.
AttackResult attack_probe(const Encoder& enc, const LinearProbe& p, const Tensor& x, const std::vector<int>& labels,
                          const PGDConfig& cfg, std::uint64_t seed, const std::string& stream = "",
                          const Tensor* warm_start = nullptr, std::size_t chunk = 250);

struct RobustnessReport {
  std::vector<std::string> tasks;
  std::vector<double> epsilons;
  std::map<std::string, double> nominal;
  std::map<std::string, std::vector<double>> adversarial;  ///< aligned with epsilons
  PGDConfig attack;
  std::uint64_t seed = 0;
  std::size_t examples = 0;

  std::string to_json() const;
  /// One row per task, one column per epsilon.
  std::string to_csv() const;
};

/// Attack settings come from `base`; its epsilon is replaced by each entry of `epsilons`.
/// Points misclassified before the attack count as failures.
RobustnessReport adversarial_accuracy(const Encoder& enc, const std::map<std::string, LinearProbe>& probes,
                                      const Dataset& d, const std::vector<double>& epsilons, const PGDConfig& base,
                                      std::uint64_t seed);

enum class ChainMode { Mean, Sampled };

/// x_{t+1} = g(z_t), z_t the mean of q(Z|x_t) or a reparameterised draw.
/// Returns W2(q(Z|x_0), q(Z|x_t)) for t = 0..steps, averaged over the rows of x0.
std::vector<double> chain_drift(const ModelPair& m, const Tensor& x0, int steps, ChainMode mode = ChainMode::Mean,
                                std::uint64_t seed = 0);

/// Mean over rows of the per-row sum of squared pixel errors against g(mean of q(Z|x)).
double reconstruction_mse(const ModelPair& m, const Tensor& x);

}  // namespace avae
