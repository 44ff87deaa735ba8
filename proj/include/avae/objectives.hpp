#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "avae/gaussian.hpp"
#include "avae/nets.hpp"
#include "avae/rng.hpp"
#include "avae/tensor.hpp"

namespace avae {

enum class ObjectiveKind { VAE, AVAE, SE, SE_AVAE, AVAE_SS };

const char* kind_name(ObjectiveKind k);
/// Accepts "VAE", "AVAE", "SE", "SE_AVAE" (or "SE-AVAE"), "AVAE_SS" (or "AVAE-SS"), case-insensitive.
ObjectiveKind parse_kind(const std::string& s);

struct PGDConfig {
  double epsilon = 0.1;
  int steps = 20;
  /// Negative means epsilon / 4.
  double step_size = -1.0;
  /// Random starts in addition to the start at x itself.
  int restarts = 0;
  /// Clip iterates to the [0,1] pixel box.
  bool clip_box = true;

  double effective_step() const { return step_size < 0.0 ? epsilon / 4.0 : step_size; }
  static PGDConfig training(double eps) { return PGDConfig{eps, 20, -1.0, 0, true}; }
  static PGDConfig evaluation(double eps) { return PGDConfig{eps, 40, -1.0, 10, true}; }
};

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::VAE;
  double rho = 0.975;
  double rho_se = 0.95;
  std::optional<PGDConfig> attack;
  int mc_samples = 1;
  /// Add N(0, v I) observation noise to decoder delusions (default: mean only).
  bool delusion_noise = false;
  /// Multiplier on the SE cross term and its entropy inside SE-AVAE. 1 is the
  /// real objective; 0 ablates the smoothing path.
  double se_weight = 1.0;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

/// Per-objective random draws, fixed before the graph is built so that a loss
/// can be re-evaluated at matched samples.
struct Noise {
  std::vector<Tensor> eps;        ///< one [batch, latent] per MC sample
  std::vector<Tensor> obs;        ///< delusion observation noise, [batch, input] per sample (may be empty)
  std::optional<Tensor> prior_z;  ///< z'' ~ N(0, I) for AVAE-SS, [batch, latent]
};

Noise draw_noise(const ObjectiveConfig& cfg, std::size_t batch, std::size_t latent, std::size_t input, Rng& rng);

/// Inputs that enter every loss behind a stop-gradient.
struct Delusions {
  std::vector<Tensor> decoded;    ///< x~ = g(z) (+ noise) per MC sample
  std::optional<Tensor> attacked; ///< PGD output for SE-style objectives
  std::optional<Tensor> ss_input; ///< decoded prior sample for AVAE-SS
};

/// Batch means of the bound's pieces; loss = -(recon - kl + cross_avae + cross_se + entropy_terms).
/// For SE, cross_se holds E[log p(Z', Z)] under the correlated joint and kl is zero.
struct LossTerms {
  Var loss;
  Var recon;
  Var kl;
  Var cross_avae;
  Var cross_se;
  Var entropy_terms;
};

/// Computes the stop-gradient inputs from current parameter values.
Delusions make_delusions(const ModelPair& m, const Tensor& x, const ObjectiveConfig& cfg, const Noise& noise,
                         Rng* attack_rng = nullptr);

/// The loss with delusions recomputed inside the graph behind stop_gradient.
LossTerms objective_terms(Graph& g, const ModelVars& mv, const Tensor& x, const ObjectiveConfig& cfg,
                          const Noise& noise, Rng* attack_rng = nullptr);
/// The same loss with the stop-gradient inputs supplied as constants.
LossTerms objective_terms_given(Graph& g, const ModelVars& mv, const Tensor& x, const ObjectiveConfig& cfg,
                                const Noise& noise, const Delusions& d);

/// Convenience wrappers returning the scalar loss value.
double elbo(const ModelPair& m, const Tensor& x, const Noise& noise);
double avae_loss(const ModelPair& m, const Tensor& x, const ObjectiveConfig& cfg, const Noise& noise);
double se_loss(const ModelPair& m, const Tensor& x, const ObjectiveConfig& cfg, const Noise& noise);
double se_avae_loss(const ModelPair& m, const Tensor& x, const ObjectiveConfig& cfg, const Noise& noise);
double avae_ss_loss(const ModelPair& m, const ObjectiveConfig& cfg, const Noise& noise);

/// Generic projected sign-gradient ascent in an L-inf ball. `f` returns one
/// objective value per row and writes d(sum)/dx into grad. `observe` is called
/// on every iterate, the start point included. Per row, the best iterate is kept.
/// With `row_rngs`, restart noise for row r comes from (*row_rngs)[r] instead of `rng`.
using PgdObjective = std::function<Tensor(const Tensor& x, Tensor& grad)>;
using PgdObserver = std::function<void(const Tensor& x)>;
Tensor pgd_maximize(const Tensor& x, const PGDConfig& cfg, const PgdObjective& f, Rng* rng,
                    const Tensor* warm_start = nullptr, const PgdObserver& observe = {},
                    std::vector<Rng>* row_rngs = nullptr);

/// Per-row value of the representation-change objective
/// -E[log p(Z'|Z)] - H[q(Z'|x~)] - H[q(Z|x)] with the encoder frozen.
Tensor attack_objective(const Encoder& enc, const Tensor& x, const Tensor& x_tilde, double rho_se,
                        Tensor* grad = nullptr);

/// Smooth-encoder augmentation: PGD on attack_objective.
Tensor pgd_attack(const Encoder& enc, const Tensor& x, const PGDConfig& cfg, double rho_se, Rng* rng = nullptr);

struct MetricsRow {
  std::uint64_t step = 0;
  double loss = 0, recon = 0, kl = 0, cross_avae = 0, cross_se = 0, entropy_terms = 0;
  double wallclock_ms = 0;
};

struct TrainConfig {
  ObjectiveConfig objective;
  AdamConfig adam{1e-3};
  std::size_t batch = 64;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  /// AVAE-SS needs a decoder that was trained beforehand.
  bool pretrained_decoder = false;
  /// Off by default so metric logs are byte-identical across runs.
  bool record_wallclock = false;
};

struct TrainState {
  AdamState adam;
  std::uint64_t step = 0;
  /// Position of the named RNG streams, so a resumed run continues them.
  std::uint64_t batch_counter = 0;
  std::uint64_t noise_counter = 0;
  std::uint64_t attack_counter = 0;
};

using StepCallback = std::function<void(const MetricsRow&)>;

/// Minibatch Adam on the chosen objective. `data` is [n, input]; it may be
/// empty for AVAE-SS. Throws NumericError naming the step on divergence.
std::vector<MetricsRow> train(ModelPair& m, const Tensor& data, const TrainConfig& cfg, TrainState* state = nullptr,
                              const StepCallback& on_step = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& r);

}  // namespace avae
