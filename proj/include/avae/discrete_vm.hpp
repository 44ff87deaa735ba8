#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "avae/nets.hpp"
#include "avae/tensor.hpp"

namespace avae {

/// {c, 2c, ..., n c} with c = 2 pi / n.
struct VmGrid {
  std::size_t n = 32;

  double spacing() const;
  double point(std::size_t i) const { return static_cast<double>(i + 1) * spacing(); }
  Tensor points() const;
  /// Throws ConfigError when n < 2.
  void validate() const;
};

/// p(x) = exp(cos(x - mu) / v) / J(mu, v) over the grid. DomainError if v <= 0.
Tensor vm_density(const VmGrid& grid, double mu, double v);

/// Tabular decoder/encoder pair. The decoder mean table g is continuous
/// (not snapped to grid points); encoder spreads are exp(log_sigma).
struct TabularModel {
  VmGrid xgrid;
  VmGrid zgrid;
  Tensor g;          ///< [Nz] decoder means
  double v = 0.1;    ///< decoder spread, fixed
  Tensor mu;         ///< [Nx] encoder means
  Tensor log_sigma;  ///< [Nx] encoder log-spreads
  double nu_rho = 1e-3;

  void validate() const;
};

TabularModel init_tabular(std::size_t nx, std::size_t nz, double v, double nu_rho, std::uint64_t seed);

/// Row-stochastic conditionals: dec[z, x] = p(x|z), enc[x, z] = q(z|x).
struct Tables {
  Tensor dec;
  Tensor enc;
};
Tables tables(const TabularModel& m);

/// log p(z'|z) for the coupling VM(z'; z, nu), [Nz, Nz].
Tensor coupling_log_table(const VmGrid& zgrid, double nu);

/// p(x; theta) = sum_z p(z) p(x|z) with p(z) uniform.
Tensor model_marginal(const Tensor& dec);
/// Bayes posterior of the decoder, [Nx, Nz].
Tensor exact_posterior_table(const Tensor& dec);

/// KL(pi(X) q(Z|X) || p(X|Z) p(Z)) by exact summation.
double vae_kl_tables(const Tensor& enc, const Tensor& dec, const Tensor& pi);
/// -B_AVAE by exact summation: the VAE KL, minus the coupling cross term,
/// minus the entropy of q(Z'|X~) under X~ ~ p(X~|Z).
double avae_loss_tables(const Tensor& enc, const Tensor& dec, const Tensor& pi, const Tensor& log_coupling);

double exact_vae_loss(const TabularModel& m, const Tensor& pi);
double exact_avae_loss(const TabularModel& m, const Tensor& pi);

/// Enumeration guard for the (X, Z, X~, Z') sum.
inline constexpr double kEnumerationBudget = 64.0 * 64.0 * 64.0 * 64.0;

/// The four transition panels.
struct Heatmaps {
  Tensor decoder;   ///< (i)   p(X'|Z')                 [Nz, Nx]
  Tensor x_kernel;  ///< (ii)  Q(X'|X) p(X)             [Nx, Nx], rows X
  Tensor encoder;   ///< (iii) q(Z|X)                   [Nx, Nz]
  Tensor z_kernel;  ///< (iv)  Q(Z|Z') p(Z')            [Nz, Nz], rows Z'
};
Heatmaps transition_heatmaps(const Tensor& enc, const Tensor& dec);
Heatmaps transition_heatmaps(const TabularModel& m);

/// trace / total mass of a square matrix.
double diagonal_mass(const Tensor& m);

enum class TabularObjective { VAE, AVAE };

/// Graph form of the exact losses over the free parameters (g, mu, log_sigma).
struct TabularVars {
  Var g, mu, log_sigma;
};
TabularVars bind_tabular(Graph& graph, const TabularModel& m, bool frozen = false);
Var tabular_loss(Graph& graph, const TabularVars& vars, const TabularModel& m, const Tensor& pi,
                 TabularObjective obj);

struct TabularTrainConfig {
  TabularObjective objective = TabularObjective::VAE;
  std::size_t steps = 10000;
  AdamConfig adam{1e-2};
};

/// Adam on the exact loss; returns the loss before each step. Throws
/// NumericError naming the step on NaN, ConfigError past the enumeration budget.
std::vector<double> train_tabular(TabularModel& m, const Tensor& pi, const TabularTrainConfig& cfg);

/// Mixture of two VM bumps, normalised.
Tensor bimodal_histogram(const VmGrid& grid, double mu1 = 2.0, double mu2 = 4.5, double spread = 0.15,
                         double weight1 = 0.5);

}  // namespace avae
