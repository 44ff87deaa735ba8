#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>

#include "avae/tensor.hpp"

namespace avae {

/// Diagonal Gaussian with batched parameters: mu and var are [batch, dim]
/// (or [dim] for a single distribution). Per-distribution quantities below
/// reduce over the last axis, so they return [batch] (or a scalar).
struct DiagGaussian {
  DiagGaussian() = default;
  DiagGaussian(Var mu_, Var var_);

  Var mu;
  Var var;

  std::size_t dim() const { return mu.value().cols(); }
};

/// Joint prior p_rho(Z, Z') = N(0, [[I, rho I], [rho I, I]]).
/// rho == 1 is the deterministic Z' = Z flag and has no density.
struct CouplingPrior {
  double rho = 0.0;
  std::size_t dim = 0;

  bool is_identity() const { return rho == 1.0; }
  /// Throws DomainError unless |rho| < 1.
  void require_density() const;
};

/// mu + sqrt(var) * noise.
Var reparam_sample(const DiagGaussian& q, const Tensor& noise);

/// KL(q || N(0, I)) = 0.5 * sum(var + mu^2 - 1 - log var).
Var kl_to_standard(const DiagGaussian& q);

/// H[q] = 0.5 * sum(log(2 pi e var)).
Var entropy(const DiagGaussian& q);

/// E_q[log N(Z; 0, I)].
Var expected_log_standard_normal(const DiagGaussian& q);

/// E[log p_rho(Z'|Z)] with Z ~ q_z and Z' ~ q_zp drawn independently.
Var coupling_cross_expect(const DiagGaussian& q_z, const DiagGaussian& q_zp, const CouplingPrior& prior);

struct PairExpectation {
  Var value;      ///< log_joint + entropy
  Var psi;        ///< per-dimension cross-covariance of the correlated joint
  Var log_joint;  ///< E[log p_rho(Z', Z)] under the correlated joint
  Var entropy;    ///< entropy of the correlated joint
};

/// Pairwise term of the smooth-encoder bound, using the correlated joint
/// q(Z, Z') with diagonal cross-covariance psi chosen in closed form
/// (psi maximises the bound per dimension).
PairExpectation coupled_pair_expect(const DiagGaussian& q_z, const DiagGaussian& q_zp, const CouplingPrior& prior);

/// Same pairwise term at a caller-supplied psi (|psi_i| < sqrt(var_i var'_i)).
PairExpectation coupled_pair_expect_with_psi(const DiagGaussian& q_z, const DiagGaussian& q_zp,
                                             const CouplingPrior& prior, const Var& psi);

/// Plain (non-differentiable) Gaussian with full covariance.
struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Principal square root of a symmetric PSD matrix via eigendecomposition.
/// Small negative eigenvalues (round-off) are clamped to zero; clearly
/// negative ones raise NumericError naming the smallest eigenvalue.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

/// l2-Wasserstein distance between two Gaussians.
double w2_distance(const GaussianMoments& a, const GaussianMoments& b);

/// Diagonal fast path: sqrt(|mu_a - mu_b|^2 + sum (sigma_a - sigma_b)^2).
double w2_distance_diag(std::span<const double> mu_a, std::span<const double> var_a, std::span<const double> mu_b,
                        std::span<const double> var_b);

}  // namespace avae
