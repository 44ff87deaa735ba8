#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "avae/gaussian.hpp"

namespace avae {

/// Linear-Gaussian decoder x = W z + N(0, v I), z ~ N(0, I).
struct PpcaModel {
  Eigen::MatrixXd W;  ///< [observation, latent]
  double v = 0.0;

  Eigen::Index obs_dim() const { return W.rows(); }
  Eigen::Index latent_dim() const { return W.cols(); }
  /// W^T W + v I
  Eigen::MatrixXd normal_matrix() const;
  /// 2-norm condition number of the normal matrix.
  double condition_number() const;
  /// Throws NumericError if the normal matrix is singular or its condition
  /// number exceeds kPpcaConditionLimit, DimensionError on an empty W.
  void validate() const;
};

inline constexpr double kPpcaConditionLimit = 1e8;

/// Exact posterior q(Z|x): mean (W^T W + vI)^-1 W^T x, covariance v (W^T W + vI)^-1.
GaussianMoments exact_posterior(const PpcaModel& m, const Eigen::VectorXd& x);

/// P_{W,v} = W (W^T W + vI)^-1 W^T.
Eigen::MatrixXd projection(const PpcaModel& m);

/// Q(X'|X=x) = N(P x, v (P + I)).
GaussianMoments x_transition(const PpcaModel& m, const Eigen::VectorXd& x);

struct LinearKernel {
  Eigen::MatrixXd J;  ///< mean map
  Eigen::MatrixXd S;  ///< covariance
};

/// Q(Z'|Z) = N(J z, S) with J = (W^T W + vI)^-1 W^T W, S = v (J + I)(W^T W + vI)^-1.
LinearKernel z_kernel(const PpcaModel& m);
GaussianMoments z_transition(const PpcaModel& m, const Eigen::VectorXd& z);

/// Marginal covariance of X: W W^T + v I.
Eigen::MatrixXd marginal_cov(const PpcaModel& m);

/// Joint covariance of (X, X') under Q(X'|X) p(X), blocks [[C, C P^T], [P C, P C P^T + v(P+I)]].
Eigen::MatrixXd joint_x_cov(const PpcaModel& m);

/// Conditional of a zero-mean joint Gaussian: the block `a` (first na
/// coordinates) given the remaining coordinates equal to `b`.
GaussianMoments condition_gaussian(const Eigen::MatrixXd& joint_cov, Eigen::Index na, const Eigen::VectorXd& b);

struct DriftTrace {
  std::vector<Eigen::VectorXd> states;  ///< x_0 .. x_steps
  /// |x_t - P_W x_t|, the part outside range(W)
  std::vector<double> orthogonal;
  /// |x_t - P_W x_0|, distance from where a consistent pair would have stopped
  std::vector<double> distance;
};

/// Iterates x_{t+1} = W ((W^T W + vI)^-1 W^T + delta) x_t.
DriftTrace perturbed_drift(const PpcaModel& m, const Eigen::MatrixXd& delta, const Eigen::VectorXd& x0, int steps);

/// Closed-form identity residuals over random instances, keyed by check name.
struct PpcaCheckReport {
  std::map<std::string, double> residuals;  ///< max over trials
  std::vector<double> drift_distance;       ///< drift demo, nonzero delta
  std::vector<double> drift_orthogonal;
  std::vector<double> drift_consistent;     ///< delta = 0, v > 0
  int trials = 0;
  std::uint64_t seed = 0;
};

PpcaCheckReport run_ppca_identity_suite(std::uint64_t seed, int trials, int obs_dim = 8, int latent_dim = 3);

}  // namespace avae
