#include "avae/gaussian.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace avae {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

void require_same_dims(const DiagGaussian& a, const DiagGaussian& b, const char* what) {
  if (a.mu.shape() != b.mu.shape()) {
    throw DimensionError(std::string(what) + ": distribution shapes differ " + shape_str(a.mu.shape()) + " vs " +
                         shape_str(b.mu.shape()));
  }
}

}  // namespace

DiagGaussian::DiagGaussian(Var mu_, Var var_) : mu(mu_), var(var_) {
  if (mu.shape() != var.shape()) {
    throw DimensionError("DiagGaussian: mu " + shape_str(mu.shape()) + " and var " + shape_str(var.shape()) +
                         " differ");
  }
}

void CouplingPrior::require_density() const {
  if (!(std::abs(rho) < 1.0)) {
    throw DomainError("coupling prior with rho=" + std::to_string(rho) + " has no density (need |rho| < 1)");
  }
}

Var reparam_sample(const DiagGaussian& q, const Tensor& noise) {
  if (noise.shape() != q.mu.shape()) {
    throw DimensionError("reparam_sample: noise " + shape_str(noise.shape()) + " vs mu " + shape_str(q.mu.shape()));
  }
  Var eps = q.mu.graph()->constant(noise);
  return q.mu + sqrt(q.var) * eps;
}

Var kl_to_standard(const DiagGaussian& q) {
  Var t = q.var + square(q.mu) - log(q.var);
  return scale(add_scalar(sum_rows(t), -static_cast<double>(q.dim())), 0.5);
}

Var entropy(const DiagGaussian& q) {
  const double d = static_cast<double>(q.dim());
  return add_scalar(scale(sum_rows(log(q.var)), 0.5), 0.5 * d * (kLog2Pi + 1.0));
}

Var expected_log_standard_normal(const DiagGaussian& q) {
  const double d = static_cast<double>(q.dim());
  return add_scalar(scale(sum_rows(q.var + square(q.mu)), -0.5), -0.5 * d * kLog2Pi);
}

Var coupling_cross_expect(const DiagGaussian& q_z, const DiagGaussian& q_zp, const CouplingPrior& prior) {
  prior.require_density();
  require_same_dims(q_z, q_zp, "coupling_cross_expect");
  const double rho = prior.rho;
  const double s2 = 1.0 - rho * rho;
  const double d = static_cast<double>(q_z.dim());
  Var t = q_zp.var + scale(q_z.var, rho * rho) + square(q_zp.mu - scale(q_z.mu, rho));
  return add_scalar(scale(sum_rows(t), -0.5 / s2), -0.5 * d * (kLog2Pi + std::log(s2)));
}

PairExpectation coupled_pair_expect(const DiagGaussian& q_z, const DiagGaussian& q_zp, const CouplingPrior& prior) {
  if (!(prior.rho >= 0.0 && prior.rho < 1.0)) {
    throw DomainError("coupled_pair_expect: rho=" + std::to_string(prior.rho) + " outside [0, 1)");
  }
  require_same_dims(q_z, q_zp, "coupled_pair_expect");
  const double gamma = prior.rho / (1.0 - prior.rho * prior.rho);
  // psi = (sqrt(1 + 4 g^2 v v') - 1) / (2 g), written as 2 g v v' / (sqrt(1 + 4 g^2 v v') + 1)
  // so that it stays accurate as g -> 0 and is exactly 0 at rho = 0.
  Var vv = q_z.var * q_zp.var;
  Var root = add_scalar(sqrt(add_scalar(scale(vv, 4.0 * gamma * gamma), 1.0)), 1.0);
  Var psi = scale(vv, 2.0 * gamma) / root;
  return coupled_pair_expect_with_psi(q_z, q_zp, prior, psi);
}

PairExpectation coupled_pair_expect_with_psi(const DiagGaussian& q_z, const DiagGaussian& q_zp,
                                             const CouplingPrior& prior, const Var& psi) {
  prior.require_density();
  require_same_dims(q_z, q_zp, "coupled_pair_expect");
  if (psi.shape() != q_z.mu.shape()) {
    throw DimensionError("coupled_pair_expect: psi shape " + shape_str(psi.shape()));
  }
  const double rho = prior.rho;
  const double s2 = 1.0 - rho * rho;
  const double d = static_cast<double>(q_z.dim());
  // E[log p(Z', Z)] = sum_i -log 2pi - 0.5 log(1 - rho^2)
  //                 - (E z^2 + E z'^2 - 2 rho E z z') / (2 (1 - rho^2))
  Var quad = q_z.var + square(q_z.mu) + q_zp.var + square(q_zp.mu) - scale(psi + q_z.mu * q_zp.mu, 2.0 * rho);
  Var log_joint = add_scalar(scale(sum_rows(quad), -0.5 / s2), -d * (kLog2Pi + 0.5 * std::log(s2)));
  // Entropy of the 2x2 blocks [[v, psi], [psi, v']].
  Var det = q_z.var * q_zp.var - square(psi);
  Var ent = add_scalar(scale(sum_rows(log(det)), 0.5), d * (kLog2Pi + 1.0));
  return PairExpectation{log_joint + ent, psi, log_joint, ent};
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw DimensionError("psd_sqrt: matrix is not square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("psd_sqrt: eigendecomposition failed");
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double scale_ref = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -1e-10 * scale_ref) {
    std::ostringstream os;
    os << "covariance is not positive semi-definite: smallest eigenvalue " << ev.minCoeff();
    throw NumericError(os.str());
  }
  const Eigen::VectorXd root = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double w2_distance(const GaussianMoments& a, const GaussianMoments& b) {
  const auto n = a.mean.size();
  if (b.mean.size() != n || a.cov.rows() != n || a.cov.cols() != n || b.cov.rows() != n || b.cov.cols() != n) {
    throw DimensionError("w2_distance: dimension mismatch");
  }
  const Eigen::MatrixXd rb = psd_sqrt(b.cov);
  psd_sqrt(a.cov);  // validates a
  const Eigen::MatrixXd cross = psd_sqrt(rb * a.cov * rb);
  const double tr = (a.cov + b.cov - 2.0 * cross).trace();
  const double d2 = (a.mean - b.mean).squaredNorm() + tr;
  return std::sqrt(std::max(d2, 0.0));
}

double w2_distance_diag(std::span<const double> mu_a, std::span<const double> var_a, std::span<const double> mu_b,
                        std::span<const double> var_b) {
  const std::size_t n = mu_a.size();
  if (var_a.size() != n || mu_b.size() != n || var_b.size() != n) {
    throw DimensionError("w2_distance_diag: dimension mismatch");
  }
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (var_a[i] < 0.0 || var_b[i] < 0.0) {
      throw NumericError("w2_distance_diag: negative variance " + std::to_string(std::min(var_a[i], var_b[i])));
    }
    const double dm = mu_a[i] - mu_b[i];
    const double ds = std::sqrt(var_a[i]) - std::sqrt(var_b[i]);
    d2 += dm * dm + ds * ds;
  }
  return std::sqrt(d2);
}

}  // namespace avae
