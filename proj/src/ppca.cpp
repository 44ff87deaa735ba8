#include "avae/ppca.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "avae/errors.hpp"
#include "avae/rng.hpp"

namespace avae {

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

void require_dim(const char* what, Eigen::Index got, Eigen::Index want) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": got dimension " + std::to_string(got) + ", expected " +
                         std::to_string(want));
  }
}

}  // namespace

Eigen::MatrixXd PpcaModel::normal_matrix() const {
  return W.transpose() * W + v * Eigen::MatrixXd::Identity(W.cols(), W.cols());
}

double PpcaModel::condition_number() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(normal_matrix(), Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

void PpcaModel::validate() const {
  if (W.size() == 0) throw DimensionError("ppca: W is empty");
  if (!(v >= 0.0)) throw DomainError("ppca: observation variance must be >= 0");
  const double c = condition_number();
  if (!(c <= kPpcaConditionLimit)) {
    std::ostringstream os;
    os << "ppca: W^T W + vI is singular or ill-conditioned (condition number " << c << ")";
    throw NumericError(os.str());
  }
}

GaussianMoments exact_posterior(const PpcaModel& m, const Eigen::VectorXd& x) {
  m.validate();
  require_dim("exact_posterior", x.size(), m.obs_dim());
  Eigen::LLT<Eigen::MatrixXd> llt(m.normal_matrix());
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(m.latent_dim(), m.latent_dim()));
  return GaussianMoments{llt.solve(m.W.transpose() * x), m.v * inv};
}

Eigen::MatrixXd projection(const PpcaModel& m) {
  m.validate();
  Eigen::LLT<Eigen::MatrixXd> llt(m.normal_matrix());
  return m.W * llt.solve(m.W.transpose());
}

GaussianMoments x_transition(const PpcaModel& m, const Eigen::VectorXd& x) {
  require_dim("x_transition", x.size(), m.obs_dim());
  const Eigen::MatrixXd P = projection(m);
  return GaussianMoments{P * x, m.v * (P + Eigen::MatrixXd::Identity(P.rows(), P.cols()))};
}

LinearKernel z_kernel(const PpcaModel& m) {
  m.validate();
  const Eigen::Index d = m.latent_dim();
  Eigen::LLT<Eigen::MatrixXd> llt(m.normal_matrix());
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
  const Eigen::MatrixXd J = inv * (m.W.transpose() * m.W);
  const Eigen::MatrixXd S = m.v * (J + Eigen::MatrixXd::Identity(d, d)) * inv;
  return LinearKernel{J, S};
}

GaussianMoments z_transition(const PpcaModel& m, const Eigen::VectorXd& z) {
  require_dim("z_transition", z.size(), m.latent_dim());
  LinearKernel k = z_kernel(m);
  return GaussianMoments{k.J * z, k.S};
}

Eigen::MatrixXd marginal_cov(const PpcaModel& m) {
  return m.W * m.W.transpose() + m.v * Eigen::MatrixXd::Identity(m.obs_dim(), m.obs_dim());
}

Eigen::MatrixXd joint_x_cov(const PpcaModel& m) {
  const Eigen::Index n = m.obs_dim();
  const Eigen::MatrixXd C = marginal_cov(m);
  const Eigen::MatrixXd P = projection(m);
  Eigen::MatrixXd J(2 * n, 2 * n);
  J.topLeftCorner(n, n) = C;
  J.topRightCorner(n, n) = C * P.transpose();
  J.bottomLeftCorner(n, n) = P * C;
  J.bottomRightCorner(n, n) = P * C * P.transpose() + m.v * (P + Eigen::MatrixXd::Identity(n, n));
  return J;
}

GaussianMoments condition_gaussian(const Eigen::MatrixXd& joint, Eigen::Index na, const Eigen::VectorXd& b) {
  const Eigen::Index nb = joint.rows() - na;
  if (joint.rows() != joint.cols() || na <= 0 || nb <= 0) throw DimensionError("condition_gaussian: bad partition");
  require_dim("condition_gaussian", b.size(), nb);
  const Eigen::MatrixXd Saa = joint.topLeftCorner(na, na);
  const Eigen::MatrixXd Sab = joint.topRightCorner(na, nb);
  const Eigen::MatrixXd Sbb = joint.bottomRightCorner(nb, nb);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(Sbb);
  if (ldlt.info() != Eigen::Success) throw NumericError("condition_gaussian: observed block not factorizable");
  const Eigen::MatrixXd K = ldlt.solve(Sab.transpose()).transpose();
  return GaussianMoments{K * b, Saa - K * Sab.transpose()};
}

DriftTrace perturbed_drift(const PpcaModel& m, const Eigen::MatrixXd& delta, const Eigen::VectorXd& x0, int steps) {
  m.validate();
  require_dim("perturbed_drift x0", x0.size(), m.obs_dim());
  if (delta.rows() != m.latent_dim() || delta.cols() != m.obs_dim()) {
    throw DimensionError("perturbed_drift: delta must be latent x observation");
  }
  if (steps < 0) throw ConfigError("perturbed_drift: steps must be >= 0");
  Eigen::LLT<Eigen::MatrixXd> llt(m.normal_matrix());
  const Eigen::MatrixXd enc = llt.solve(m.W.transpose()) + delta;
  const Eigen::MatrixXd step_map = m.W * enc;
  // Orthogonal projector onto range(W), independent of v.
  const Eigen::MatrixXd G = m.W.transpose() * m.W;
  const Eigen::MatrixXd PW = m.W * G.ldlt().solve(m.W.transpose());
  const Eigen::VectorXd anchor = PW * x0;

  DriftTrace t;
  Eigen::VectorXd x = x0;
  for (int s = 0; s <= steps; ++s) {
    if (s > 0) x = step_map * x;
    t.states.push_back(x);
    t.orthogonal.push_back((x - PW * x).norm());
    t.distance.push_back((x - anchor).norm());
  }
  return t;
}

PpcaCheckReport run_ppca_identity_suite(std::uint64_t seed, int trials, int obs_dim, int latent_dim) {
  if (trials < 1 || latent_dim < 1 || obs_dim < latent_dim) throw ConfigError("ppca checks: bad dimensions");
  PpcaCheckReport rep;
  rep.trials = trials;
  rep.seed = seed;
  auto bump = [&](const std::string& k, double r) {
    auto [it, inserted] = rep.residuals.emplace(k, r);
    if (!inserted) it->second = std::max(it->second, r);
  };
  Rng base(seed, "ppca.suite");
  const Eigen::Index n = obs_dim, d = latent_dim;
  for (int t = 0; t < trials; ++t) {
    Rng rng = base.split(static_cast<std::uint64_t>(t));
    const Eigen::MatrixXd W = random_matrix(rng, n, d);
    const double v = 0.05 + rng.uniform();
    const PpcaModel m0{W, 0.0}, mv{W, v};

    const Eigen::MatrixXd P0 = projection(m0);
    bump("projection_idempotence", max_abs(P0 * P0 - P0));

    const Eigen::VectorXd x = random_matrix(rng, n, 1);
    // Posterior vs conditioning on the joint of (Z, X).
    Eigen::MatrixXd joint(d + n, d + n);
    joint.topLeftCorner(d, d) = Eigen::MatrixXd::Identity(d, d);
    joint.topRightCorner(d, n) = W.transpose();
    joint.bottomLeftCorner(n, d) = W;
    joint.bottomRightCorner(n, n) = marginal_cov(mv);
    const GaussianMoments cond = condition_gaussian(joint, d, x);
    const GaussianMoments post = exact_posterior(mv, x);
    bump("posterior_vs_conditioning", std::max(max_abs(cond.mean - post.mean), max_abs(cond.cov - post.cov)));

    const Eigen::MatrixXd JX = joint_x_cov(mv);
    const Eigen::MatrixXd cross = JX.topRightCorner(n, n);
    bump("x_joint_symmetry", max_abs(cross - cross.transpose()));
    bump("x_marginal_invariance", max_abs(JX.bottomRightCorner(n, n) - marginal_cov(mv)));

    const LinearKernel k = z_kernel(mv);
    bump("z_prior_invariance", max_abs(k.J * k.J.transpose() + k.S - Eigen::MatrixXd::Identity(d, d)));
    // J - I = -v (W^T W + vI)^-1 exactly, so the limit is read on W with singular values >= 2
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(W, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::MatrixXd W_wc =
        svd.matrixU() * svd.singularValues().cwiseMax(2.0).asDiagonal() * svd.matrixV().transpose();
    const PpcaModel m_small{W_wc, 1e-8};
    bump("z_kernel_identity_limit", max_abs(z_kernel(m_small).J - Eigen::MatrixXd::Identity(d, d)));

    const PpcaModel orth{W.householderQr().householderQ() * Eigen::MatrixXd::Identity(n, d), 0.0};
    const DriftTrace fixed = perturbed_drift(orth, Eigen::MatrixXd::Zero(d, n), x, 5);
    double fixed_res = 0.0;
    for (std::size_t s = 1; s < fixed.states.size(); ++s) {
      fixed_res = std::max({fixed_res, fixed.orthogonal[s], fixed.distance[s]});
    }
    bump("consistent_chain_fixed_point", fixed_res);
  }

  // Drift demo on the first instance's geometry.
  Rng demo(seed, "ppca.drift");
  const Eigen::MatrixXd W = random_matrix(demo, n, d);
  const PpcaModel m0{W, 0.0};
  const Eigen::MatrixXd pinv = (W.transpose() * W).ldlt().solve(W.transpose());
  const Eigen::MatrixXd delta = 0.05 * pinv + 0.01 * random_matrix(demo, d, n);
  const Eigen::VectorXd x0 = random_matrix(demo, n, 1);
  const DriftTrace tr = perturbed_drift(m0, delta, x0, 20);
  rep.drift_distance = tr.distance;
  rep.drift_orthogonal = tr.orthogonal;
  const DriftTrace cons = perturbed_drift(PpcaModel{W, 0.5}, Eigen::MatrixXd::Zero(d, n), x0, 20);
  for (const auto& s : cons.states) rep.drift_consistent.push_back(s.norm());
  return rep;
}

}  // namespace avae
