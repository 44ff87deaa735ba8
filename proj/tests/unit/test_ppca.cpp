#include <cmath>

#include "avae/ppca.hpp"
#include "avae/rng.hpp"
#include "doctest.h"

using namespace avae;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Posterior through the joint precision of (Z, X), a different route from
// the covariance-based formulas in the library.
GaussianMoments posterior_by_precision(const Eigen::MatrixXd& W, double v, const Eigen::VectorXd& x) {
  const Eigen::Index d = W.cols();
  const Eigen::MatrixXd lzz = Eigen::MatrixXd::Identity(d, d) + W.transpose() * W / v;
  const Eigen::MatrixXd lzx = -W.transpose() / v;
  const Eigen::MatrixXd cov = lzz.inverse();
  return GaussianMoments{-cov * lzx * x, cov};
}

}  // namespace

TEST_CASE("posterior examples") {
  const PpcaModel m{Eigen::MatrixXd::Identity(3, 3), 1.0};
  const Eigen::Vector3d x(1.0, -2.0, 4.0);
  auto p = exact_posterior(m, x);
  CHECK((p.mean - x / 2).norm() < 1e-14);
  CHECK((p.cov - Eigen::MatrixXd::Identity(3, 3) / 2).norm() < 1e-14);

  Rng rng(1, "ppca.orth");
  const Eigen::MatrixXd Q = random_matrix(rng, 6, 2).householderQr().householderQ() * Eigen::MatrixXd::Identity(6, 2);
  const Eigen::VectorXd y = random_matrix(rng, 6, 1);
  auto lim = exact_posterior(PpcaModel{Q, 1e-10}, y);
  CHECK((lim.mean - Q.transpose() * y).norm() < 1e-8);
}

TEST_CASE("posterior equals Bayes rule on the joint") {
  Rng rng(2, "ppca.bayes");
  for (int t = 0; t < 10; ++t) {
    const Eigen::MatrixXd W = random_matrix(rng, 7, 3);
    const double v = 0.1 + rng.uniform();
    const Eigen::VectorXd x = random_matrix(rng, 7, 1);
    auto a = exact_posterior(PpcaModel{W, v}, x);
    auto b = posterior_by_precision(W, v, x);
    CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((a.cov - b.cov).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("projection at v=0 is idempotent and the chain stops") {
  Rng rng(3, "ppca.proj");
  for (int t = 0; t < 10; ++t) {
    const PpcaModel m{random_matrix(rng, 8, 3), 0.0};
    const Eigen::MatrixXd P = projection(m);
    CHECK((P * P - P).cwiseAbs().maxCoeff() < 1e-10);
    const Eigen::VectorXd x0 = random_matrix(rng, 8, 1);
    const Eigen::VectorXd x1 = x_transition(m, x0).mean;
    const Eigen::VectorXd x2 = x_transition(m, x1).mean;
    CHECK((x2 - x1).norm() < 1e-10 * (1 + x1.norm()));
  }
}

TEST_CASE("z kernel closed form and limits") {
  const PpcaModel one{Eigen::MatrixXd::Identity(1, 1), 1.0};
  auto k = z_kernel(one);
  CHECK(k.J(0, 0) == doctest::Approx(0.5));
  CHECK(k.S(0, 0) == doctest::Approx(0.75));

  // Monte Carlo through decode then encode: z -> x = z + n -> z' ~ posterior.
  Rng rng(4, "ppca.mc");
  const double z = 1.3;
  const int N = 400000;
  double s = 0, s2 = 0;
  for (int i = 0; i < N; ++i) {
    const double x = z + rng.normal();
    const double zp = x / 2 + std::sqrt(0.5) * rng.normal();
    s += zp;
    s2 += zp * zp;
  }
  const double m = s / N, var = s2 / N - m * m;
  CHECK(std::abs(m - 0.5 * z) < 4 * std::sqrt(0.75 / N));
  CHECK(std::abs(var - 0.75) < 0.01);

  Rng r2(5, "ppca.limits");
  const Eigen::MatrixXd W = random_matrix(r2, 6, 3);
  CHECK((z_kernel(PpcaModel{W, 1e-8}).J - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);
  auto kv = z_kernel(PpcaModel{W, 0.7});
  CHECK((kv.S - kv.S.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kv.S);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
  CHECK((kv.J * kv.J.transpose() + kv.S - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("x kernel leaves p(X) invariant with a symmetric joint") {
  Rng rng(6, "ppca.joint");
  const PpcaModel m{random_matrix(rng, 5, 2), 0.4};
  const Eigen::MatrixXd J = joint_x_cov(m);
  const Eigen::MatrixXd cross = J.topRightCorner(5, 5);
  CHECK((cross - cross.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((J.bottomRightCorner(5, 5) - marginal_cov(m)).cwiseAbs().maxCoeff() < 1e-10);
  // Cov(X, X') assembled by hand from the kernel: C P^T with C = W W^T + vI.
  const Eigen::MatrixXd C = m.W * m.W.transpose() + m.v * Eigen::MatrixXd::Identity(5, 5);
  const Eigen::MatrixXd M = m.W.transpose() * m.W + m.v * Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd P = m.W * M.inverse() * m.W.transpose();
  CHECK((cross - C * P.transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("ill-conditioned models are rejected") {
  Eigen::MatrixXd W(3, 2);
  W << 1, 2, 2, 4, 3, 6;  // rank 1
  CHECK_THROWS_AS(exact_posterior(PpcaModel{W, 0.0}, Eigen::Vector3d::Ones()), NumericError);
  CHECK_THROWS_WITH(projection(PpcaModel{W, 0.0}), doctest::Contains("condition number"));
  CHECK_NOTHROW(projection(PpcaModel{W, 1.0}));
  CHECK_THROWS_AS(exact_posterior(PpcaModel{W, 1.0}, Eigen::Vector2d::Ones()), DimensionError);
}

TEST_CASE("drift") {
  Rng rng(7, "ppca.drift");
  const Eigen::MatrixXd W = random_matrix(rng, 6, 2);
  const Eigen::VectorXd x0 = random_matrix(rng, 6, 1);

  auto still = perturbed_drift(PpcaModel{W, 0.0}, Eigen::MatrixXd::Zero(2, 6), x0, 10);
  CHECK(still.states.size() == 11);
  for (std::size_t s = 1; s < still.states.size(); ++s) {
    CHECK(still.orthogonal[s] < 1e-10);
    CHECK(still.distance[s] < 1e-10);
  }

  // delta with I + delta W expanding: the chain walks away.
  const Eigen::MatrixXd pinv = (W.transpose() * W).inverse() * W.transpose();
  const Eigen::MatrixXd delta = 0.05 * pinv + 0.01 * random_matrix(rng, 2, 6);
  Eigen::EigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd::Identity(2, 2) + delta * W);
  REQUIRE(es.eigenvalues().cwiseAbs().maxCoeff() > 1.0);
  auto walk = perturbed_drift(PpcaModel{W, 0.0}, delta, x0, 20);
  CHECK(walk.distance[20] > walk.distance[10]);
  CHECK(walk.distance[10] > walk.distance[2]);

  // delta = 0, v > 0: contraction at the largest eigenvalue of J.
  const PpcaModel mv{W, 0.5};
  auto shrink = perturbed_drift(mv, Eigen::MatrixXd::Zero(2, 6), x0, 30);
  const double lam = z_kernel(mv).J.eigenvalues().cwiseAbs().maxCoeff();
  CHECK(lam < 1.0);
  for (std::size_t s = 2; s < shrink.states.size(); ++s) {
    CHECK(shrink.states[s].norm() <= shrink.states[1].norm() * std::pow(lam, double(s - 1)) * (1 + 1e-9) *
                                          std::sqrt((W.transpose() * W).eigenvalues().real().maxCoeff() /
                                                    (W.transpose() * W).eigenvalues().real().minCoeff()));
  }
  CHECK(shrink.states[30].norm() < shrink.states[1].norm());
}

TEST_CASE("identity suite residuals are tiny and the report is stable") {
  auto a = run_ppca_identity_suite(11, 5);
  auto b = run_ppca_identity_suite(11, 5);
  CHECK(a.residuals.size() == 7);
  for (auto& [k, r] : a.residuals) {
    CAPTURE(k);
    CHECK(r < 1e-8);
    CHECK(b.residuals.at(k) == r);
  }
  CHECK(a.drift_distance.back() > a.drift_distance[1]);
  CHECK(a.drift_consistent.back() < a.drift_consistent.front());
}
