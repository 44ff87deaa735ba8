#include <cmath>
#include <numbers>

#include "avae/discrete_vm.hpp"
#include "avae/rng.hpp"
#include "doctest.h"

using namespace avae;

namespace {

double row_sum_error(const Tensor& t) {
  double worst = 0.0;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < t.cols(); ++c) s += t.at(r, c);
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

// Delusion part of the AVAE loss with the delusion decoder held at `dec0`,
// which is what the graph differentiates (decoder behind stop_gradient there).
double avae_with_fixed_delusions(const TabularModel& m, const Tensor& dec0, const Tensor& pi) {
  Tables t = tables(m);
  const Tensor lc = coupling_log_table(m.zgrid, m.nu_rho);
  return vae_kl_tables(t.enc, t.dec, pi) + (avae_loss_tables(t.enc, dec0, pi, lc) - vae_kl_tables(t.enc, dec0, pi));
}

// Entropy of q(Z'|X~) averaged over X~ ~ sum_z a(z) p(X~|z), written out directly.
double delusion_entropy(const Tables& t, const Tensor& pi) {
  const std::size_t nx = t.enc.rows(), nz = t.enc.cols();
  double h = 0.0;
  for (std::size_t z = 0; z < nz; ++z) {
    double a = 0.0;
    for (std::size_t x = 0; x < nx; ++x) a += pi[x] * t.enc.at(x, z);
    for (std::size_t xt = 0; xt < nx; ++xt) {
      double hx = 0.0;
      for (std::size_t zp = 0; zp < nz; ++zp) {
        const double q = t.enc.at(xt, zp);
        if (q > 0) hx -= q * std::log(q);
      }
      h += a * t.dec.at(z, xt) * hx;
    }
  }
  return h;
}

}  // namespace

TEST_CASE("vm density") {
  VmGrid g{16};
  CHECK(g.point(15) == doctest::Approx(2 * std::numbers::pi));
  for (double mu : {0.1, 1.0, 3.3, 6.0}) {
    for (double v : {0.01, 0.3, 5.0}) {
      Tensor p = vm_density(g, mu, v);
      double s = 0;
      for (double x : p.data()) s += x;
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
  Tensor peaked = vm_density(g, g.point(5), 0.01);
  std::size_t arg = 0;
  for (std::size_t i = 1; i < g.n; ++i)
    if (peaked[i] > peaked[arg]) arg = i;
  CHECK(arg == 5);
  CHECK(peaked[5] > 0.99);

  Tensor flat = vm_density(g, 2.0, 1e6);
  for (double x : flat.data()) CHECK(std::abs(x - 1.0 / 16) < 1e-6);

  CHECK_THROWS_AS(vm_density(g, 0.0, 0.0), DomainError);
  CHECK_THROWS_AS(vm_density(g, 0.0, -1.0), DomainError);
  CHECK_THROWS_AS(VmGrid{1}.validate(), ConfigError);
}

TEST_CASE("tables are row-stochastic") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TabularModel m = init_tabular(32, 32, 0.1, 1e-3, seed);
    Tables t = tables(m);
    CHECK(row_sum_error(t.dec) < 1e-12);
    CHECK(row_sum_error(t.enc) < 1e-12);
    Tensor lc = coupling_log_table(m.zgrid, m.nu_rho);
    Tensor c(lc.shape());
    for (std::size_t i = 0; i < lc.numel(); ++i) c[i] = std::exp(lc[i]);
    CHECK(row_sum_error(c) < 1e-12);
    CHECK(row_sum_error(exact_posterior_table(t.dec)) < 1e-12);
  }
}

TEST_CASE("consistent encoder has zero KL") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TabularModel m = init_tabular(32, 32, 0.2, 1e-3, seed);
    Tables t = tables(m);
    const Tensor post = exact_posterior_table(t.dec);
    const Tensor px = model_marginal(t.dec);
    CHECK(std::abs(vae_kl_tables(post, t.dec, px)) < 1e-10);
    // Any other encoder or histogram is strictly worse.
    CHECK(vae_kl_tables(t.enc, t.dec, px) > 0.0);
    CHECK(exact_vae_loss(m, bimodal_histogram(m.xgrid)) >= 0.0);
    CHECK(exact_vae_loss(m, vm_density(m.xgrid, 1.0, 3.0)) >= 0.0);
  }
}

TEST_CASE("graph losses equal the plain sums") {
  TabularModel m = init_tabular(12, 10, 0.3, 0.05, 3);
  const Tensor pi = bimodal_histogram(m.xgrid, 2.0, 4.5, 0.4);
  Graph g;
  TabularVars tv = bind_tabular(g, m);
  CHECK(std::abs(tabular_loss(g, tv, m, pi, TabularObjective::VAE).value().item() - exact_vae_loss(m, pi)) < 1e-12);
  CHECK(std::abs(tabular_loss(g, tv, m, pi, TabularObjective::AVAE).value().item() - exact_avae_loss(m, pi)) < 1e-11);
}

TEST_CASE("exact loss gradients match finite differences") {
  const double h = 1e-6;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TabularModel m = init_tabular(10, 8, 0.4, 0.05, 10 + seed);
    const Tensor pi = bimodal_histogram(m.xgrid, 1.0, 4.0, 0.5, 0.3);
    const Tensor dec0 = tables(m).dec;
    for (TabularObjective obj : {TabularObjective::VAE, TabularObjective::AVAE}) {
      Graph g;
      TabularVars tv = bind_tabular(g, m);
      Gradients gr = g.backward(tabular_loss(g, tv, m, pi, obj));
      auto f = [&](const TabularModel& mm) {
        return obj == TabularObjective::VAE ? exact_vae_loss(mm, pi) : avae_with_fixed_delusions(mm, dec0, pi);
      };
      double num = 0, den = 0;
      auto run = [&](Tensor TabularModel::*field, const Var& var) {
        const Tensor an = gr.wrt(var);
        for (std::size_t i = 0; i < (m.*field).numel(); ++i) {
          TabularModel p = m, q = m;
          (p.*field)[i] += h;
          (q.*field)[i] -= h;
          const double fd = (f(p) - f(q)) / (2 * h);
          num += (fd - an[i]) * (fd - an[i]);
          den += fd * fd;
        }
      };
      run(&TabularModel::g, tv.g);
      run(&TabularModel::mu, tv.mu);
      run(&TabularModel::log_sigma, tv.log_sigma);
      CHECK(std::sqrt(num / std::max(den, 1e-30)) < 1e-6);
    }
  }
}

TEST_CASE("uniform coupling limit leaves only the delusion entropy") {
  TabularModel m = init_tabular(16, 12, 0.2, 1e6, 4);
  const Tensor pi = bimodal_histogram(m.xgrid);
  const Tables t = tables(m);
  const double diff = exact_avae_loss(m, pi) - exact_vae_loss(m, pi);
  // -cross -> log Nz, and the negative entropy is added.
  CHECK(std::abs(diff - (std::log(12.0) - delusion_entropy(t, pi))) < 1e-6);
}

TEST_CASE("VAE component of the AVAE loss") {
  TabularModel m = init_tabular(16, 16, 0.1, 1e-3, 8);
  const Tensor pi = bimodal_histogram(m.xgrid);
  const Tables t = tables(m);
  const Tensor lc = coupling_log_table(m.zgrid, m.nu_rho);
  // Decomposition rebuilt from the pieces by hand.
  const std::size_t nx = 16, nz = 16;
  double cross = 0;
  for (std::size_t z = 0; z < nz; ++z) {
    double a = 0;
    for (std::size_t x = 0; x < nx; ++x) a += pi[x] * t.enc.at(x, z);
    for (std::size_t xt = 0; xt < nx; ++xt)
      for (std::size_t zp = 0; zp < nz; ++zp) cross += a * t.dec.at(z, xt) * t.enc.at(xt, zp) * lc.at(z, zp);
  }
  const double rebuilt = exact_vae_loss(m, pi) - cross - delusion_entropy(t, pi);
  CHECK(std::abs(exact_avae_loss(m, pi) - rebuilt) < 1e-10);
}

TEST_CASE("heatmaps") {
  TabularModel m = init_tabular(20, 20, 0.15, 1e-3, 2);
  Tables t = tables(m);
  Heatmaps h = transition_heatmaps(t.enc, t.dec);
  CHECK(h.decoder == t.dec);
  CHECK(h.encoder == t.enc);
  const Tensor px = model_marginal(t.dec);
  for (std::size_t x = 0; x < 20; ++x) {
    double s = 0;
    for (std::size_t xp = 0; xp < 20; ++xp) s += h.x_kernel.at(x, xp);
    CHECK(std::abs(s - px[x]) < 1e-12);
  }
  double total = 0;
  for (double v : h.z_kernel.data()) total += v;
  CHECK(std::abs(total - 1.0) < 1e-12);

  // Exact posterior encoder: the X kernel is a symmetric joint.
  Heatmaps he = transition_heatmaps(exact_posterior_table(t.dec), t.dec);
  double asym = 0;
  for (std::size_t a = 0; a < 20; ++a)
    for (std::size_t b = 0; b < 20; ++b) asym = std::max(asym, std::abs(he.x_kernel.at(a, b) - he.x_kernel.at(b, a)));
  CHECK(asym < 1e-15);
  CHECK(asym >= 0.0);
  // ...which the random encoder is not.
  double asym_rand = 0;
  for (std::size_t a = 0; a < 20; ++a)
    for (std::size_t b = 0; b < 20; ++b)
      asym_rand = std::max(asym_rand, std::abs(h.x_kernel.at(a, b) - h.x_kernel.at(b, a)));
  CHECK(asym_rand > 1e-6);

  CHECK(diagonal_mass(Tensor::matrix({{1, 0}, {0, 1}})) == 1.0);
  CHECK(diagonal_mass(Tensor::matrix({{1, 1}, {1, 1}})) == 0.5);
  CHECK_THROWS_AS(diagonal_mass(Tensor({2, 3})), DimensionError);
}

TEST_CASE("enumeration budget") {
  TabularModel m = init_tabular(70, 70, 0.1, 1e-3, 0);
  const Tensor pi = bimodal_histogram(m.xgrid);
  CHECK_NOTHROW(exact_vae_loss(m, pi));
  CHECK_THROWS_AS(exact_avae_loss(m, pi), ConfigError);
  TabularTrainConfig cfg{TabularObjective::AVAE, 1};
  CHECK_THROWS_AS(train_tabular(m, pi, cfg), ConfigError);
}

TEST_CASE("training") {
  TabularModel m = init_tabular(32, 32, 0.1, 1e-3, 1);
  const Tensor pi = bimodal_histogram(m.xgrid);
  TabularModel m2 = m;
  TabularTrainConfig cfg{TabularObjective::VAE, 2000};
  const double before = exact_vae_loss(m, pi);
  auto trace = train_tabular(m, pi, cfg);
  CHECK(trace.size() == 2000);
  CHECK(trace.front() == doctest::Approx(before).epsilon(1e-12));
  CHECK(exact_vae_loss(m, pi) < before / 10);
  Tables t = tables(m);
  CHECK(row_sum_error(t.dec) < 1e-12);
  CHECK(row_sum_error(t.enc) < 1e-12);

  auto trace2 = train_tabular(m2, pi, cfg);
  CHECK(trace == trace2);
  CHECK(m.g == m2.g);
  CHECK(m.mu == m2.mu);
  CHECK(m.log_sigma == m2.log_sigma);
}
