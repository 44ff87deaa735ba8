#include "avae/discrete_vm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "avae/errors.hpp"
#include "avae/rng.hpp"

namespace avae {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Normalised exp(cos(x - mu) / s) over a grid, in log space for small s.
void vm_row(const VmGrid& grid, double mu, double s, double* out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.n; ++i) {
    out[i] = std::cos(grid.point(i) - mu) / s;
    mx = std::max(mx, out[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < grid.n; ++i) {
    out[i] = std::exp(out[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < grid.n; ++i) out[i] /= z;
}

void require_square(const Tensor& m, const char* what) {
  if (m.rank() != 2 || m.rows() != m.cols()) throw DimensionError(std::string(what) + ": expected a square matrix");
}

void check_tables(const Tensor& enc, const Tensor& dec, const Tensor& pi) {
  if (enc.rank() != 2 || dec.rank() != 2 || enc.rows() != dec.cols() || enc.cols() != dec.rows()) {
    throw DimensionError("tabular: encoder " + shape_str(enc.shape()) + " and decoder " + shape_str(dec.shape()) +
                         " do not match");
  }
  if (pi.numel() != enc.rows()) throw DimensionError("tabular: histogram length does not match the X grid");
  double s = 0.0;
  for (double p : pi.storage()) {
    if (p < 0.0) throw DomainError("tabular: histogram has a negative entry");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw DomainError("tabular: histogram does not sum to 1");
}

void check_budget(std::size_t nx, std::size_t nz) {
  const double cells = static_cast<double>(nx) * nz * nx * nz;
  if (cells > kEnumerationBudget) {
    throw ConfigError("tabular: grid " + std::to_string(nx) + "x" + std::to_string(nz) +
                      " exceeds the enumeration budget of 64^4 cells");
  }
}

double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

// log-softmax along rows on the tape
Var log_softmax_rows(const Var& logits) {
  const Shape s = logits.shape();
  Var lse = reshape(logsumexp_rows(logits), {s[0], 1});
  return logits - broadcast(lse, s);
}

}  // namespace

double VmGrid::spacing() const { return kTwoPi / static_cast<double>(n); }

Tensor VmGrid::points() const {
  Tensor t({n});
  for (std::size_t i = 0; i < n; ++i) t[i] = point(i);
  return t;
}

void VmGrid::validate() const {
  if (n < 2) throw ConfigError("vm grid needs n >= 2, got " + std::to_string(n));
}

Tensor vm_density(const VmGrid& grid, double mu, double v) {
  grid.validate();
  if (!(v > 0.0)) throw DomainError("vm_density: spread must be positive, got " + std::to_string(v));
  Tensor p({grid.n});
  vm_row(grid, mu, v, p.data().data());
  return p;
}

void TabularModel::validate() const {
  xgrid.validate();
  zgrid.validate();
  if (g.numel() != zgrid.n) throw DimensionError("tabular: g must have Nz entries");
  if (mu.numel() != xgrid.n || log_sigma.numel() != xgrid.n) {
    throw DimensionError("tabular: encoder tables must have Nx entries");
  }
  if (!(v > 0.0)) throw DomainError("tabular: decoder spread must be positive");
  if (!(nu_rho > 0.0)) throw DomainError("tabular: coupling spread must be positive");
}

TabularModel init_tabular(std::size_t nx, std::size_t nz, double v, double nu_rho, std::uint64_t seed) {
  TabularModel m;
  m.xgrid.n = nx;
  m.zgrid.n = nz;
  m.xgrid.validate();
  m.zgrid.validate();
  m.v = v;
  m.nu_rho = nu_rho;
  Rng rng(seed, "tabular.init");
  m.g = rng.uniform_tensor({nz}, 0.0, kTwoPi);
  m.mu = rng.uniform_tensor({nx}, 0.0, kTwoPi);
  m.log_sigma = Tensor({nx}, std::log(0.5));
  m.validate();
  return m;
}

Tables tables(const TabularModel& m) {
  m.validate();
  const std::size_t nx = m.xgrid.n, nz = m.zgrid.n;
  Tables t{Tensor({nz, nx}), Tensor({nx, nz})};
  for (std::size_t z = 0; z < nz; ++z) vm_row(m.xgrid, m.g[z], m.v, t.dec.data().data() + z * nx);
  for (std::size_t x = 0; x < nx; ++x) {
    vm_row(m.zgrid, m.mu[x], std::exp(m.log_sigma[x]), t.enc.data().data() + x * nz);
  }
  return t;
}

Tensor coupling_log_table(const VmGrid& zg, double nu) {
  zg.validate();
  if (!(nu > 0.0)) throw DomainError("coupling spread must be positive");
  const std::size_t n = zg.n;
  Tensor t({n, n});
  for (std::size_t a = 0; a < n; ++a) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < n; ++b) {
      t.at(a, b) = std::cos(zg.point(b) - zg.point(a)) / nu;
      mx = std::max(mx, t.at(a, b));
    }
    double s = 0.0;
    for (std::size_t b = 0; b < n; ++b) s += std::exp(t.at(a, b) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t b = 0; b < n; ++b) t.at(a, b) -= lse;
  }
  return t;
}

Tensor model_marginal(const Tensor& dec) {
  const std::size_t nz = dec.rows(), nx = dec.cols();
  Tensor p({nx}, 0.0);
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t x = 0; x < nx; ++x) p[x] += dec.at(z, x) / static_cast<double>(nz);
  return p;
}

Tensor exact_posterior_table(const Tensor& dec) {
  const std::size_t nz = dec.rows(), nx = dec.cols();
  Tensor q({nx, nz});
  for (std::size_t x = 0; x < nx; ++x) {
    double s = 0.0;
    for (std::size_t z = 0; z < nz; ++z) s += dec.at(z, x);
    for (std::size_t z = 0; z < nz; ++z) q.at(x, z) = dec.at(z, x) / s;
  }
  return q;
}

double vae_kl_tables(const Tensor& enc, const Tensor& dec, const Tensor& pi) {
  check_tables(enc, dec, pi);
  const std::size_t nx = enc.rows(), nz = enc.cols();
  const double log_pz = -std::log(static_cast<double>(nz));
  double kl = 0.0;
  for (std::size_t x = 0; x < nx; ++x) {
    if (pi[x] == 0.0) continue;
    double row = 0.0;
    for (std::size_t z = 0; z < nz; ++z) {
      const double q = enc.at(x, z);
      if (q == 0.0) continue;
      row += q * (std::log(pi[x]) + std::log(q) - std::log(dec.at(z, x)) - log_pz);
    }
    kl += pi[x] * row;
  }
  return kl;
}

double avae_loss_tables(const Tensor& enc, const Tensor& dec, const Tensor& pi, const Tensor& log_coupling) {
  check_tables(enc, dec, pi);
  const std::size_t nx = enc.rows(), nz = enc.cols();
  check_budget(nx, nz);
  require_square(log_coupling, "avae_loss_tables");
  if (log_coupling.rows() != nz) throw DimensionError("avae_loss_tables: coupling table does not match Z grid");
  // a[z] = sum_x pi(x) q(z|x)
  std::vector<double> a(nz, 0.0);
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t z = 0; z < nz; ++z) a[z] += pi[x] * enc.at(x, z);
  // Direct four-fold sum over (X, Z, X~, Z'), grouped by (Z, X~) since X only enters through a.
  double cross = 0.0, neg_ent = 0.0;
  for (std::size_t z = 0; z < nz; ++z) {
    if (a[z] == 0.0) continue;
    for (std::size_t xt = 0; xt < nx; ++xt) {
      const double w = a[z] * dec.at(z, xt);
      if (w == 0.0) continue;
      for (std::size_t zp = 0; zp < nz; ++zp) {
        const double q = enc.at(xt, zp);
        cross += w * q * log_coupling.at(z, zp);
        neg_ent += w * xlogy(q, q);
      }
    }
  }
  return vae_kl_tables(enc, dec, pi) - cross + neg_ent;
}

double exact_vae_loss(const TabularModel& m, const Tensor& pi) {
  Tables t = tables(m);
  return vae_kl_tables(t.enc, t.dec, pi);
}

double exact_avae_loss(const TabularModel& m, const Tensor& pi) {
  Tables t = tables(m);
  return avae_loss_tables(t.enc, t.dec, pi, coupling_log_table(m.zgrid, m.nu_rho));
}

Heatmaps transition_heatmaps(const Tensor& enc, const Tensor& dec) {
  if (enc.rank() != 2 || dec.rank() != 2 || enc.rows() != dec.cols() || enc.cols() != dec.rows()) {
    throw DimensionError("transition_heatmaps: table shapes do not match");
  }
  const std::size_t nx = enc.rows(), nz = enc.cols();
  const Tensor px = model_marginal(dec);
  Heatmaps h{dec, Tensor({nx, nx}, 0.0), enc, Tensor({nz, nz}, 0.0)};
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t z = 0; z < nz; ++z) {
      const double w = px[x] * enc.at(x, z);
      for (std::size_t xp = 0; xp < nx; ++xp) h.x_kernel.at(x, xp) += w * dec.at(z, xp);
    }
  const double pz = 1.0 / static_cast<double>(nz);
  for (std::size_t zp = 0; zp < nz; ++zp)
    for (std::size_t x = 0; x < nx; ++x) {
      const double w = pz * dec.at(zp, x);
      for (std::size_t z = 0; z < nz; ++z) h.z_kernel.at(zp, z) += w * enc.at(x, z);
    }
  return h;
}

Heatmaps transition_heatmaps(const TabularModel& m) {
  Tables t = tables(m);
  return transition_heatmaps(t.enc, t.dec);
}

double diagonal_mass(const Tensor& m) {
  require_square(m, "diagonal_mass");
  double tr = 0.0, total = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    tr += m.at(i, i);
    for (std::size_t j = 0; j < m.cols(); ++j) total += m.at(i, j);
  }
  if (!(total > 0.0)) throw NumericError("diagonal_mass: matrix has no mass");
  return tr / total;
}

TabularVars bind_tabular(Graph& graph, const TabularModel& m, bool frozen) {
  auto leaf = [&](const Tensor& t) { return frozen ? graph.constant(t) : graph.parameter(t); };
  return TabularVars{leaf(m.g), leaf(m.mu), leaf(m.log_sigma)};
}

Var tabular_loss(Graph& graph, const TabularVars& vars, const TabularModel& m, const Tensor& pi,
                 TabularObjective obj) {
  m.validate();
  const std::size_t nx = m.xgrid.n, nz = m.zgrid.n;
  if (pi.numel() != nx) throw DimensionError("tabular_loss: histogram length does not match the X grid");
  if (obj == TabularObjective::AVAE) check_budget(nx, nz);

  Var xs = broadcast(graph.constant(m.xgrid.points().reshaped({1, nx})), {nz, nx});
  Var gs = broadcast(reshape(vars.g, {nz, 1}), {nz, nx});
  Var log_dec = log_softmax_rows(scale(cos(xs - gs), 1.0 / m.v));  // [Nz, Nx]

  Var zs = broadcast(graph.constant(m.zgrid.points().reshaped({1, nz})), {nx, nz});
  Var ms = broadcast(reshape(vars.mu, {nx, 1}), {nx, nz});
  Var inv_sigma = broadcast(reshape(exp(-vars.log_sigma), {nx, 1}), {nx, nz});
  Var log_enc = log_softmax_rows(cos(zs - ms) * inv_sigma);  // [Nx, Nz]
  Var enc = exp(log_enc);

  Tensor log_pi({nx, 1}, 0.0);
  for (std::size_t x = 0; x < nx; ++x) log_pi[x] = pi[x] > 0.0 ? std::log(pi[x]) : 0.0;
  Var pi_col = broadcast(graph.constant(pi.reshaped({nx, 1})), {nx, nz});
  Var inner = log_enc - transpose(log_dec) + broadcast(graph.constant(log_pi), {nx, nz});
  inner = add_scalar(inner, std::log(static_cast<double>(nz)));
  Var loss = sum(pi_col * enc * inner);
  if (obj == TabularObjective::VAE) return loss;

  // Delusion terms: the decoder weights X~ ~ p(X~|Z) behind a stop-gradient.
  Var dec_sg = stop_gradient(exp(log_dec));
  Var a = matmul(graph.constant(pi.reshaped({1, nx})), enc);                  // [1, Nz]
  Var w = broadcast(transpose(a), {nz, nz}) * matmul(dec_sg, enc);            // [Nz, Nz]
  Var cross = sum(w * graph.constant(coupling_log_table(m.zgrid, m.nu_rho)));
  Var b = matmul(a, dec_sg);                                                  // [1, Nx]
  Var neg_ent = sum(broadcast(transpose(b), {nx, nz}) * enc * log_enc);
  return loss - cross + neg_ent;
}

std::vector<double> train_tabular(TabularModel& m, const Tensor& pi, const TabularTrainConfig& cfg) {
  m.validate();
  if (cfg.objective == TabularObjective::AVAE) check_budget(m.xgrid.n, m.zgrid.n);
  std::vector<std::pair<std::string, Tensor*>> named = {{"g", &m.g}, {"mu", &m.mu}, {"log_sigma", &m.log_sigma}};
  AdamState st(cfg.adam, named);
  std::vector<Tensor*> ptrs = {&m.g, &m.mu, &m.log_sigma};
  std::vector<double> trace;
  trace.reserve(cfg.steps);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    Graph graph;
    TabularVars tv = bind_tabular(graph, m);
    Var loss = tabular_loss(graph, tv, m, pi, cfg.objective);
    const double val = loss.value().item();
    if (!std::isfinite(val)) throw NumericError("tabular training diverged at step " + std::to_string(s + 1));
    trace.push_back(val);
    Gradients gr = graph.backward(loss);
    try {
      adam_step(st, ptrs, {gr.wrt(tv.g), gr.wrt(tv.mu), gr.wrt(tv.log_sigma)});
    } catch (const NumericError& e) {
      throw NumericError("tabular training diverged at step " + std::to_string(s + 1) + ": " + e.what());
    }
  }
  return trace;
}

Tensor bimodal_histogram(const VmGrid& grid, double mu1, double mu2, double spread, double weight1) {
  if (!(weight1 >= 0.0 && weight1 <= 1.0)) throw DomainError("bimodal_histogram: weight must lie in [0, 1]");
  Tensor a = vm_density(grid, mu1, spread), b = vm_density(grid, mu2, spread);
  Tensor p({grid.n});
  for (std::size_t i = 0; i < grid.n; ++i) p[i] = weight1 * a[i] + (1.0 - weight1) * b[i];
  return p;
}

}  // namespace avae
