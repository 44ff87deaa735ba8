#include "avae/objectives.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>

namespace avae {

const char* kind_name(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::VAE: return "VAE";
    case ObjectiveKind::AVAE: return "AVAE";
    case ObjectiveKind::SE: return "SE";
    case ObjectiveKind::SE_AVAE: return "SE_AVAE";
    case ObjectiveKind::AVAE_SS: return "AVAE_SS";
  }
  return "?";
}

ObjectiveKind parse_kind(const std::string& s) {
  std::string u;
  for (char c : s) u += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u == "VAE") return ObjectiveKind::VAE;
  if (u == "AVAE") return ObjectiveKind::AVAE;
  if (u == "SE") return ObjectiveKind::SE;
  if (u == "SE_AVAE") return ObjectiveKind::SE_AVAE;
  if (u == "AVAE_SS") return ObjectiveKind::AVAE_SS;
  throw ConfigError("unknown objective kind '" + s + "'");
}

void ObjectiveConfig::validate() const {
  auto in_range = [](double r) { return r >= 0.0 && r < 1.0; };
  if (!in_range(rho)) throw ConfigError("rho must lie in [0, 1), got " + std::to_string(rho));
  if (!in_range(rho_se)) throw ConfigError("rho_se must lie in [0, 1), got " + std::to_string(rho_se));
  if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
  const bool se_style = kind == ObjectiveKind::SE || kind == ObjectiveKind::SE_AVAE;
  if (se_style && !attack) throw ConfigError(std::string(kind_name(kind)) + " needs an attack (epsilon) configured");
  if (!se_style && attack) throw ConfigError(std::string(kind_name(kind)) + " takes no attack configuration");
  if (attack) {
    if (!(attack->epsilon >= 0.0)) throw ConfigError("attack epsilon must be >= 0");
    if (attack->steps < 0 || attack->restarts < 0) throw ConfigError("attack steps and restarts must be >= 0");
  }
}

Noise draw_noise(const ObjectiveConfig& cfg, std::size_t batch, std::size_t latent, std::size_t input, Rng& rng) {
  Noise n;
  const bool decoded = cfg.kind == ObjectiveKind::AVAE || cfg.kind == ObjectiveKind::SE_AVAE ||
                       cfg.kind == ObjectiveKind::AVAE_SS;
  if (cfg.kind == ObjectiveKind::AVAE_SS) n.prior_z = rng.normal_tensor({batch, latent});
  for (int s = 0; s < cfg.mc_samples; ++s) {
    n.eps.push_back(rng.normal_tensor({batch, latent}));
    if (decoded && cfg.delusion_noise) n.obs.push_back(rng.normal_tensor({batch, input}));
  }
  return n;
}

namespace {

bool uses_decoded(ObjectiveKind k) {
  return k == ObjectiveKind::AVAE || k == ObjectiveKind::SE_AVAE || k == ObjectiveKind::AVAE_SS;
}
bool uses_attack(ObjectiveKind k) { return k == ObjectiveKind::SE || k == ObjectiveKind::SE_AVAE; }

Encoder encoder_of(const EncoderVars& ev) {
  Encoder e;
  for (const auto& l : ev.trunk) e.trunk.push_back(Linear{l.weight.value(), l.bias.value()});
  e.head_mu = Linear{ev.head_mu.weight.value(), ev.head_mu.bias.value()};
  e.head_var = Linear{ev.head_var.weight.value(), ev.head_var.bias.value()};
  return e;
}

void check_noise(const ObjectiveConfig& cfg, const Noise& noise) {
  if (noise.eps.size() != static_cast<std::size_t>(cfg.mc_samples)) {
    throw DimensionError("noise carries " + std::to_string(noise.eps.size()) + " samples, config wants " +
                         std::to_string(cfg.mc_samples));
  }
  if (cfg.kind == ObjectiveKind::AVAE_SS && !noise.prior_z) throw DimensionError("AVAE_SS noise lacks prior_z");
  if (cfg.delusion_noise && uses_decoded(cfg.kind) && noise.obs.size() != noise.eps.size()) {
    throw DimensionError("delusion noise requested but observation noise is missing");
  }
}

// Decoded delusion as a stop-gradient graph value.
Var decoded_delusion(Graph& g, const ModelVars& mv, const Var& z, const ObjectiveConfig& cfg, const Noise& noise,
                     std::size_t s) {
  Var xt = stop_gradient(decode(mv.decoder, z));
  if (cfg.delusion_noise) xt = xt + scale(g.constant(noise.obs[s]), std::sqrt(mv.obs.v));
  return stop_gradient(xt);
}

Var batch_mean(const Var& v) { return mean(v); }

LossTerms build(Graph& g, const ModelVars& mv, const Tensor& x, const ObjectiveConfig& cfg, const Noise& noise,
                const Delusions* given, Rng* attack_rng) {
  cfg.validate();
  check_noise(cfg, noise);
  const ObjectiveKind kind = cfg.kind;
  const CouplingPrior prior{cfg.rho, mv.encoder.head_mu.weight.shape()[1]};
  const CouplingPrior prior_se{cfg.rho_se, prior.dim};

  Var xin;
  if (kind == ObjectiveKind::AVAE_SS) {
    if (given) {
      if (!given->ss_input) throw DimensionError("AVAE_SS delusions lack the decoded prior sample");
      xin = g.constant(*given->ss_input);
    } else {
      xin = stop_gradient(decode(mv.decoder, g.constant(*noise.prior_z)));
    }
  } else {
    xin = g.constant(x);
  }
  DiagGaussian q = encode(mv.encoder, xin);

  const double inv_s = 1.0 / static_cast<double>(cfg.mc_samples);
  Var zero = g.constant(Tensor::scalar(0.0));
  Var recon = zero, cross_avae = zero, cross_se = zero, ent = zero;
  Var kl = zero;
  if (kind != ObjectiveKind::SE) kl = batch_mean(kl_to_standard(q));

  for (std::size_t s = 0; s < noise.eps.size(); ++s) {
    Var z = reparam_sample(q, noise.eps[s]);
    if (kind != ObjectiveKind::AVAE_SS) {
      recon = recon + scale(batch_mean(log_likelihood(mv.obs, xin, decode(mv.decoder, z))), inv_s);
    }
    if (uses_decoded(kind)) {
      Var xt;
      if (given) {
        if (given->decoded.size() <= s) throw DimensionError("missing decoded delusion for sample " + std::to_string(s));
        xt = g.constant(given->decoded[s]);
      } else {
        xt = decoded_delusion(g, mv, z, cfg, noise, s);
      }
      DiagGaussian qp = encode(mv.encoder, xt);
      cross_avae = cross_avae + scale(batch_mean(coupling_cross_expect(q, qp, prior)), inv_s);
      ent = ent + scale(batch_mean(entropy(qp)), inv_s);
    }
  }

  if (uses_attack(kind)) {
    Tensor attacked;
    if (given) {
      if (!given->attacked) throw DimensionError("SE delusions lack the attacked input");
      attacked = *given->attacked;
    } else {
      attacked = pgd_attack(encoder_of(mv.encoder), x, *cfg.attack, cfg.rho_se, attack_rng);
    }
    DiagGaussian qa = encode(mv.encoder, g.constant(attacked));
    if (kind == ObjectiveKind::SE) {
      PairExpectation pe = coupled_pair_expect(q, qa, prior_se);
      cross_se = batch_mean(pe.log_joint);
      ent = ent + batch_mean(pe.entropy);
    } else {
      cross_se = scale(batch_mean(coupling_cross_expect(q, qa, prior_se)), cfg.se_weight);
      ent = ent + scale(batch_mean(entropy(qa)), cfg.se_weight);
    }
  }

  Var bound = recon - kl + cross_avae + cross_se + ent;
  return LossTerms{-bound, recon, kl, cross_avae, cross_se, ent};
}

double loss_value(const ModelPair& m, const Tensor& x, const ObjectiveConfig& cfg, const Noise& noise) {
  Graph g;
  ModelVars mv = bind(g, m, Freeze{true, true});
  return objective_terms(g, mv, x, cfg, noise).loss.value().item();
}

ObjectiveConfig with_kind(ObjectiveConfig cfg, ObjectiveKind k) {
  cfg.kind = k;
  return cfg;
}

}  // namespace

Delusions make_delusions(const ModelPair& m, const Tensor& x, const ObjectiveConfig& cfg, const Noise& noise,
                         Rng* attack_rng) {
  cfg.validate();
  check_noise(cfg, noise);
  Delusions d;
  Tensor input = x;
  if (cfg.kind == ObjectiveKind::AVAE_SS) {
    input = decode_values(m.decoder, *noise.prior_z);
    d.ss_input = input;
  }
  if (uses_decoded(cfg.kind)) {
    DiagMoments q = encode_values(m.encoder, input);
    for (std::size_t s = 0; s < noise.eps.size(); ++s) {
      Tensor z(q.mu.shape());
      for (std::size_t i = 0; i < z.numel(); ++i) z[i] = q.mu[i] + std::sqrt(q.var[i]) * noise.eps[s][i];
      Tensor xt = decode_values(m.decoder, z);
      if (cfg.delusion_noise) {
        const double sd = std::sqrt(m.obs.v);
        for (std::size_t i = 0; i < xt.numel(); ++i) xt[i] += noise.obs[s][i] * sd;
      }
      d.decoded.push_back(std::move(xt));
    }
  }
  if (uses_attack(cfg.kind)) d.attacked = pgd_attack(m.encoder, x, *cfg.attack, cfg.rho_se, attack_rng);
  return d;
}

LossTerms objective_terms(Graph& g, const ModelVars& mv, const Tensor& x, const ObjectiveConfig& cfg,
                          const Noise& noise, Rng* attack_rng) {
  return build(g, mv, x, cfg, noise, nullptr, attack_rng);
}

LossTerms objective_terms_given(Graph& g, const ModelVars& mv, const Tensor& x, const ObjectiveConfig& cfg,
                                const Noise& noise, const Delusions& d) {
  return build(g, mv, x, cfg, noise, &d, nullptr);
}

double elbo(const ModelPair& m, const Tensor& x, const Noise& noise) {
  ObjectiveConfig cfg;
  cfg.kind = ObjectiveKind::VAE;
  cfg.mc_samples = static_cast<int>(noise.eps.size());
  return -loss_value(m, x, cfg, noise);
}

double avae_loss(const ModelPair& m, const Tensor& x, const ObjectiveConfig& cfg, const Noise& noise) {
  return loss_value(m, x, with_kind(cfg, ObjectiveKind::AVAE), noise);
}

double se_loss(const ModelPair& m, const Tensor& x, const ObjectiveConfig& cfg, const Noise& noise) {
  return loss_value(m, x, with_kind(cfg, ObjectiveKind::SE), noise);
}

double se_avae_loss(const ModelPair& m, const Tensor& x, const ObjectiveConfig& cfg, const Noise& noise) {
  return loss_value(m, x, with_kind(cfg, ObjectiveKind::SE_AVAE), noise);
}

double avae_ss_loss(const ModelPair& m, const ObjectiveConfig& cfg, const Noise& noise) {
  return loss_value(m, Tensor(), with_kind(cfg, ObjectiveKind::AVAE_SS), noise);
}

Tensor pgd_maximize(const Tensor& x, const PGDConfig& cfg, const PgdObjective& f, Rng* rng, const Tensor* warm_start,
                    const PgdObserver& observe, std::vector<Rng>* row_rngs) {
  if (!(cfg.epsilon >= 0.0)) throw ConfigError("pgd: epsilon must be >= 0");
  if (x.rank() != 2) throw DimensionError("pgd: expected [batch, input], got " + shape_str(x.shape()));
  const std::size_t B = x.rows(), N = x.cols();
  Tensor lo(x.shape()), hi(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    lo[i] = x[i] - cfg.epsilon;
    hi[i] = x[i] + cfg.epsilon;
    if (cfg.clip_box) {
      lo[i] = std::max(lo[i], 0.0);
      hi[i] = std::min(hi[i], 1.0);
      if (lo[i] > hi[i]) throw DomainError("pgd: input value " + std::to_string(x[i]) + " lies outside [0,1]");
    }
  }
  auto project = [&](Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std::clamp(t[i], lo[i], hi[i]);
  };
  auto assert_feasible = [&](const Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      if (t[i] < lo[i] || t[i] > hi[i]) throw ContractError("pgd: iterate left the feasible set");
    }
  };

  Tensor best = x;
  Tensor grad(x.shape());
  Tensor best_val = f(x, grad);
  Tensor grad_at_x = grad;
  if (observe) observe(x);

  auto consider = [&](const Tensor& cur, const Tensor& val) {
    for (std::size_t r = 0; r < B; ++r) {
      if (val[r] > best_val[r]) {
        best_val[r] = val[r];
        std::copy_n(cur.data().begin() + r * N, N, best.data().begin() + r * N);
      }
    }
  };

  if (cfg.epsilon == 0.0) return best;
  const double step = cfg.effective_step();

  for (int run = 0; run <= cfg.restarts; ++run) {
    Tensor cur;
    if (run == 0) {
      cur = warm_start ? *warm_start : x;
      if (warm_start && warm_start->shape() != x.shape()) throw DimensionError("pgd: warm start shape mismatch");
      project(cur);
      if (warm_start) {
        Tensor val = f(cur, grad);
        consider(cur, val);
        if (observe) observe(cur);
      } else {
        grad = grad_at_x;
      }
    } else {
      cur = Tensor(x.shape());
      if (row_rngs) {
        if (row_rngs->size() != B) throw DimensionError("pgd: need one generator per row");
        for (std::size_t i = 0; i < cur.numel(); ++i) cur[i] = lo[i] + (hi[i] - lo[i]) * (*row_rngs)[i / N].uniform();
      } else {
        if (!rng) throw ContractError("pgd: restarts need a random generator");
        for (std::size_t i = 0; i < cur.numel(); ++i) cur[i] = lo[i] + (hi[i] - lo[i]) * rng->uniform();
      }
      Tensor val = f(cur, grad);
      consider(cur, val);
      if (observe) observe(cur);
    }
    for (int it = 0; it < cfg.steps; ++it) {
      for (std::size_t i = 0; i < cur.numel(); ++i) {
        const double gs = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
        cur[i] += step * gs;
      }
      project(cur);
      assert_feasible(cur);
      Tensor val = f(cur, grad);
      consider(cur, val);
      if (observe) observe(cur);
    }
  }
  return best;
}

Tensor attack_objective(const Encoder& enc, const Tensor& x, const Tensor& x_tilde, double rho_se, Tensor* grad) {
  if (x.shape() != x_tilde.shape()) {
    throw DimensionError("attack_objective: x " + shape_str(x.shape()) + " vs x~ " + shape_str(x_tilde.shape()));
  }
  Graph g;
  EncoderVars ev = bind_encoder(g, enc, true);
  DiagGaussian q = encode(ev, g.constant(x));
  Var xt = g.parameter(x_tilde);
  DiagGaussian qt = encode(ev, xt);
  CouplingPrior prior{rho_se, enc.latent_dim()};
  Var val = -(coupling_cross_expect(q, qt, prior) + entropy(qt) + entropy(q));
  if (grad) *grad = g.backward(sum(val)).wrt(xt);
  return val.value();
}

Tensor pgd_attack(const Encoder& enc, const Tensor& x, const PGDConfig& cfg, double rho_se, Rng* rng) {
  auto f = [&](const Tensor& xt, Tensor& grad) { return attack_objective(enc, x, xt, rho_se, &grad); };
  return pgd_maximize(x, cfg, f, rng);
}

namespace {

void fill_row(MetricsRow& row, const LossTerms& t) {
  row.loss = t.loss.value().item();
  row.recon = t.recon.value().item();
  row.kl = t.kl.value().item();
  row.cross_avae = t.cross_avae.value().item();
  row.cross_se = t.cross_se.value().item();
  row.entropy_terms = t.entropy_terms.value().item();
}

}  // namespace

std::vector<MetricsRow> train(ModelPair& m, const Tensor& data, const TrainConfig& cfg, TrainState* state,
                              const StepCallback& on_step) {
  const ObjectiveConfig& oc = cfg.objective;
  oc.validate();
  const bool ss = oc.kind == ObjectiveKind::AVAE_SS;
  if (ss && !cfg.pretrained_decoder) throw ConfigError("AVAE_SS post-training needs a pretrained decoder checkpoint");
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  const std::size_t input = m.decoder.output_dim();
  const std::size_t latent = m.encoder.latent_dim();
  if (!ss) {
    if (data.rank() != 2 || data.rows() == 0) throw ConfigError("training data is empty");
    if (data.cols() != m.encoder.input_dim()) {
      throw DimensionError("training data has " + std::to_string(data.cols()) + " columns, encoder expects " +
                           std::to_string(m.encoder.input_dim()));
    }
  }

  TrainState local;
  TrainState& st = state ? *state : local;
  if (st.adam.m.empty()) st.adam = AdamState(cfg.adam, named_parameters(m));
  Rng batch_rng(Rng(cfg.seed, "train.batch").key(), st.batch_counter, 0);
  Rng noise_rng(Rng(cfg.seed, "train.noise").key(), st.noise_counter, 0);
  Rng attack_rng(Rng(cfg.seed, "train.attack").key(), st.attack_counter, 0);

  std::vector<Tensor*> ptrs;
  for (auto& [name, t] : named_parameters(m)) ptrs.push_back(t);

  std::vector<MetricsRow> log;
  log.reserve(cfg.steps);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> idx(cfg.batch);
  for (std::size_t k = 0; k < cfg.steps; ++k) {
    const std::uint64_t step = st.step + 1;
    Tensor xb;
    if (!ss) {
      for (auto& i : idx) i = static_cast<std::size_t>(batch_rng.below(data.rows()));
      xb = data.gather_rows(idx);
    }
    Noise noise = draw_noise(oc, cfg.batch, latent, input, noise_rng);
    MetricsRow row;
    row.step = step;
    try {
      Graph g;
      ModelVars mv = bind(g, m, Freeze{false, ss});
      LossTerms terms = objective_terms(g, mv, xb, oc, noise, &attack_rng);
      fill_row(row, terms);
      if (!std::isfinite(row.loss)) throw NumericError("loss is " + std::to_string(row.loss));
      Gradients grads = g.backward(terms.loss);
      adam_step(st.adam, ptrs, gather_gradients(grads, mv));
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    st.step = step;
    if (cfg.record_wallclock) {
      row.wallclock_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    log.push_back(row);
    if (on_step) on_step(row);
  }
  st.batch_counter = batch_rng.counter();
  st.noise_counter = noise_rng.counter();
  st.attack_counter = attack_rng.counter();
  return log;
}

std::string metrics_csv_header() { return "step,loss,recon,kl,cross_avae,cross_se,entropy_terms,wallclock_ms"; }

std::string metrics_csv_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                static_cast<unsigned long long>(r.step), r.loss, r.recon, r.kl, r.cross_avae, r.cross_se,
                r.entropy_terms, r.wallclock_ms);
  return buf;
}

}  // namespace avae
