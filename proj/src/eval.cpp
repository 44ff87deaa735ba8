#include "avae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "avae/errors.hpp"
#include "avae/gaussian.hpp"
#include "json.hpp"

namespace avae {

namespace {

Tensor one_hot(const std::vector<int>& labels, int classes) {
  Tensor t({labels.size(), static_cast<std::size_t>(classes)}, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw DomainError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    }
    t.at(i, labels[i]) = 1.0;
  }
  return t;
}

Var probe_apply(const Var& feats, const Var& w, const Var& b) {
  Var logits = matmul(feats, w);
  return logits + broadcast(b, logits.shape());
}

Var cross_entropy_rows(const Var& logits, const Tensor& onehot) {
  Graph* g = logits.graph();
  return logsumexp_rows(logits) - sum_rows(logits * g->constant(onehot));
}

std::string eps_label(double e) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", e);
  return buf;
}

}  // namespace

LinearProbe train_probe_features(const Tensor& features, const std::vector<int>& labels, int classes,
                                 const ProbeConfig& cfg) {
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw DimensionError("train_probe: features " + shape_str(features.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (classes < 2) throw ConfigError("train_probe: need at least 2 classes");
  const std::size_t latent = features.cols(), k = static_cast<std::size_t>(classes);
  const Tensor onehot = one_hot(labels, classes);
  LinearProbe p{Tensor({latent, k}, 0.0), Tensor({k}, 0.0)};
  AdamState st(cfg.adam, {{"probe.weight", &p.weight}, {"probe.bias", &p.bias}});
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    Graph g;
    Var w = g.parameter(p.weight), b = g.parameter(p.bias);
    Var loss = mean(cross_entropy_rows(probe_apply(g.constant(features), w, b), onehot));
    if (!std::isfinite(loss.value().item())) {
      throw NumericError("probe training diverged at step " + std::to_string(s + 1));
    }
    Gradients gr = g.backward(loss);
    adam_step(st, {&p.weight, &p.bias}, {gr.wrt(w), gr.wrt(b)});
  }
  return p;
}

LinearProbe train_probe(const Encoder& enc, const Dataset& d, const std::string& task, const ProbeConfig& cfg) {
  auto it = d.labels.find(task);
  if (it == d.labels.end()) throw ConfigError("dataset has no labels for task '" + task + "'");
  return train_probe_features(encode_values(enc, d.x).mu, it->second, d.classes.at(task), cfg);
}

Tensor probe_logits(const LinearProbe& p, const Tensor& features) {
  Graph g;
  return probe_apply(g.constant(features), g.constant(p.weight), g.constant(p.bias)).value();
}

std::vector<int> probe_predict(const LinearProbe& p, const Tensor& features) {
  const Tensor l = probe_logits(p, features);
  std::vector<int> out(l.rows());
  for (std::size_t r = 0; r < l.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < l.cols(); ++c)
      if (l.at(r, c) > l.at(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

double probe_accuracy(const LinearProbe& p, const Tensor& features, const std::vector<int>& labels) {
  const auto pred = probe_predict(p, features);
  if (pred.size() != labels.size()) throw DimensionError("probe_accuracy: label count mismatch");
  if (pred.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

Tensor probe_cross_entropy(const Encoder& enc, const LinearProbe& p, const Tensor& x, const std::vector<int>& labels,
                           Tensor* grad) {
  Graph g;
  EncoderVars ev = bind_encoder(g, enc, true);
  Var xv = g.parameter(x);
  Var logits = probe_apply(encode(ev, xv).mu, g.constant(p.weight), g.constant(p.bias));
  Var ce = cross_entropy_rows(logits, one_hot(labels, static_cast<int>(p.bias.numel())));
  if (grad) *grad = g.backward(sum(ce)).wrt(xv);
  return ce.value();
}

AttackResult attack_probe(const Encoder& enc, const LinearProbe& p, const Tensor& x, const std::vector<int>& labels,
                          const PGDConfig& cfg, std::uint64_t seed, const std::string& stream,
                          const Tensor* warm_start, std::size_t chunk) {
  if (x.rank() != 2 || x.rows() != labels.size()) throw DimensionError("attack_probe: labels do not match inputs");
  if (warm_start && warm_start->shape() != x.shape()) throw DimensionError("attack_probe: warm start shape mismatch");
  if (chunk == 0) chunk = x.rows();
  const std::size_t n = x.rows();
  AttackResult res;
  res.robust.assign(n, 1);
  res.adversarial = Tensor(x.shape());
  const Rng base(seed, "eval.attack." + stream);
  std::size_t nominal_ok = 0;

  for (std::size_t b0 = 0; b0 < n; b0 += chunk) {
    const std::size_t b1 = std::min(n, b0 + chunk);
    const Tensor xb = x.slice_rows(b0, b1);
    const std::vector<int> lb(labels.begin() + b0, labels.begin() + b1);
    std::vector<Rng> rngs;
    for (std::size_t i = b0; i < b1; ++i) rngs.push_back(base.split(i));
    Tensor wb;
    if (warm_start) wb = warm_start->slice_rows(b0, b1);

    bool first = true;
    auto observe = [&](const Tensor& cur) {
      const auto pred = probe_predict(p, encode_values(enc, cur).mu);
      for (std::size_t r = 0; r < pred.size(); ++r) {
        if (pred[r] != lb[r]) res.robust[b0 + r] = 0;
        if (first && pred[r] == lb[r]) ++nominal_ok;
      }
      first = false;
    };
    auto f = [&](const Tensor& cur, Tensor& grad) { return probe_cross_entropy(enc, p, cur, lb, &grad); };
    const Tensor adv = pgd_maximize(xb, cfg, f, nullptr, warm_start ? &wb : nullptr, observe, &rngs);
    std::copy(adv.data().begin(), adv.data().end(), res.adversarial.data().begin() + b0 * x.cols());
  }
  std::size_t ok = 0;
  for (char r : res.robust) ok += r;
  res.accuracy = n ? static_cast<double>(ok) / static_cast<double>(n) : 0.0;
  res.nominal = n ? static_cast<double>(nominal_ok) / static_cast<double>(n) : 0.0;
  return res;
}

RobustnessReport adversarial_accuracy(const Encoder& enc, const std::map<std::string, LinearProbe>& probes,
                                      const Dataset& d, const std::vector<double>& epsilons, const PGDConfig& base,
                                      std::uint64_t seed) {
  RobustnessReport rep;
  rep.epsilons = epsilons;
  rep.attack = base;
  rep.seed = seed;
  rep.examples = d.size();
  for (const auto& [task, probe] : probes) {
    auto it = d.labels.find(task);
    if (it == d.labels.end()) throw ConfigError("dataset has no labels for task '" + task + "'");
    rep.tasks.push_back(task);
    rep.nominal[task] = probe_accuracy(probe, encode_values(enc, d.x).mu, it->second);
    auto& row = rep.adversarial[task];
    for (double e : epsilons) {
      PGDConfig c = base;
      c.epsilon = e;
      row.push_back(attack_probe(enc, probe, d.x, it->second, c, seed, task).accuracy);
    }
  }
  return rep;
}

std::string RobustnessReport::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["examples"] = examples;
  j["attack"] = {{"steps", attack.steps},
                 {"restarts", attack.restarts},
                 {"step_size", attack.step_size < 0 ? nlohmann::json("epsilon/4") : nlohmann::json(attack.step_size)},
                 {"clip_box", attack.clip_box}};
  j["epsilons"] = epsilons;
  for (const auto& t : tasks) {
    j["nominal"][t] = nominal.at(t);
    for (std::size_t i = 0; i < epsilons.size(); ++i) j["adversarial"][t][eps_label(epsilons[i])] = adversarial.at(t)[i];
  }
  return j.dump(2);
}

std::string RobustnessReport::to_csv() const {
  std::ostringstream os;
  os << "task";
  for (double e : epsilons) os << ",eps=" << eps_label(e);
  os << "\n";
  for (const auto& t : tasks) {
    os << t;
    char buf[40];
    for (double a : adversarial.at(t)) {
      std::snprintf(buf, sizeof buf, ",%.6f", a);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

std::vector<double> chain_drift(const ModelPair& m, const Tensor& x0, int steps, ChainMode mode, std::uint64_t seed) {
  if (steps < 0) throw ConfigError("chain_drift: steps must be >= 0");
  if (x0.rank() != 2 || x0.rows() == 0) throw DimensionError("chain_drift: expected [n, input] with n >= 1");
  const std::size_t n = x0.rows(), d = m.encoder.latent_dim();
  const DiagMoments q0 = encode_values(m.encoder, x0);
  std::vector<double> out(static_cast<std::size_t>(steps) + 1, 0.0);
  Rng rng(seed, "drift");
  Tensor x = x0;
  DiagMoments q = q0;
  for (int t = 1; t <= steps; ++t) {
    Tensor z = q.mu;
    if (mode == ChainMode::Sampled) {
      for (std::size_t i = 0; i < z.numel(); ++i) z[i] += std::sqrt(q.var[i]) * rng.normal();
    }
    x = decode_values(m.decoder, z);
    q = encode_values(m.encoder, x);
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t o = r * d;
      acc += w2_distance_diag({q0.mu.data().data() + o, d}, {q0.var.data().data() + o, d},
                              {q.mu.data().data() + o, d}, {q.var.data().data() + o, d});
    }
    out[static_cast<std::size_t>(t)] = acc / static_cast<double>(n);
  }
  return out;
}

double reconstruction_mse(const ModelPair& m, const Tensor& x) {
  if (x.rank() != 2 || x.rows() == 0) throw DimensionError("reconstruction_mse: expected [n, input] with n >= 1");
  const Tensor rec = decode_values(m.decoder, encode_values(m.encoder, x).mu);
  if (rec.shape() != x.shape()) throw DimensionError("reconstruction_mse: decoder output does not match input");
  double total = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) total += (x[i] - rec[i]) * (x[i] - rec[i]);
  return total / static_cast<double>(x.rows());
}

}  // namespace avae
