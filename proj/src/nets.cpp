#include "avae/nets.hpp"

#include <cmath>
#include <cstring>

namespace avae {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Var apply(const LinearVars& l, const Var& x) {
  Var y = matmul(x, l.weight);
  return y + broadcast(l.bias, y.shape());
}

LinearVars bind_linear(Graph& g, const Linear& l, bool frozen, const std::string& name,
                       std::vector<std::pair<std::string, Var>>* out) {
  LinearVars lv{frozen ? g.constant(l.weight) : g.parameter(l.weight),
                frozen ? g.constant(l.bias) : g.parameter(l.bias)};
  if (out) {
    out->emplace_back(name + ".weight", lv.weight);
    out->emplace_back(name + ".bias", lv.bias);
  }
  return lv;
}

template <class Vec, class Lin>
void push_linear(Vec& out, const std::string& name, Lin& l) {
  out.emplace_back(name + ".weight", &l.weight);
  out.emplace_back(name + ".bias", &l.bias);
}

template <class Vec, class Enc>
void push_encoder(Vec& out, Enc& e, const std::string& prefix) {
  for (std::size_t i = 0; i < e.trunk.size(); ++i) push_linear(out, prefix + ".trunk." + std::to_string(i), e.trunk[i]);
  push_linear(out, prefix + ".head_mu", e.head_mu);
  push_linear(out, prefix + ".head_var", e.head_var);
}

template <class Vec, class Dec>
void push_decoder(Vec& out, Dec& d, const std::string& prefix) {
  for (std::size_t i = 0; i < d.trunk.size(); ++i) push_linear(out, prefix + ".trunk." + std::to_string(i), d.trunk[i]);
  push_linear(out, prefix + ".head", d.head);
}

}  // namespace

std::size_t Encoder::input_dim() const { return trunk.empty() ? head_mu.in() : trunk.front().in(); }

std::size_t Decoder::latent_dim() const { return trunk.empty() ? head.in() : trunk.front().in(); }

Linear init_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(1.0 / static_cast<double>(in));
  return Linear{rng.uniform_tensor({in, out}, -limit, limit), Tensor({out}, 0.0)};
}

Encoder init_encoder(const Architecture& arch, Rng& rng) {
  Encoder e;
  std::size_t prev = arch.input_dim;
  for (std::size_t h : arch.hidden) {
    e.trunk.push_back(init_linear(prev, h, rng));
    prev = h;
  }
  e.head_mu = init_linear(prev, arch.latent_dim, rng);
  e.head_var = init_linear(prev, arch.latent_dim, rng);
  return e;
}

Decoder init_decoder(const Architecture& arch, Rng& rng) {
  Decoder d;
  std::size_t prev = arch.latent_dim;
  for (auto it = arch.hidden.rbegin(); it != arch.hidden.rend(); ++it) {
    d.trunk.push_back(init_linear(prev, *it, rng));
    prev = *it;
  }
  d.head = init_linear(prev, arch.input_dim, rng);
  return d;
}

ModelPair init_model(const Architecture& arch, const ObservationModel& obs, std::uint64_t seed) {
  if (arch.input_dim == 0 || arch.latent_dim == 0) throw ConfigError("architecture needs nonzero input and latent dims");
  if (!(obs.v > 0.0)) throw ConfigError("observation variance must be positive");
  Rng enc_rng(seed, "init.encoder");
  Rng dec_rng(seed, "init.decoder");
  return ModelPair{init_encoder(arch, enc_rng), init_decoder(arch, dec_rng), obs};
}

std::vector<std::pair<std::string, Tensor*>> named_parameters(ModelPair& m) {
  std::vector<std::pair<std::string, Tensor*>> out;
  push_encoder(out, m.encoder, "encoder");
  push_decoder(out, m.decoder, "decoder");
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> named_parameters(const ModelPair& m) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  push_encoder(out, m.encoder, "encoder");
  push_decoder(out, m.decoder, "decoder");
  return out;
}

std::vector<std::pair<std::string, Tensor*>> named_parameters(Encoder& e, const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor*>> out;
  push_encoder(out, e, prefix);
  return out;
}

EncoderVars bind_encoder(Graph& g, const Encoder& e, bool frozen, std::vector<std::pair<std::string, Var>>* out) {
  EncoderVars ev;
  for (std::size_t i = 0; i < e.trunk.size(); ++i) {
    ev.trunk.push_back(bind_linear(g, e.trunk[i], frozen, "encoder.trunk." + std::to_string(i), out));
  }
  ev.head_mu = bind_linear(g, e.head_mu, frozen, "encoder.head_mu", out);
  ev.head_var = bind_linear(g, e.head_var, frozen, "encoder.head_var", out);
  return ev;
}

ModelVars bind(Graph& g, const ModelPair& m, Freeze freeze) {
  ModelVars mv;
  mv.obs = m.obs;
  mv.encoder = bind_encoder(g, m.encoder, freeze.encoder, &mv.params);
  for (std::size_t i = 0; i < m.decoder.trunk.size(); ++i) {
    mv.decoder.trunk.push_back(
        bind_linear(g, m.decoder.trunk[i], freeze.decoder, "decoder.trunk." + std::to_string(i), &mv.params));
  }
  mv.decoder.head = bind_linear(g, m.decoder.head, freeze.decoder, "decoder.head", &mv.params);
  return mv;
}

DiagGaussian encode(const EncoderVars& enc, const Var& x) {
  const std::size_t in = enc.trunk.empty() ? enc.head_mu.weight.shape()[0] : enc.trunk.front().weight.shape()[0];
  if (x.value().rank() != 2 || x.shape()[1] != in) {
    throw DimensionError("encode: input " + shape_str(x.shape()) + " does not match encoder input dim " +
                         std::to_string(in));
  }
  Var h = x;
  for (const auto& l : enc.trunk) h = tanh(apply(l, h));
  Var mu = apply(enc.head_mu, h);
  Var var = add_scalar(softplus(apply(enc.head_var, h)), kVarianceFloor);
  return DiagGaussian(mu, var);
}

Var decode(const DecoderVars& dec, const Var& z) {
  const std::size_t in = dec.trunk.empty() ? dec.head.weight.shape()[0] : dec.trunk.front().weight.shape()[0];
  if (z.value().rank() != 2 || z.shape()[1] != in) {
    throw DimensionError("decode: latent " + shape_str(z.shape()) + " does not match decoder latent dim " +
                         std::to_string(in));
  }
  Var h = z;
  for (const auto& l : dec.trunk) h = tanh(apply(l, h));
  return apply(dec.head, h);
}

Var log_likelihood(const ObservationModel& obs, const Var& x, const Var& mean) {
  if (x.shape() != mean.shape()) {
    throw DimensionError("log_likelihood: x " + shape_str(x.shape()) + " vs mean " + shape_str(mean.shape()));
  }
  Var sq = scale(sum_rows(square(x - mean)), -0.5 / obs.v);
  if (obs.mse_mode) return sq;
  const double n = static_cast<double>(x.value().cols());
  return add_scalar(sq, -0.5 * n * (kLog2Pi + std::log(obs.v)));
}

DiagMoments encode_values(const Encoder& e, const Tensor& x) {
  Graph g;
  EncoderVars ev = bind_encoder(g, e, true);
  DiagGaussian q = encode(ev, g.constant(x));
  return DiagMoments{q.mu.value(), q.var.value()};
}

Tensor decode_values(const Decoder& d, const Tensor& z) {
  Graph g;
  DecoderVars dv;
  for (const auto& l : d.trunk) dv.trunk.push_back(LinearVars{g.constant(l.weight), g.constant(l.bias)});
  dv.head = LinearVars{g.constant(d.head.weight), g.constant(d.head.bias)};
  return decode(dv, g.constant(z)).value();
}

std::vector<Tensor> gather_gradients(const Gradients& grads, const ModelVars& vars) {
  std::vector<Tensor> out;
  out.reserve(vars.params.size());
  for (const auto& [name, v] : vars.params) out.push_back(grads.wrt(v));
  return out;
}

AdamState::AdamState(AdamConfig c, const std::vector<std::pair<std::string, Tensor*>>& params) : cfg(c) {
  for (const auto& [name, t] : params) {
    names.push_back(name);
    m.emplace_back(t->shape(), 0.0);
    v.emplace_back(t->shape(), 0.0);
  }
}

void adam_step(AdamState& s, const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != s.m.size() || grads.size() != s.m.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                         " grads, state holds " + std::to_string(s.m.size()));
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].shape() != params[k]->shape()) {
      throw DimensionError("adam_step: gradient shape mismatch for " + s.names[k]);
    }
    if (!grads[k].all_finite()) throw NumericError("adam_step: non-finite gradient for " + s.names[k]);
  }
  ++s.step;
  const double b1 = s.cfg.beta1;
  const double b2 = s.cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < grads.size(); ++k) {
    auto& p = params[k]->storage();
    auto& m = s.m[k].storage();
    auto& v = s.v[k].storage();
    const auto& g = grads[k].storage();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      p[i] -= s.cfg.lr * mh / (std::sqrt(vh) + s.cfg.eps);
    }
  }
}

std::uint64_t parameter_checksum(const std::vector<std::pair<std::string, const Tensor*>>& params) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& [name, t] : params) {
    for (double d : t->storage()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &d, sizeof d);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001B3ULL;
      }
    }
  }
  return h;
}

}  // namespace avae
