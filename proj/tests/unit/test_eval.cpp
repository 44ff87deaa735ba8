#include <cmath>

#include "avae/eval.hpp"
#include "avae/rng.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace avae;

namespace {

// Linear pair with encoder mean W^T x and decoder W z (W orthonormal columns).
ModelPair linear_pair(const Eigen::MatrixXd& W) {
  const std::size_t n = W.rows(), d = W.cols();
  ModelPair m;
  m.encoder.head_mu = Linear{Tensor({n, d}), Tensor({d}, 0.0)};
  m.encoder.head_var = Linear{Tensor({n, d}, 0.0), Tensor({d}, -3.0)};
  m.decoder.head = Linear{Tensor({d, n}), Tensor({n}, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      m.encoder.head_mu.weight.at(i, j) = W(i, j);
      m.decoder.head.weight.at(j, i) = W(i, j);
    }
  m.obs.v = 0.0;
  return m;
}

Eigen::MatrixXd orthonormal(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed, "orth");
  Eigen::MatrixXd a(n, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  return a.householderQr().householderQ() * Eigen::MatrixXd::Identity(n, d);
}

// Pixel data in [0,1] with a binary label carried by the first half of the pixels.
Dataset toy_pixels(std::size_t n, std::uint64_t seed) {
  Rng rng(seed, "toy");
  Dataset d;
  d.x = Tensor({n, 8});
  d.labels["half"] = std::vector<int>(n);
  d.classes["half"] = 2;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(rng.below(2));
    d.labels["half"][i] = y;
    for (std::size_t j = 0; j < 8; ++j) {
      const double base = (j < 4) == (y == 1) ? 0.7 : 0.3;
      d.x.at(i, j) = std::clamp(base + 0.15 * rng.normal(), 0.0, 1.0);
    }
  }
  d.height = 2;
  d.width = 4;
  return d;
}

}  // namespace

TEST_CASE("probe on separable features") {
  Rng rng(1, "sep");
  Tensor f({400, 3});
  std::vector<int> y(400);
  for (std::size_t i = 0; i < 400; ++i) {
    y[i] = static_cast<int>(i % 3);
    for (std::size_t j = 0; j < 3; ++j) f.at(i, j) = (j == std::size_t(y[i]) ? 3.0 : 0.0) + 0.3 * rng.normal();
  }
  LinearProbe p = train_probe_features(f, y, 3);
  CHECK(probe_accuracy(p, f, y) > 0.99);
  CHECK_THROWS_AS(train_probe_features(f, std::vector<int>(5), 3), DimensionError);
  CHECK_THROWS_AS(train_probe_features(f, y, 1), ConfigError);
}

TEST_CASE("probe training leaves the encoder untouched") {
  ModelPair m = init_model({8, 3, {6}}, {}, 4);
  const auto before = parameter_checksum(named_parameters(std::as_const(m)));
  Dataset d = toy_pixels(200, 2);
  train_probe(m.encoder, d, "half", {AdamConfig{1e-2}, 200});
  CHECK(parameter_checksum(named_parameters(std::as_const(m))) == before);
  CHECK_THROWS_AS(train_probe(m.encoder, d, "colour", {}), ConfigError);
}

TEST_CASE("probe direction on a linear-gaussian encoder") {
  const Eigen::MatrixXd W = orthonormal(6, 3, 3);
  Dataset d = synth_linear_gaussian(2000, W, 0.01, 7);
  ModelPair m = linear_pair(W);
  LinearProbe p = train_probe(m.encoder, d, "sign");
  Eigen::Vector3d diff;
  for (int j = 0; j < 3; ++j) diff[j] = p.weight.at(j, 1) - p.weight.at(j, 0);
  CHECK(diff[0] / diff.norm() > 0.99);
}

TEST_CASE("adversarial accuracy") {
  ModelPair m = init_model({8, 2, {6}}, {}, 11);
  Dataset d = toy_pixels(300, 5);
  std::map<std::string, LinearProbe> probes{{"half", train_probe(m.encoder, d, "half", {AdamConfig{1e-2}, 500})}};
  const PGDConfig base = PGDConfig::evaluation(0.0);

  RobustnessReport r0 = adversarial_accuracy(m.encoder, probes, d, {0.0}, base, 3);
  CHECK(r0.adversarial.at("half")[0] == r0.nominal.at("half"));
  CHECK(r0.nominal.at("half") > 0.8);

  RobustnessReport r = adversarial_accuracy(m.encoder, probes, d, {0.0, 0.05, 1.0}, base, 3);
  const auto& a = r.adversarial.at("half");
  CHECK(a[0] == r.nominal.at("half"));
  CHECK(a[1] <= r.nominal.at("half"));
  CHECK(a[2] <= a[1]);
  // whole input box: an undefended encoder is broken almost everywhere
  CHECK(a[2] < 0.1);

  const auto csv = r.to_csv();
  CHECK(csv.rfind("task,eps=0,eps=0.05,eps=1\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["attack"]["steps"] == 40);
  CHECK(j["attack"]["restarts"] == 10);
  CHECK(j["adversarial"]["half"]["0.05"].get<double>() == a[1]);

  Dataset nolabels = d;
  nolabels.labels.clear();
  CHECK_THROWS_AS(adversarial_accuracy(m.encoder, probes, nolabels, {0.1}, base, 3), ConfigError);
}

TEST_CASE("attack is chunk-independent and nested warm starts never help") {
  ModelPair m = init_model({8, 2, {6}}, {}, 12);
  Dataset d = toy_pixels(120, 6);
  LinearProbe p = train_probe(m.encoder, d, "half", {AdamConfig{1e-2}, 500});
  const auto& y = d.labels.at("half");
  PGDConfig c = PGDConfig::evaluation(0.03);
  c.steps = 10;
  c.restarts = 3;
  AttackResult a = attack_probe(m.encoder, p, d.x, y, c, 9, "half", nullptr, 250);
  AttackResult b = attack_probe(m.encoder, p, d.x, y, c, 9, "half", nullptr, 7);
  CHECK(a.robust == b.robust);
  CHECK(a.accuracy == b.accuracy);
  // vectorised reductions may round differently with the row count
  double worst = 0;
  for (std::size_t i = 0; i < a.adversarial.numel(); ++i)
    worst = std::max(worst, std::abs(a.adversarial[i] - b.adversarial[i]));
  CHECK(worst < 1e-12);
  CHECK(a.accuracy <= a.nominal);

  for (double e2 : {0.05, 0.1, 0.3}) {
    PGDConfig c2 = c;
    c2.epsilon = e2;
    AttackResult w = attack_probe(m.encoder, p, d.x, y, c2, 9, "half", &a.adversarial);
    CHECK(w.accuracy <= a.accuracy);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK((w.robust[i] <= a.robust[i]));
  }
}

TEST_CASE("chain drift") {
  const Eigen::MatrixXd W = orthonormal(6, 2, 1);
  ModelPair m = linear_pair(W);
  Tensor x0 = Rng(3, "x0").uniform_tensor({20, 6}, 0.0, 1.0);
  CHECK(chain_drift(m, x0, 0) == std::vector<double>{0.0});
  auto d = chain_drift(m, x0, 30);
  REQUIRE(d.size() == 31);
  for (double v : d) CHECK(std::abs(v) < 1e-12);

  ModelPair r = init_model({6, 2, {5}}, {}, 2);
  auto dm = chain_drift(r, x0, 10);
  CHECK(dm == chain_drift(r, x0, 10));
  auto ds = chain_drift(r, x0, 10, ChainMode::Sampled, 4);
  CHECK(ds == chain_drift(r, x0, 10, ChainMode::Sampled, 4));
  CHECK(ds != chain_drift(r, x0, 10, ChainMode::Sampled, 5));
  for (double v : dm) CHECK(v >= 0.0);
  for (double v : ds) CHECK(v >= 0.0);
  CHECK(dm[5] > 0.0);
  CHECK_THROWS_AS(chain_drift(r, x0, -1), ConfigError);
}

TEST_CASE("reconstruction mse") {
  const Eigen::MatrixXd W = orthonormal(6, 2, 8);
  ModelPair m = linear_pair(W);
  Tensor inside({5, 6});
  Rng rng(1, "z");
  for (std::size_t i = 0; i < 5; ++i) {
    const Eigen::Vector2d z(rng.normal(), rng.normal());
    const Eigen::VectorXd x = W * z;
    for (std::size_t j = 0; j < 6; ++j) inside.at(i, j) = x[j];
  }
  CHECK(reconstruction_mse(m, inside) < 1e-28);

  ModelPair zero = m;
  zero.decoder.head.weight = Tensor({2, 6}, 0.0);
  Tensor unit({4, 6}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) unit.at(i, i) = 1.0;
  CHECK(reconstruction_mse(zero, unit) == 1.0);

  ModelPair r = init_model({6, 3, {5}}, {}, 3);
  Tensor x = Rng(2, "x").uniform_tensor({17, 6}, 0.0, 1.0);
  double total = 0;
  for (std::size_t i = 0; i < 17; ++i) {
    const Tensor row = x.slice_rows(i, i + 1);
    const Tensor rec = decode_values(r.decoder, encode_values(r.encoder, row).mu);
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) s += std::pow(row[j] - rec[j], 2);
    total += s;
  }
  CHECK(std::abs(reconstruction_mse(r, x) - total / 17) < 1e-9);
}
