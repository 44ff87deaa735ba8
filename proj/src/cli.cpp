#include "avae/cli.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "avae/errors.hpp"
#include "avae/ppca.hpp"

#ifndef AVAE_DATA_DIR
#define AVAE_DATA_DIR "data"
#endif

namespace avae {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in native order");

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& v, const char* type) {
  throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as " + type);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "a number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v[0] == '-') bad_value(key, v, "a non-negative integer");
  try {
    std::size_t used = 0;
    const unsigned long long d = std::stoull(v, &used);
    if (used != v.size()) bad_value(key, v, "a non-negative integer");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a non-negative integer");
  }
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int d = std::stoi(v, &used);
    if (used != v.size()) bad_value(key, v, "an integer");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "an integer");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  std::string l;
  for (char c : v) l += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
  if (l == "false" || l == "0" || l == "no" || l == "off") return false;
  bad_value(key, v, "a boolean");
}

std::vector<std::string> split_list(const std::string& v) {
  std::string s = trim(v);
  if (!s.empty() && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\''))) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

template <class M>
ConfigField field(std::string name, std::string help, M ExperimentConfig::*member, bool echoed = true) {
  ConfigField f;
  f.name = name;
  f.help = std::move(help);
  f.echoed = echoed;
  f.get = [member](const ExperimentConfig& c) { return json(c.*member); };
  f.set = [member, name](ExperimentConfig& c, const std::string& raw) {
    const std::string v = trim(raw);
    if constexpr (std::is_same_v<M, double>) {
      c.*member = to_double(name, v);
    } else if constexpr (std::is_same_v<M, bool>) {
      c.*member = to_bool(name, v);
    } else if constexpr (std::is_same_v<M, int>) {
      c.*member = to_int(name, v);
    } else if constexpr (std::is_same_v<M, std::size_t> || std::is_same_v<M, std::uint64_t>) {
      c.*member = static_cast<M>(to_u64(name, v));
    } else if constexpr (std::is_same_v<M, std::string>) {
      c.*member = unquote(v);
    } else if constexpr (std::is_same_v<M, std::vector<double>>) {
      std::vector<double> out;
      for (const auto& s : split_list(v)) out.push_back(to_double(name, s));
      c.*member = out;
    } else if constexpr (std::is_same_v<M, std::vector<std::size_t>>) {
      std::vector<std::size_t> out;
      for (const auto& s : split_list(v)) out.push_back(to_u64(name, s));
      c.*member = out;
    } else {
      static_assert(sizeof(M) == 0, "unsupported config field type");
    }
  };
  return f;
}

std::string json_scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string s;
    for (const auto& e : v) s += (s.empty() ? "" : ",") + json_scalar_text(e);
    return s;
  }
  return v.dump();
}

void apply_json(ExperimentConfig& c, const json& j, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError("config JSON must be an object");
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      apply_json(c, v, key);
    } else if (!v.is_null()) {
      set_config_value(c, key, json_scalar_text(v));
    }
  }
}

template <class T>
void put(std::vector<std::uint8_t>& b, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  b.insert(b.end(), p, p + sizeof(T));
}

void put_tensor(std::vector<std::uint8_t>& b, const Tensor& t) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(t.data().data());
  b.insert(b.end(), p, p + t.numel() * sizeof(double));
}

struct ByteCursor {
  const std::vector<std::uint8_t>& b;
  std::string what;
  std::size_t pos = 0;
  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(what + ": " + msg + " at byte offset " + std::to_string(pos));
  }
  void need(std::size_t n) const {
    if (pos > b.size() || b.size() - pos < n) fail("truncated");
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void fill(Tensor& t) {
    need(t.numel() * sizeof(double));
    std::memcpy(t.data().data(), b.data() + pos, t.numel() * sizeof(double));
    pos += t.numel() * sizeof(double);
  }
};

bool is_se_style(ObjectiveKind k) { return k == ObjectiveKind::SE || k == ObjectiveKind::SE_AVAE; }

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw ConfigError("write failed: " + path);
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ConfigError("write failed: " + path);
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string drift_csv(const std::vector<double>& d) {
  std::string s = "step,w2\n";
  for (std::size_t t = 0; t < d.size(); ++t) s += std::to_string(t) + "," + fmt17(d[t]) + "\n";
  return s;
}

ChainMode chain_mode(const std::string& m) {
  if (m == "mean") return ChainMode::Mean;
  if (m == "sampled") return ChainMode::Sampled;
  throw ConfigError("eval.drift_mode must be 'mean' or 'sampled', got '" + m + "'");
}

struct EvalCore {
  RobustnessReport report;
  std::vector<double> drift;
  double mse = 0.0;
};

EvalCore evaluate(const Checkpoint& ck, const ExperimentConfig& c, const DataSplit& data) {
  if (data.test.labels.empty()) throw ConfigError("eval: the test data carries no task labels");
  if (data.test.dim() != ck.arch.input_dim) {
    throw ConfigError("eval: checkpoint expects input dim " + std::to_string(ck.arch.input_dim) + ", data has " +
                      std::to_string(data.test.dim()));
  }
  const ProbeConfig pc{AdamConfig{c.probe_lr}, c.probe_steps};
  std::map<std::string, LinearProbe> probes;
  for (const auto& [task, lab] : data.test.labels) {
    if (!data.train.labels.count(task)) throw ConfigError("eval: task '" + task + "' missing from the train split");
    probes[task] = train_probe(ck.model.encoder, data.train, task, pc);
  }
  PGDConfig attack = c.eval_attack();
  attack.clip_box = data.test.height > 0;
  EvalCore e;
  e.report = adversarial_accuracy(ck.model.encoder, probes, data.test, c.eps_eval, attack, c.seed);
  const std::size_t np = std::min(c.drift_points, data.test.size());
  e.drift = chain_drift(ck.model, data.test.x.slice_rows(0, np), c.drift_steps, chain_mode(c.drift_mode), c.seed);
  e.mse = reconstruction_mse(ck.model, data.test.x);
  return e;
}

json eval_json(const EvalCore& e) {
  json j = json::parse(e.report.to_json());
  j["mse"] = e.mse;
  j["drift_final"] = e.drift.empty() ? 0.0 : e.drift.back();
  return j;
}

}  // namespace

// ---------------------------------------------------------------- config

const std::vector<ConfigField>& config_fields() {
  using C = ExperimentConfig;
  static const std::vector<ConfigField> f = {
      field("model.latent", "latent dimension", &C::latent),
      field("model.hidden", "hidden layer widths, comma separated", &C::hidden),
      field("model.v", "observation variance", &C::v),
      field("model.mse_mode", "drop the Gaussian normaliser (v acts as a weight)", &C::mse_mode),
      field("objective.kind", "VAE | AVAE | SE | SE_AVAE | AVAE_SS", &C::objective),
      field("objective.rho", "coupling strength", &C::rho),
      field("objective.rho_se", "coupling strength of the smooth-encoder term", &C::rho_se),
      field("objective.eps_train", "training attack radius (SE kinds; 0 = none)", &C::eps_train),
      field("objective.pgd_train_steps", "training attack steps", &C::pgd_train_steps),
      field("objective.mc_samples", "Monte Carlo samples per example", &C::mc_samples),
      field("objective.delusion_noise", "add observation noise to delusions", &C::delusion_noise),
      field("objective.se_weight", "weight of the smoothing path inside SE_AVAE", &C::se_weight),
      field("train.lr", "Adam learning rate", &C::lr),
      field("train.batch", "minibatch size", &C::batch),
      field("train.steps", "optimizer steps", &C::steps),
      field("train.pretrained", "checkpoint to post-train (AVAE_SS)", &C::pretrained),
      field("train.record_wallclock", "write real timings into metrics.csv", &C::record_wallclock),
      field("data.dataset", "colormnist | mnist | synth", &C::dataset),
      field("data.dir", "directory with mnist/*.gz (default: bundled)", &C::data_dir),
      field("data.train_size", "training examples", &C::train_size),
      field("data.test_size", "test examples", &C::test_size),
      field("data.palette", "number of colours", &C::palette),
      field("data.synth_obs", "synthetic observation dim", &C::synth_obs),
      field("data.synth_latent", "synthetic latent dim", &C::synth_latent),
      field("data.synth_v", "synthetic noise variance", &C::synth_v),
      field("data.cache", "prepared-dataset cache path prefix", &C::cache),
      field("eval.eps", "attack radii, comma separated", &C::eps_eval),
      field("eval.pgd_steps", "attack steps", &C::pgd_eval_steps),
      field("eval.pgd_restarts", "random restarts besides the clean start", &C::pgd_eval_restarts),
      field("eval.probe_steps", "probe training steps", &C::probe_steps),
      field("eval.probe_lr", "probe learning rate", &C::probe_lr),
      field("eval.drift_steps", "encode/decode chain length", &C::drift_steps),
      field("eval.drift_points", "test points in the chain average", &C::drift_points),
      field("eval.drift_mode", "mean | sampled", &C::drift_mode),
      field("discrete.nx", "X grid size", &C::vm_nx),
      field("discrete.nz", "Z grid size", &C::vm_nz),
      field("discrete.v", "decoder spread", &C::vm_v),
      field("discrete.nu", "coupling spread", &C::vm_nu),
      field("discrete.steps", "Adam steps", &C::vm_steps),
      field("discrete.lr", "Adam learning rate", &C::vm_lr),
      field("discrete.seeds", "number of seeds for the statistics", &C::vm_seeds),
      field("run.seed", "global seed", &C::seed),
      field("run.out", "output directory", &C::out, false),
      field("run.overwrite", "allow replacing existing files", &C::overwrite, false),
  };
  return f;
}

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : config_fields()) {
    if (f.name == key) {
      f.set(c, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig parse_config_text(const std::string& text, ExperimentConfig c) {
  std::stringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    set_config_value(c, section.empty() ? key : section + "." + key, line.substr(eq + 1));
  }
  return c;
}

ExperimentConfig parse_config_json(const json& j, ExperimentConfig c) {
  apply_json(c, j, "");
  return c;
}

ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string text = ss.str();
  const bool is_json = (path.size() > 5 && path.substr(path.size() - 5) == ".json") || trim(text).rfind('{', 0) == 0;
  if (!is_json) return parse_config_text(text, base);
  try {
    return parse_config_json(json::parse(text), base);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
}

json config_to_json(const ExperimentConfig& c) {
  json j = json::object();
  for (const auto& f : config_fields()) {
    if (!f.echoed) continue;
    const auto dot = f.name.find('.');
    j[f.name.substr(0, dot)][f.name.substr(dot + 1)] = f.get(c);
  }
  return j;
}

std::string config_to_text(const ExperimentConfig& c) {
  std::string out, section;
  for (const auto& f : config_fields()) {
    const auto dot = f.name.find('.');
    const std::string s = f.name.substr(0, dot);
    if (s != section) {
      out += (out.empty() ? "[" : "\n[") + s + "]\n";
      section = s;
    }
    out += f.name.substr(dot + 1) + " = " + json_scalar_text(f.get(c)) + "\n";
  }
  return out;
}

void ExperimentConfig::validate_train() const {
  const ObjectiveKind k = parse_kind(objective);
  if (is_se_style(k) && !(eps_train > 0.0)) {
    throw ConfigError(std::string(kind_name(k)) + " needs objective.eps_train > 0");
  }
  if (k == ObjectiveKind::AVAE_SS && pretrained.empty()) {
    throw ConfigError("AVAE_SS needs train.pretrained (a checkpoint path)");
  }
  if (k != ObjectiveKind::AVAE_SS && !pretrained.empty()) {
    throw ConfigError("train.pretrained is only used by AVAE_SS");
  }
  if (latent == 0) throw ConfigError("model.latent must be >= 1");
  if (!(v > 0.0)) throw ConfigError("model.v must be > 0");
  if (steps == 0 || batch == 0) throw ConfigError("train.steps and train.batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (pgd_train_steps < 0) throw ConfigError("objective.pgd_train_steps must be >= 0");
  if (dataset != "colormnist" && dataset != "mnist" && dataset != "synth") {
    throw ConfigError("data.dataset must be colormnist, mnist or synth, got '" + dataset + "'");
  }
  if (train_size == 0 || test_size == 0) throw ConfigError("data.train_size and data.test_size must be >= 1");
  objective_config().validate();
}

ObjectiveConfig ExperimentConfig::objective_config() const {
  ObjectiveConfig o;
  o.kind = parse_kind(objective);
  o.rho = rho;
  o.rho_se = rho_se;
  if (is_se_style(o.kind)) {
    PGDConfig a = PGDConfig::training(eps_train);
    a.steps = pgd_train_steps;
    a.clip_box = dataset != "synth";
    o.attack = a;
  }
  o.mc_samples = mc_samples;
  o.delusion_noise = delusion_noise;
  o.se_weight = se_weight;
  return o;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.objective = objective_config();
  t.adam = AdamConfig{lr};
  t.batch = batch;
  t.steps = steps;
  t.seed = seed;
  t.pretrained_decoder = !pretrained.empty();
  t.record_wallclock = record_wallclock;
  return t;
}

Architecture ExperimentConfig::architecture(std::size_t input_dim) const {
  return Architecture{input_dim, latent, hidden};
}

PGDConfig ExperimentConfig::eval_attack() const {
  if (pgd_eval_steps < 0 || pgd_eval_restarts < 0) throw ConfigError("eval.pgd_steps/pgd_restarts must be >= 0");
  PGDConfig p = PGDConfig::evaluation(0.0);
  p.steps = pgd_eval_steps;
  p.restarts = pgd_eval_restarts;
  return p;
}

// ---------------------------------------------------------------- checkpoint

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  auto params = named_parameters(ck.model);
  json h;
  h["version"] = kCheckpointVersion;
  h["architecture"] = {{"input_dim", ck.arch.input_dim}, {"latent_dim", ck.arch.latent_dim}, {"hidden", ck.arch.hidden}};
  h["obs"] = {{"v", ck.model.obs.v}, {"mse_mode", ck.model.obs.mse_mode}};
  h["tensors"] = json::array();
  for (const auto& [name, t] : params) h["tensors"].push_back({{"name", name}, {"shape", t->shape()}});
  const bool moments = !ck.state.adam.m.empty();
  if (moments && (ck.state.adam.m.size() != params.size() || ck.state.adam.v.size() != params.size())) {
    throw ContractError("checkpoint: optimizer state does not match the parameter list");
  }
  const AdamConfig& a = ck.state.adam.cfg;
  h["adam"] = {{"lr", a.lr},     {"beta1", a.beta1},   {"beta2", a.beta2},
               {"eps", a.eps},   {"step", ck.state.adam.step}, {"moments", moments}};
  h["train"] = {{"step", ck.state.step},
                {"batch_counter", ck.state.batch_counter},
                {"noise_counter", ck.state.noise_counter},
                {"attack_counter", ck.state.attack_counter}};
  h["config"] = ck.config;
  const std::string hs = h.dump();

  std::vector<std::uint8_t> b = {'A', 'V', 'A', 'E'};
  put(b, kCheckpointVersion);
  put(b, static_cast<std::uint64_t>(hs.size()));
  b.insert(b.end(), hs.begin(), hs.end());
  for (const auto& [name, t] : params) put_tensor(b, *t);
  if (moments) {
    for (const auto& t : ck.state.adam.m) put_tensor(b, t);
    for (const auto& t : ck.state.adam.v) put_tensor(b, t);
  }
  return b;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  ByteCursor r{bytes, what};
  r.need(4);
  if (std::memcmp(bytes.data(), "AVAE", 4) != 0) r.fail("bad magic");
  r.pos = 4;
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    r.pos = 4;
    r.fail("unsupported version " + std::to_string(version));
  }
  const auto len = r.get<std::uint64_t>();
  r.need(len);
  json h;
  try {
    h = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(r.pos + len));
  } catch (const json::exception& e) {
    r.fail(std::string("header is not JSON: ") + e.what());
  }
  const std::size_t header_at = r.pos;
  r.pos += len;

  Checkpoint ck;
  try {
    const auto& ar = h.at("architecture");
    ck.arch = Architecture{ar.at("input_dim"), ar.at("latent_dim"), ar.at("hidden").get<std::vector<std::size_t>>()};
    ObservationModel obs{h.at("obs").at("v"), h.at("obs").at("mse_mode")};
    ck.model = init_model(ck.arch, obs, 0);
    auto params = named_parameters(ck.model);
    const auto& tl = h.at("tensors");
    if (tl.size() != params.size()) {
      r.pos = header_at;
      r.fail("header lists " + std::to_string(tl.size()) + " tensors, architecture has " +
             std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (tl[i].at("name") != params[i].first || tl[i].at("shape").get<Shape>() != params[i].second->shape()) {
        r.pos = header_at;
        r.fail("tensor " + std::to_string(i) + " (" + tl[i].at("name").get<std::string>() +
               ") does not match the architecture");
      }
    }
    for (auto& [name, t] : params) r.fill(*t);
    const auto& ad = h.at("adam");
    ck.state.adam.cfg = AdamConfig{ad.at("lr"), ad.at("beta1"), ad.at("beta2"), ad.at("eps")};
    ck.state.adam.step = ad.at("step");
    if (ad.at("moments").get<bool>()) {
      for (auto& [name, t] : params) {
        ck.state.adam.names.push_back(name);
        ck.state.adam.m.emplace_back(t->shape());
        ck.state.adam.v.emplace_back(t->shape());
      }
      for (auto& t : ck.state.adam.m) r.fill(t);
      for (auto& t : ck.state.adam.v) r.fill(t);
    }
    const auto& tr = h.at("train");
    ck.state.step = tr.at("step");
    ck.state.batch_counter = tr.at("batch_counter");
    ck.state.noise_counter = tr.at("noise_counter");
    ck.state.attack_counter = tr.at("attack_counter");
    ck.config = h.at("config");
  } catch (const json::exception& e) {
    r.pos = header_at;
    r.fail(std::string("bad header field: ") + e.what());
  }
  if (r.pos != bytes.size()) r.fail("trailing bytes");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_file(path, serialize_checkpoint(ck)); }

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path), path); }

// ---------------------------------------------------------------- data

DataSplit load_data(const ExperimentConfig& c) {
  const std::string tr_cache = c.cache.empty() ? "" : c.cache + ".train.avds";
  const std::string te_cache = c.cache.empty() ? "" : c.cache + ".test.avds";
  if (!c.cache.empty() && fs::exists(tr_cache) && fs::exists(te_cache)) {
    return DataSplit{load_cache(tr_cache), load_cache(te_cache)};
  }
  DataSplit s;
  if (c.dataset == "synth") {
    if (c.synth_latent == 0 || c.synth_obs < c.synth_latent) throw ConfigError("data.synth_obs must be >= synth_latent >= 1");
    Rng rng(c.seed, "synth.W");
    Eigen::MatrixXd W(c.synth_obs, c.synth_latent);
    for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = rng.normal() / std::sqrt(double(c.synth_latent));
    s.train = synth_linear_gaussian(c.train_size, W, c.synth_v, c.seed);
    s.test = synth_linear_gaussian(c.test_size, W, c.synth_v, c.seed ^ 0x5eedULL);
  } else if (c.dataset == "mnist" || c.dataset == "colormnist") {
    const std::string dir = (c.data_dir.empty() ? std::string(AVAE_DATA_DIR) : c.data_dir) + "/mnist/";
    Dataset tr = load_idx(dir + "train-images-idx3-ubyte.gz", dir + "train-labels-idx1-ubyte.gz");
    Dataset te = load_idx(dir + "t10k-images-idx3-ubyte.gz", dir + "t10k-labels-idx1-ubyte.gz");
    s.train = subsample(tr, std::min(c.train_size, tr.size()), c.seed);
    s.test = subsample(te, std::min(c.test_size, te.size()), c.seed);
    if (c.dataset == "colormnist") {
      s.train = colorize(s.train, c.palette, c.seed);
      s.test = colorize(s.test, c.palette, c.seed ^ 0x5eedULL);
    }
  } else {
    throw ConfigError("unknown dataset '" + c.dataset + "'");
  }
  if (!c.cache.empty()) {
    save_cache(s.train, tr_cache);
    save_cache(s.test, te_cache);
  }
  return s;
}

// ---------------------------------------------------------------- output

OutputDir::OutputDir(const std::string& dir, bool overwrite) : dir_(dir), overwrite_(overwrite) {
  if (dir.empty()) throw ConfigError("run.out must name a directory");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
}

std::string OutputDir::claim(const std::string& name) {
  if (name.empty() || name.find("..") != std::string::npos || name.front() == '/') {
    throw ConfigError("output name '" + name + "' must stay inside the output directory");
  }
  const std::string p = (fs::path(dir_) / name).string();
  if (!overwrite_ && fs::exists(p)) throw ConfigError("refusing to overwrite " + p + " (set run.overwrite=true)");
  return p;
}

void OutputDir::write_text(const std::string& name, const std::string& text) { write_file(claim(name), text); }

std::string matrix_csv(const Tensor& m) {
  std::string s;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) s += (c ? "," : "") + fmt17(m.at(r, c));
    s += "\n";
  }
  return s;
}

std::vector<std::uint8_t> matrix_pgm(const Tensor& m) {
  if (m.rank() != 2) throw DimensionError("matrix_pgm: expected a matrix");
  double mx = 0.0;
  for (double v : m.data()) mx = std::max(mx, v);
  const std::string head = "P5\n" + std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n255\n";
  std::vector<std::uint8_t> b(head.begin(), head.end());
  for (double v : m.data()) {
    const double s = mx > 0.0 ? std::clamp(v / mx, 0.0, 1.0) : 0.0;
    b.push_back(static_cast<std::uint8_t>(std::lround(255.0 * s)));
  }
  return b;
}

// ---------------------------------------------------------------- runs

TrainOutcome run_train(const ExperimentConfig& c) {
  c.validate_train();
  const TrainConfig tc = c.train_config();
  OutputDir od(c.out, c.overwrite);
  TrainOutcome o;
  o.checkpoint = od.claim("checkpoint.avae");
  o.metrics = od.claim("metrics.csv");
  o.config = od.claim("config.json");

  Checkpoint ck;
  Tensor data;
  if (tc.objective.kind == ObjectiveKind::AVAE_SS) {
    const Checkpoint pre = load_checkpoint(c.pretrained);
    ck.model = pre.model;
    ck.arch = pre.arch;
  } else {
    DataSplit ds = load_data(c);
    data = ds.train.x;
    ck.arch = c.architecture(data.cols());
    ck.model = init_model(ck.arch, ObservationModel{c.v, c.mse_mode}, c.seed);
  }
  ck.config = config_to_json(c);

  std::string csv = metrics_csv_header() + "\n";
  auto on_step = [&](const MetricsRow& r) { csv += metrics_csv_row(r) + "\n"; };
  try {
    o.rows = train(ck.model, data, tc, &ck.state, on_step);
  } catch (const NumericError&) {
    write_file(o.metrics, csv);
    throw;
  }
  write_file(o.metrics, csv);
  save_checkpoint(o.checkpoint, ck);
  write_file(o.config, config_to_json(c).dump(2) + "\n");
  return o;
}

EvalOutcome run_eval(const std::string& checkpoint, const ExperimentConfig& c, const std::string& compare) {
  chain_mode(c.drift_mode);
  for (double e : c.eps_eval)
    if (!(e >= 0.0)) throw ConfigError("eval.eps entries must be >= 0");
  OutputDir od(c.out, c.overwrite);
  EvalOutcome o;
  o.files["report"] = od.claim("report.json");
  o.files["robustness"] = od.claim("robustness.csv");
  o.files["drift"] = od.claim("drift.csv");
  if (!compare.empty()) o.files["comparison"] = od.claim("comparison.json");

  const Checkpoint ck = load_checkpoint(checkpoint);
  const DataSplit data = load_data(c);
  EvalCore e = evaluate(ck, c, data);
  json j = eval_json(e);
  j["config"] = config_to_json(c);
  j["checkpoint_config"] = ck.config;
  o.report_json = j.dump(2);
  write_file(o.files["report"], o.report_json + "\n");
  write_file(o.files["robustness"], e.report.to_csv());
  write_file(o.files["drift"], drift_csv(e.drift));

  if (!compare.empty()) {
    const Checkpoint other = load_checkpoint(compare);
    EvalCore f = evaluate(other, c, data);
    json cmp;
    cmp["config"] = config_to_json(c);
    for (const auto& t : e.report.tasks) {
      cmp["tasks"][t]["nominal_delta"] = e.report.nominal.at(t) - f.report.nominal.at(t);
      for (std::size_t i = 0; i < c.eps_eval.size(); ++i) {
        char key[32];
        std::snprintf(key, sizeof key, "%g", c.eps_eval[i]);
        cmp["tasks"][t]["adversarial_delta"][key] = e.report.adversarial.at(t)[i] - f.report.adversarial.at(t)[i];
      }
    }
    cmp["mse_delta"] = e.mse - f.mse;
    cmp["drift_final_delta"] = (e.drift.empty() ? 0.0 : e.drift.back()) - (f.drift.empty() ? 0.0 : f.drift.back());
    cmp["this"] = eval_json(e);
    cmp["other"] = eval_json(f);
    write_file(o.files["comparison"], cmp.dump(2) + "\n");
  }
  o.report = std::move(e.report);
  o.drift = std::move(e.drift);
  o.mse = e.mse;
  return o;
}

DiscreteOutcome run_discrete_demo(const ExperimentConfig& c) {
  if (static_cast<double>(c.vm_nx) * c.vm_nz * c.vm_nx * c.vm_nz > kEnumerationBudget) {
    throw ConfigError("discrete: grid " + std::to_string(c.vm_nx) + "x" + std::to_string(c.vm_nz) +
                      " exceeds the enumeration budget");
  }
  if (c.vm_nx < 2 || c.vm_nz < 2) throw ConfigError("discrete: grids need n >= 2");
  if (!(c.vm_v > 0.0) || !(c.vm_nu > 0.0) || !(c.vm_lr > 0.0)) throw ConfigError("discrete: v, nu and lr must be > 0");
  if (c.vm_seeds == 0) throw ConfigError("discrete.seeds must be >= 1");

  OutputDir od(c.out, c.overwrite);
  static const char* panels[] = {"decoder", "x_kernel", "encoder", "z_kernel"};
  std::vector<std::string> names;
  for (const char* model : {"vae", "avae"})
    for (const char* p : panels)
      for (const char* ext : {".csv", ".pgm"}) names.push_back(std::string(model) + "_" + p + ext);
  names.push_back("stats.json");
  DiscreteOutcome o;
  for (const auto& n : names) o.files.push_back(od.claim(n));

  json stats;
  std::vector<double> weighted_avae, weighted_vae;
  for (std::size_t s = 0; s < c.vm_seeds; ++s) {
    const std::uint64_t seed = c.seed + s;
    TabularModel vae = init_tabular(c.vm_nx, c.vm_nz, c.vm_v, c.vm_nu, seed);
    TabularModel avae = vae;
    const Tensor pi = bimodal_histogram(vae.xgrid);
    train_tabular(vae, pi, TabularTrainConfig{TabularObjective::VAE, c.vm_steps, AdamConfig{c.vm_lr}});
    train_tabular(avae, pi, TabularTrainConfig{TabularObjective::AVAE, c.vm_steps, AdamConfig{c.vm_lr}});
    const Heatmaps hv = transition_heatmaps(vae), ha = transition_heatmaps(avae);
    o.diag_vae.push_back(diagonal_mass(hv.z_kernel));
    o.diag_avae.push_back(diagonal_mass(ha.z_kernel));
    o.loss_vae.push_back(exact_vae_loss(vae, pi));
    o.loss_avae.push_back(exact_avae_loss(avae, pi));
    // Diagonal weighted by how often the encoder visits each code on the data.
    for (auto [m, h, out] : {std::tuple{&vae, &hv, &weighted_vae}, std::tuple{&avae, &ha, &weighted_avae}}) {
      const Tables t = tables(*m);
      double acc = 0.0;
      for (std::size_t z = 0; z < c.vm_nz; ++z) {
        double a = 0.0;
        for (std::size_t x = 0; x < c.vm_nx; ++x) a += pi[x] * t.enc.at(x, z);
        acc += a * h->z_kernel.at(z, z) * static_cast<double>(c.vm_nz);
      }
      out->push_back(acc);
    }
    if (s == 0) {
      std::size_t k = 0;
      for (const Heatmaps* h : {&hv, &ha}) {
        for (const Tensor* t : {&h->decoder, &h->x_kernel, &h->encoder, &h->z_kernel}) {
          write_file(o.files[k++], matrix_csv(*t));
          write_file(o.files[k++], matrix_pgm(*t));
        }
      }
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  stats["seeds"] = c.vm_seeds;
  stats["diag_mass_vae"] = mean(o.diag_vae);
  stats["diag_mass_avae"] = mean(o.diag_avae);
  stats["diag_mass_vae_per_seed"] = o.diag_vae;
  stats["diag_mass_avae_per_seed"] = o.diag_avae;
  stats["encoder_weighted_diag_vae"] = weighted_vae;
  stats["encoder_weighted_diag_avae"] = weighted_avae;
  stats["final_loss_vae"] = o.loss_vae;
  stats["final_loss_avae"] = o.loss_avae;
  stats["config"] = config_to_json(c);
  write_file(o.files.back(), stats.dump(2) + "\n");
  return o;
}

PpcaOutcome run_ppca_checks(const ExperimentConfig& c, int trials) {
  OutputDir od(c.out, c.overwrite);
  const std::string jp = od.claim("ppca_checks.json"), dp = od.claim("ppca_drift.csv");
  PpcaOutcome o;
  o.report = run_ppca_identity_suite(c.seed, trials);
  o.pass = true;
  json j;
  for (const auto& [k, v] : o.report.residuals) {
    j["residuals"][k] = v;
    o.pass = o.pass && v < kPpcaResidualTolerance;
  }
  j["seed"] = c.seed;
  j["trials"] = trials;
  j["tolerance"] = kPpcaResidualTolerance;
  j["pass"] = o.pass;
  j["drift"]["distance"] = o.report.drift_distance;
  j["drift"]["orthogonal"] = o.report.drift_orthogonal;
  j["drift"]["consistent_norm"] = o.report.drift_consistent;
  o.json = j.dump(2);
  write_file(jp, o.json + "\n");
  std::string csv = "step,distance,orthogonal\n";
  for (std::size_t t = 0; t < o.report.drift_distance.size(); ++t) {
    csv += std::to_string(t) + "," + fmt17(o.report.drift_distance[t]) + "," + fmt17(o.report.drift_orthogonal[t]) + "\n";
  }
  write_file(dp, csv);
  return o;
}

std::vector<double> run_drift(const std::string& checkpoint, const ExperimentConfig& c) {
  const ChainMode mode = chain_mode(c.drift_mode);
  OutputDir od(c.out, c.overwrite);
  const std::string p = od.claim("drift.csv");
  const Checkpoint ck = load_checkpoint(checkpoint);
  const DataSplit data = load_data(c);
  if (data.test.dim() != ck.arch.input_dim) throw ConfigError("drift: checkpoint and data dimensions differ");
  const std::size_t np = std::min(c.drift_points, data.test.size());
  auto d = chain_drift(ck.model, data.test.x.slice_rows(0, np), c.drift_steps, mode, c.seed);
  write_file(p, drift_csv(d));
  return d;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e)) {
    return 1;
  }
  return 2;
}

}  // namespace avae
