#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avae/data.hpp"
#include "avae/discrete_vm.hpp"
#include "avae/eval.hpp"
#include "avae/nets.hpp"
#include "avae/objectives.hpp"
#include "avae/ppca.hpp"
#include "json.hpp"

namespace avae {

struct ExperimentConfig {
  // [model]
  std::size_t latent = 8;
  std::vector<std::size_t> hidden = {64, 64};
  double v = 0.2;
  bool mse_mode = false;
  // [objective]
  std::string objective = "VAE";
  double rho = 0.975;
  double rho_se = 0.95;
  double eps_train = 0.0;
  int pgd_train_steps = 20;
  int mc_samples = 1;
  bool delusion_noise = true;
  double se_weight = 1.0;
  // [train]
  double lr = 1e-3;
  std::size_t batch = 64;
  std::size_t steps = 5000;
  std::string pretrained;  ///< checkpoint path, AVAE_SS only
  bool record_wallclock = false;
  // [data]
  std::string dataset = "colormnist";  ///< colormnist | mnist | synth
  std::string data_dir;                ///< empty: the bundled data directory
  std::size_t train_size = 5000;
  std::size_t test_size = 1000;
  int palette = 7;
  std::size_t synth_obs = 16;
  std::size_t synth_latent = 2;
  double synth_v = 0.01;
  std::string cache;  ///< optional AVDS cache path for the prepared train/test pair
  // [eval]
  std::vector<double> eps_eval = {0.0, 0.1};
  int pgd_eval_steps = 40;
  int pgd_eval_restarts = 10;
  std::size_t probe_steps = 2000;
  double probe_lr = 1e-3;
  int drift_steps = 50;
  std::size_t drift_points = 200;
  std::string drift_mode = "mean";  ///< mean | sampled
  // [discrete]
  std::size_t vm_nx = 32;
  std::size_t vm_nz = 32;
  double vm_v = 0.1;
  double vm_nu = 1e-3;
  std::size_t vm_steps = 10000;
  double vm_lr = 1e-2;
  std::size_t vm_seeds = 1;
  // [run]
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  bool overwrite = false;

  /// ConfigError on inconsistent settings, before any compute.
  void validate_train() const;
  ObjectiveConfig objective_config() const;
  TrainConfig train_config() const;
  Architecture architecture(std::size_t input_dim) const;
  PGDConfig eval_attack() const;
};

/// One entry per config key; the same table drives the text/JSON parsers,
/// the JSON echo and the command-line flags.
struct ConfigField {
  std::string name;  ///< "section.key"
  std::string help;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<nlohmann::json(const ExperimentConfig&)> get;
  /// Output-location fields are left out of the echo so that runs written to
  /// different directories produce identical artifacts.
  bool echoed = true;
};
const std::vector<ConfigField>& config_fields();

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value);
/// Flat "key = value" lines under "[section]" headers; '#' starts a comment.
ExperimentConfig parse_config_text(const std::string& text, ExperimentConfig base = {});
/// Nested {"section": {"key": value}} or flat {"section.key": value}.
ExperimentConfig parse_config_json(const nlohmann::json& j, ExperimentConfig base = {});
/// Picks the parser from the extension (.json) or the first character.
ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base = {});
nlohmann::json config_to_json(const ExperimentConfig& c);
std::string config_to_text(const ExperimentConfig& c);

struct Checkpoint {
  ModelPair model;
  Architecture arch;
  TrainState state;
  nlohmann::json config;  ///< echo of the producing run
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "AVAE", u32 version, u64 header length, JSON header, LE float64 payloads
/// (parameters, then Adam first and second moments when present).
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what = "checkpoint");

struct DataSplit {
  Dataset train;
  Dataset test;
};
DataSplit load_data(const ExperimentConfig& c);

/// Refuses to clobber existing files unless overwrite is set; creates the directory.
class OutputDir {
 public:
  OutputDir(const std::string& dir, bool overwrite);
  /// Path for a file name; ConfigError if it exists and overwrite is off.
  std::string claim(const std::string& name);
  void write_text(const std::string& name, const std::string& text);
  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  bool overwrite_;
};

struct TrainOutcome {
  std::string checkpoint;
  std::string metrics;
  std::string config;
  std::vector<MetricsRow> rows;
};
TrainOutcome run_train(const ExperimentConfig& c);

struct EvalOutcome {
  RobustnessReport report;
  std::vector<double> drift;
  double mse = 0.0;
  std::string report_json;
  std::map<std::string, std::string> files;
};
/// `compare` optionally names a second checkpoint; a comparison.json with
/// per-task deltas (this minus other) is written next to the report.
EvalOutcome run_eval(const std::string& checkpoint, const ExperimentConfig& c, const std::string& compare = "");

struct DiscreteOutcome {
  std::vector<double> diag_vae, diag_avae;  ///< panel (iv), one per seed
  std::vector<double> loss_vae, loss_avae;  ///< final exact losses
  std::vector<std::string> files;
};
/// Heatmap CSV/PGM files for the first seed plus stats.json over all seeds.
DiscreteOutcome run_discrete_demo(const ExperimentConfig& c);

struct PpcaOutcome {
  PpcaCheckReport report;
  bool pass = false;
  std::string json;
};
inline constexpr double kPpcaResidualTolerance = 1e-8;
PpcaOutcome run_ppca_checks(const ExperimentConfig& c, int trials = 20);

/// Chain drift of a checkpoint on test points; writes drift.csv.
std::vector<double> run_drift(const std::string& checkpoint, const ExperimentConfig& c);

/// Heatmap writers.
std::string matrix_csv(const Tensor& m);
/// P5, one byte per cell, row-major, scaled so the maximum is 255.
std::vector<std::uint8_t> matrix_pgm(const Tensor& m);

/// Process exit code for an exception: 1 configuration/format problems, 2 numeric ones.
int exit_code_for(const std::exception& e);

}  // namespace avae
