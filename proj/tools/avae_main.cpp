#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "avae/cli.hpp"
#include "avae/errors.hpp"

using namespace avae;

namespace {

struct Overrides {
  std::string config_file;
  std::vector<std::string> sets;           // key=value
  std::map<std::string, std::string> flags;  // one slot per config field
  bool overwrite = false;
};

void add_config_options(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config_file, "config file (INI-style or JSON)");
  app->add_option("--set", o.sets, "section.key=value, repeatable");
  app->add_flag("--overwrite", o.overwrite, "replace existing output files");
  for (const auto& f : config_fields()) {
    if (f.name == "run.overwrite") continue;
    app->add_option("--" + f.name, o.flags[f.name], f.help)->group("Config keys");
  }
}

ExperimentConfig resolve(const Overrides& o, const CLI::App* app, ExperimentConfig c) {
  if (!o.config_file.empty()) c = load_config_file(o.config_file, c);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(c, s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [name, value] : o.flags) {
    if (app->count("--" + name) > 0) set_config_value(c, name, value);
  }
  if (o.overwrite) c.overwrite = true;
  return c;
}

// eval/drift default to the settings the checkpoint was trained with
ExperimentConfig from_checkpoint(const std::string& path) {
  ExperimentConfig c = parse_config_json(load_checkpoint(path).config);
  c.out = std::filesystem::path(path).parent_path().string();
  if (c.out.empty()) c.out = ".";
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Autoencoding VAE experiments"};
  app.require_subcommand(0, 1);

  Overrides tr_o, ev_o, dd_o, pp_o, dr_o;
  std::string ev_ckpt, ev_compare, dr_ckpt;
  int pp_trials = 20;
  bool dump_config = false;
  app.add_flag("--dump-config", dump_config, "print the default config and exit");

  auto* tr = app.add_subcommand("train", "train a model, write checkpoint.avae, metrics.csv, config.json");
  add_config_options(tr, tr_o);

  auto* ev = app.add_subcommand("eval", "probe accuracy, adversarial accuracy, drift and MSE of a checkpoint");
  ev->add_option("checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--compare", ev_compare, "second checkpoint; writes comparison.json");
  add_config_options(ev, ev_o);

  auto* dd = app.add_subcommand("discrete-demo", "tabular von Mises model: VAE vs AVAE heatmaps");
  add_config_options(dd, dd_o);

  auto* pp = app.add_subcommand("ppca-checks", "closed-form linear-Gaussian identities and the drift demo");
  pp->add_option("--trials", pp_trials, "random instances")->check(CLI::PositiveNumber);
  add_config_options(pp, pp_o);

  auto* dr = app.add_subcommand("drift", "encode/decode chain drift of a checkpoint");
  dr->add_option("checkpoint", dr_ckpt, "checkpoint file")->required();
  add_config_options(dr, dr_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (dump_config) {
    std::cout << config_to_text(ExperimentConfig{});
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 1;
  }

  try {
    if (tr->parsed()) {
      const ExperimentConfig c = resolve(tr_o, tr, {});
      const TrainOutcome o = run_train(c);
      const auto& last = o.rows.back();
      std::printf("trained %zu steps, final loss %.6g\n%s\n", static_cast<std::size_t>(last.step), last.loss,
                  o.checkpoint.c_str());
    } else if (ev->parsed()) {
      const ExperimentConfig c = resolve(ev_o, ev, from_checkpoint(ev_ckpt));
      const EvalOutcome o = run_eval(ev_ckpt, c, ev_compare);
      std::cout << o.report.to_csv();
      std::printf("mse %.6g, drift at step %zu: %.6g\n", o.mse, o.drift.size() - 1, o.drift.back());
    } else if (dd->parsed()) {
      const ExperimentConfig c = resolve(dd_o, dd, {});
      const DiscreteOutcome o = run_discrete_demo(c);
      for (std::size_t s = 0; s < o.diag_vae.size(); ++s) {
        std::printf("seed %zu: z-kernel diagonal mass VAE %.4f AVAE %.4f\n", s, o.diag_vae[s], o.diag_avae[s]);
      }
    } else if (pp->parsed()) {
      const ExperimentConfig c = resolve(pp_o, pp, {});
      const PpcaOutcome o = run_ppca_checks(c, pp_trials);
      for (const auto& [k, v] : o.report.residuals) std::printf("%-28s %.3e\n", k.c_str(), v);
      std::printf("%s\n", o.pass ? "all residuals below tolerance" : "RESIDUAL ABOVE TOLERANCE");
      return o.pass ? 0 : 2;
    } else if (dr->parsed()) {
      const ExperimentConfig c = resolve(dr_o, dr, from_checkpoint(dr_ckpt));
      const auto d = run_drift(dr_ckpt, c);
      std::printf("drift at step %zu: %.6g\n", d.size() - 1, d.back());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  }
  return 0;
}
