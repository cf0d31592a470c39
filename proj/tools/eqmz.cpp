// eqmz: map generation, training, evaluation, equivariance audit and plots.
//
// Exit status: 0 success, 1 I/O or runtime error, 2 configuration error,
// 3 audit failure of a fully equivariant variant, 4 training divergence.

#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eqmz/harness/commands.hpp"

namespace {

using eqmz::harness::ExperimentConfig;

/// Loads --config (if any), then applies each --section.key override; a
/// repeated override keeps its last value.
struct ConfigOptions {
  std::string config_file;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "key=value config file with [section] headers")->check(CLI::ExistingFile);
    ExperimentConfig defaults;
    for (const auto& f : eqmz::harness::fields(defaults)) {
      const std::string name = f.name;
      app.add_option_function<std::string>(
          "--" + name, [this, name](const std::string& v) { overrides[name] = v; },
          f.help + " (default " + f.get() + ")")
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config_file.empty() ? ExperimentConfig{} : eqmz::harness::load_config(config_file);
    for (const auto& [k, v] : overrides) eqmz::harness::set_field(c, k, v);
    return c;
  }
};

int run_with_config(const ConfigOptions& opts, const std::function<int(const ExperimentConfig&)>& body) {
  ExperimentConfig c;
  try {
    c = opts.resolve();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return eqmz::harness::kConfigError;
  }
  return body(c);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"C4-equivariant world-model planning: maps, training, evaluation, audit, plots"};
  app.require_subcommand(1);
  int status = 0;

  ConfigOptions gen_opts;
  CLI::App* gen = app.add_subcommand("gen-maps", "generate training (X), rotated (RX) and held-out (Y) maps");
  gen_opts.attach(*gen);

  ConfigOptions train_opts;
  CLI::App* train = app.add_subcommand("train", "train one variant on the X maps");
  train_opts.attach(*train);

  ConfigOptions eval_opts;
  std::optional<std::string> eval_ckpt;
  CLI::App* eval = app.add_subcommand("eval", "greedy evaluation on same, rotated and different maps");
  eval_opts.attach(*eval);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint (default <output>/train/<variant>/model.ckpt)");

  ConfigOptions audit_opts;
  std::optional<std::string> audit_ckpt;
  CLI::App* audit = app.add_subcommand("audit", "paired-search equivariance audit");
  audit_opts.attach(*audit);
  auto* ckpt_opt = audit->add_option("--checkpoint", audit_ckpt, "audit trained weights");
  audit->add_flag("--random-weights", "audit freshly initialized weights (the default)")->excludes(ckpt_opt);

  ConfigOptions plot_opts;
  std::vector<std::string> plot_inputs;
  std::optional<std::string> plot_out;
  CLI::App* plot = app.add_subcommand("plot", "render metrics logs and evaluation reports as SVG");
  plot_opts.attach(*plot);
  plot->add_option("inputs", plot_inputs, "metrics.csv and report.csv files")->required();
  plot->add_option("--out", plot_out, "output directory (default <output>/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : eqmz::harness::kConfigError;
  }

  namespace h = eqmz::harness;
  if (*gen) status = run_with_config(gen_opts, [](const ExperimentConfig& c) { return h::cmd_gen_maps(c); });
  if (*train) status = run_with_config(train_opts, [](const ExperimentConfig& c) { return h::cmd_train(c); });
  if (*eval) status = run_with_config(eval_opts, [&](const ExperimentConfig& c) { return h::cmd_eval(c, eval_ckpt); });
  if (*audit)
    status = run_with_config(audit_opts, [&](const ExperimentConfig& c) { return h::cmd_audit(c, audit_ckpt); });
  if (*plot)
    status = run_with_config(plot_opts, [&](const ExperimentConfig& c) {
      const std::filesystem::path out = plot_out ? std::filesystem::path(*plot_out) : h::output_root(c) / "plots";
      return h::cmd_plot(plot_inputs, out);
    });
  return status;
}
