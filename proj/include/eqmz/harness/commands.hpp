#pragma once

// Subcommand bodies shared by the CLI and the tests. Each returns a process
// exit status and writes only below the configured output root:
//
//   <root>/maps/                 gen-maps: map files and manifest.txt
//   <root>/train/<variant>/      train: config.ini, metrics.csv, model.ckpt
//   <root>/eval/<variant>/       eval: config.ini, report.csv, episodes.csv
//   <root>/audit/<variant>/      audit: audit.csv
//   <root>/plots/                plot: one SVG per metrics log, report.svg

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "eqmz/env/splits.hpp"
#include "eqmz/harness/audit.hpp"
#include "eqmz/harness/config.hpp"
#include "eqmz/harness/eval.hpp"
#include "eqmz/harness/plot.hpp"
#include "eqmz/nd/checkpoint.hpp"
#include "eqmz/training.hpp"

namespace eqmz::harness {

enum ExitCode : int { kOk = 0, kIoError = 1, kConfigError = 2, kAuditFailure = 3, kDiverged = 4 };

inline std::filesystem::path variant_dir(const ExperimentConfig& c, const char* stage, Variant v) {
  return output_root(c) / stage / to_string(v);
}

inline std::filesystem::path default_checkpoint(const ExperimentConfig& c) {
  return variant_dir(c, "train", c.variant) / "model.ckpt";
}

inline std::vector<env::MazeMap> mazes_of(const std::vector<env::SplitEntry>& entries) {
  std::vector<env::MazeMap> out;
  for (const auto& e : entries) out.push_back(e.maze);
  return out;
}

inline env::Splits load_splits(const ExperimentConfig& c) {
  const auto path = manifest_path(c);
  if (!std::filesystem::exists(path)) throw std::runtime_error("split manifest " + path.string() + " does not exist");
  env::Splits sp = env::read_splits(path);
  if (sp.side != c.env.side)
    throw ConfigError("maps in " + path.string() + " have side " + std::to_string(sp.side) + " but env.side is " +
                      std::to_string(c.env.side));
  return sp;
}

template <class Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const training::TrainingDiverged& e) {
    err << "training diverged: " << e.what() << '\n';
    if (!e.last_good_checkpoint.empty()) err << "last good checkpoint: " << e.last_good_checkpoint << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kIoError;
  }
}

inline int cmd_gen_maps(const ExperimentConfig& c, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    c.validate();
    const auto dir = output_root(c) / "maps";
    const env::Splits sp = env::make_splits(c.splits.seed, c.splits.train_maps, c.splits.eval_maps, c.env.side);
    for (const auto& y : sp.different)
      if (!env::disjoint_from(y.maze, sp.train)) throw std::logic_error("map " + y.file + " overlaps the training split");
    env::write_splits(dir, sp);
    out << "wrote " << sp.train.size() << " X, " << sp.rotated.size() << " RX and " << sp.different.size()
        << " Y maps to " << dir.string() << '\n';
    return static_cast<int>(kOk);
  });
}

inline int cmd_train(const ExperimentConfig& c, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    c.validate();
    const env::Splits sp = load_splits(c);
    const auto dir = variant_dir(c, "train", c.variant);
    write_text(dir / "config.ini", write_config(c));
    const training::TrainResult r = training::train(train_setup(c), mazes_of(sp.train), dir);
    out << "trained " << to_string(c.variant) << " for " << r.metrics.back().step << " steps; checkpoint "
        << (dir / "model.ckpt").string() << '\n';
    return static_cast<int>(kOk);
  });
}

inline int cmd_eval(const ExperimentConfig& c, const std::optional<std::string>& checkpoint,
                    std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    c.validate();
    const std::string path = checkpoint.value_or(default_checkpoint(c).string());
    const WorldModel model = WorldModel::from_checkpoint(nd::load_checkpoint(path));
    if (model.config().num_actions != c.env.num_actions())
      throw ConfigError("checkpoint " + path + " expects " + std::to_string(model.config().num_actions) + " actions");
    const env::Splits sp = load_splits(c);
    const EvalReport report =
        evaluate(model, to_string(model.variant()), c.env, c.search, sp, c.eval.episodes, c.eval.seed);
    const auto dir = variant_dir(c, "eval", model.variant());
    write_text(dir / "config.ini", write_config(c));
    write_text(dir / "report.csv", report_csv(report));
    write_text(dir / "episodes.csv", episodes_csv(report));
    out << report_csv(report);
    return static_cast<int>(kOk);
  });
}

/// Without a checkpoint the model gets random weights seeded from audit.seed.
inline int cmd_audit(const ExperimentConfig& c, const std::optional<std::string>& checkpoint,
                     std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    c.validate();
    const WorldModel model = checkpoint ? WorldModel::from_checkpoint(nd::load_checkpoint(*checkpoint))
                                        : WorldModel(c.model_config(), c.variant, mix_seed(c.audit.seed, 7));
    mcts::MctsConfig cfg = c.search;
    cfg.budget = c.audit.budget;
    const AuditReport report = run_audit(model, c.env, cfg, c.audit.cases, c.audit.seed, c.audit.warmup_steps);
    write_text(variant_dir(c, "audit", model.variant()) / "audit.csv", audit_csv(report));
    for (const auto& k : report.cases)
      if (!k.pass)
        out << "case " << k.index << " g=" << k.g.k() << ": FAIL at simulation " << k.divergence->simulation
            << ", depth " << k.divergence->depth << ": " << k.divergence->detail << '\n';
    out << report.variant << ": " << report.passes() << "/" << report.cases.size() << " cases equivariant (budget "
        << report.budget << ")\n";
    const bool must_pass = model.dispatch().fully_equivariant();
    return static_cast<int>(must_pass && report.failures() > 0 ? kAuditFailure : kOk);
  });
}

inline int cmd_plot(const std::vector<std::string>& inputs, const std::filesystem::path& out_dir,
                    std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    if (inputs.empty()) throw ConfigError("plot: no input CSV files");
    std::optional<CsvTable> merged;
    for (const auto& in : inputs) {
      const CsvTable t = read_csv(in);
      if (t.column("step") >= 0) {
        const std::filesystem::path p(in);
        const std::string stem = p.parent_path().filename().string();
        const auto target = out_dir / ((stem.empty() ? "" : stem + "_") + p.stem().string() + ".svg");
        write_text(target, plot_metrics(t, in));
        out << "wrote " << target.string() << '\n';
      } else {
        plot_csv(t, in);
        if (!merged) {
          merged = t;
        } else {
          if (merged->header != t.header) throw CsvError(in + ":1: header differs from the first report");
          merged->rows.insert(merged->rows.end(), t.rows.begin(), t.rows.end());
          merged->line_numbers.insert(merged->line_numbers.end(), t.line_numbers.begin(), t.line_numbers.end());
        }
      }
    }
    if (merged) {
      const auto target = out_dir / "report.svg";
      write_text(target, plot_report(*merged, "report"));
      out << "wrote " << target.string() << '\n';
    }
    return static_cast<int>(kOk);
  });
}

}  // namespace eqmz::harness
