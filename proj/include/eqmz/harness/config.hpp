#pragma once

// Experiment configuration: flat key=value text grouped by [section].
//
//   [env]
//   side = 14
//   # comment
//
// Every field is addressable as "section.key", both in files and as a
// command-line override. Unknown keys and unparsable values are errors.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "eqmz/env/minipacman.hpp"
#include "eqmz/mcts.hpp"
#include "eqmz/training.hpp"
#include "eqmz/worldmodel.hpp"

namespace eqmz::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SplitConfig {
  std::uint64_t seed = 0;
  int train_maps = 5;
  int eval_maps = 5;
  std::string manifest;  // empty: <output_dir>/maps/manifest.txt
};

struct EvalConfig {
  int episodes = 100;
  std::uint64_t seed = 0;
};

struct AuditConfig {
  int cases = 100;
  int budget = 50;
  std::uint64_t seed = 0;
  int warmup_steps = 8;  // random environment steps before each audited observation
};

struct ExperimentConfig {
  env::EnvConfig env;
  ModelConfig model;
  Variant variant = Variant::EqMuZero;
  mcts::MctsConfig search;
  training::TrainConfig train;
  SplitConfig splits;
  EvalConfig eval;
  AuditConfig audit;
  std::string output_dir = "runs/default";

  /// Model sizes with the action count taken from the environment.
  ModelConfig model_config() const {
    ModelConfig m = model;
    m.num_actions = env.num_actions();
    return m;
  }

  void validate() const {
    try {
      env.validate();
      search.validate();
      train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (splits.train_maps < 1 || splits.eval_maps < 1) throw ConfigError("splits: map counts must be >= 1");
    if (eval.episodes < 1) throw ConfigError("eval.episodes must be >= 1");
    if (audit.cases < 1 || audit.budget < 1) throw ConfigError("audit: cases and budget must be >= 1");
  }
};

struct Field {
  std::string name;  // section.key
  std::string help;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

namespace detail {

inline std::string format(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& name, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw ConfigError("invalid value '" + text + "' for " + name);
  return v;
}

inline bool parse_bool(const std::string& name, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid value '" + text + "' for " + name + " (expected true or false)");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Field registry bound to `c`, in serialization order.
inline std::vector<Field> fields(ExperimentConfig& c) {
  std::vector<Field> out;
  auto num = [&out](std::string name, auto& ref, std::string help) {
    using T = std::remove_reference_t<decltype(ref)>;
    out.push_back({name, std::move(help), [&ref, name](const std::string& s) { ref = detail::parse_number<T>(name, s); },
                   [&ref] {
                     if constexpr (std::is_floating_point_v<T>)
                       return detail::format(ref);
                     else
                       return std::to_string(ref);
                   }});
  };
  auto flag = [&out](std::string name, bool& ref, std::string help) {
    out.push_back({name, std::move(help), [&ref, name](const std::string& s) { ref = detail::parse_bool(name, s); },
                   [&ref] { return std::string(ref ? "true" : "false"); }});
  };
  auto text = [&out](std::string name, std::string& ref, std::string help) {
    out.push_back({name, std::move(help), [&ref](const std::string& s) { ref = s; }, [&ref] { return ref; }});
  };

  num("env.side", c.env.side, "maze side length");
  num("env.ghosts", c.env.ghosts, "number of ghosts");
  num("env.food_reward", c.env.food_reward, "reward per food pellet");
  num("env.completion_bonus", c.env.completion_bonus, "reward for eating the last pellet");
  num("env.caught_penalty", c.env.caught_penalty, "reward when a ghost catches the agent");
  num("env.episode_cap", c.env.episode_cap, "maximum steps per episode");
  flag("env.stay_action", c.env.stay_action, "add the non-movement action");

  out.push_back({"model.variant", "EqMuZero, StdMuZero, StdWithEqEncoder, EqWithStdEncoder or EqWithStdPolicy",
                 [&c](const std::string& s) {
                   try {
                     c.variant = parse_variant(s);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [&c] { return to_string(c.variant); }});
  num("model.channels", c.model.channels, "channels per latent component");
  num("model.encoder_layers", c.model.encoder_layers, "convolutions in the equivariant encoder");
  num("model.res_blocks", c.model.res_blocks, "residual blocks in encoder and transition");
  num("model.hidden", c.model.hidden, "hidden width of the head MLPs");
  num("model.kernel", c.model.kernel, "odd convolution kernel size");
  out.push_back({"model.transition", "constrained or interacting",
                 [&c](const std::string& s) {
                   try {
                     c.model.transition = parse_transition_kind(s);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [&c] { return to_string(c.model.transition); }});
  flag("model.scale_latent", c.model.scale_latent, "min-max scale latent components after encoder and transition");

  num("mcts.budget", c.search.budget, "simulations per search");
  num("mcts.c1", c.search.c1, "pUCT constant c1");
  num("mcts.c2", c.search.c2, "pUCT constant c2");
  num("mcts.discount", c.search.discount, "discount factor");
  flag("mcts.root_noise", c.search.root_noise, "Dirichlet noise at the root (forced on in self-play)");
  num("mcts.noise_fraction", c.search.noise_fraction, "root noise mixing fraction");
  num("mcts.noise_alpha", c.search.noise_alpha, "root noise concentration");
  num("mcts.temperature", c.search.temperature, "action sampling temperature outside training");
  flag("mcts.minmax_q", c.search.minmax_q, "min-max normalize Q in selection");

  num("train.iterations", c.train.iterations, "self-play/update iterations");
  num("train.episodes_per_iteration", c.train.episodes_per_iteration, "self-play episodes per iteration");
  num("train.updates_per_iteration", c.train.updates_per_iteration, "optimizer steps per iteration");
  num("train.batch_size", c.train.batch_size, "samples per optimizer step");
  num("train.unroll", c.train.unroll, "unroll length K");
  num("train.td_steps", c.train.td_steps, "n-step value horizon");
  num("train.replay_capacity", c.train.replay_capacity, "trajectories kept in replay");
  num("train.learning_rate", c.train.learning_rate, "Adam learning rate");
  num("train.weight_policy", c.train.weight_policy, "policy loss weight");
  num("train.weight_value", c.train.weight_value, "value loss weight");
  num("train.weight_reward", c.train.weight_reward, "reward loss weight");
  num("train.checkpoint_interval", c.train.checkpoint_interval, "iterations between checkpoints");
  num("train.seed", c.train.seed, "training seed");

  num("splits.seed", c.splits.seed, "map generation seed");
  num("splits.train_maps", c.splits.train_maps, "number of training maps X");
  num("splits.eval_maps", c.splits.eval_maps, "number of held-out maps Y");
  text("splits.manifest", c.splits.manifest, "split manifest path");

  num("eval.episodes", c.eval.episodes, "episodes per setting");
  num("eval.seed", c.eval.seed, "evaluation seed");

  num("audit.cases", c.audit.cases, "observations audited");
  num("audit.budget", c.audit.budget, "search budget per audited search");
  num("audit.seed", c.audit.seed, "audit seed");
  num("audit.warmup_steps", c.audit.warmup_steps, "random steps before each audited observation");

  text("run.output_dir", c.output_dir, "output directory");
  return out;
}

inline void set_field(ExperimentConfig& c, const std::string& name, const std::string& value) {
  for (Field& f : fields(c))
    if (f.name == name) {
      f.set(value);
      return;
    }
  throw ConfigError("unknown config key '" + name + "'");
}

inline void parse_config(ExperimentConfig& c, std::istream& in, const std::string& origin = "<config>") {
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    auto where = [&] { return origin + ":" + std::to_string(line_no) + ": "; };
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(where() + "unterminated section header");
      section = detail::trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(where() + "expected key = value");
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string value = detail::trim(s.substr(eq + 1));
    try {
      set_field(c, section.empty() ? key : section + "." + key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where() + e.what());
    }
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  ExperimentConfig c;
  parse_config(c, in, path.string());
  return c;
}

/// Every field, grouped by section; parse_config(write_config(c)) == c.
inline std::string write_config(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  std::ostringstream out;
  std::string section;
  for (const Field& f : fields(c)) {
    const auto dot = f.name.find('.');
    const std::string sec = f.name.substr(0, dot);
    if (sec != section) {
      out << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    out << f.name.substr(dot + 1) << " = " << f.get() << '\n';
  }
  return out.str();
}

/// Relative output paths are resolved against EQMZ_OUTPUT_ROOT when it is set.
inline std::filesystem::path output_root(const ExperimentConfig& c) {
  std::filesystem::path p(c.output_dir);
  if (p.is_relative())
    if (const char* root = std::getenv("EQMZ_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / p;
  return p;
}

inline std::filesystem::path manifest_path(const ExperimentConfig& c) {
  if (!c.splits.manifest.empty()) return c.splits.manifest;
  return output_root(c) / "maps" / "manifest.txt";
}

inline training::TrainSetup train_setup(const ExperimentConfig& c) {
  training::TrainSetup s;
  s.model = c.model_config();
  s.variant = c.variant;
  s.env = c.env;
  s.search = c.search;
  s.train = c.train;
  return s;
}

}  // namespace eqmz::harness
