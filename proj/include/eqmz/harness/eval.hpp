#pragma once

// Three-setting evaluation: same (X), rotated (RX) and different (Y).
//
// Episode e of every setting uses reset seed s_e and a fresh search stream
// seeded with r_e. On X it plays map X[e mod |X|]. On RX it plays the
// k-rotated copy of that map with k = 1 + (e div |X|) mod 3, resets with
// frame k and transports the search stream by k, so for an equivariant
// model the RX episode is the exact mirror image of the X episode. On Y it
// plays Y[e mod |Y|].

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "eqmz/env/minipacman.hpp"
#include "eqmz/env/splits.hpp"
#include "eqmz/mcts.hpp"
#include "eqmz/training.hpp"

namespace eqmz::harness {

enum class Setting { Same, Rotated, Different };

inline constexpr std::array<Setting, 3> all_settings{Setting::Same, Setting::Rotated, Setting::Different};

inline std::string to_string(Setting s) {
  switch (s) {
    case Setting::Same: return "same";
    case Setting::Rotated: return "rotated";
    case Setting::Different: return "different";
  }
  return "?";
}

struct EpisodeRecord {
  Setting setting = Setting::Same;
  int episode = 0;
  std::string map;
  int rotation = 0;
  std::uint64_t env_seed = 0;
  double total_return = 0.0;
  int steps = 0;
};

struct SettingSummary {
  Setting setting = Setting::Same;
  int episodes = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single episode
};

struct EvalReport {
  std::string variant;
  std::vector<SettingSummary> rows;
  std::vector<EpisodeRecord> episodes;

  std::vector<double> returns(Setting s) const {
    std::vector<double> out;
    for (const auto& e : episodes)
      if (e.setting == s) out.push_back(e.total_return);
    return out;
  }
};

inline SettingSummary summarize(Setting s, const std::vector<double>& xs) {
  SettingSummary out{s, static_cast<int>(xs.size()), 0.0, 0.0};
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

inline std::uint64_t episode_env_seed(std::uint64_t seed, int e) { return mix_seed(seed, 2 * static_cast<std::uint64_t>(e)); }
inline std::uint64_t episode_search_seed(std::uint64_t seed, int e) {
  return mix_seed(seed, 2 * static_cast<std::uint64_t>(e) + 1);
}

/// Greedy, noise-free evaluation of `model` over the requested settings.
template <class Model>
EvalReport evaluate(const Model& model, const std::string& variant, const env::EnvConfig& env_config,
                    mcts::MctsConfig search, const env::Splits& splits, int episodes, std::uint64_t seed,
                    const std::vector<Setting>& settings = {all_settings.begin(), all_settings.end()}) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
  search.temperature = 0.0;
  search.root_noise = false;
  const env::MiniPacman environment(env_config);
  EvalReport report;
  report.variant = variant;
  const int nx = static_cast<int>(splits.train.size());
  for (Setting setting : settings) {
    const auto& pool = setting == Setting::Different ? splits.different : splits.train;
    if (pool.empty()) throw std::invalid_argument("evaluate: split for setting '" + to_string(setting) + "' is empty");
    if (setting == Setting::Rotated && splits.rotated.size() != 3 * splits.train.size())
      throw std::invalid_argument("evaluate: rotated split must hold three rotations per training map");
    std::vector<double> returns;
    for (int e = 0; e < episodes; ++e) {
      EpisodeRecord rec;
      rec.setting = setting;
      rec.episode = e;
      rec.env_seed = episode_env_seed(seed, e);
      RngStream rng(episode_search_seed(seed, e));
      env::EnvState start;
      if (setting == Setting::Rotated) {
        const int k = 1 + (e / nx) % 3;
        const env::SplitEntry& entry = splits.rotated[static_cast<std::size_t>(3 * (e % nx) + k - 1)];
        rec.map = entry.file;
        rec.rotation = entry.rotation.k();
        start = environment.reset(entry.maze, rec.env_seed, entry.rotation);
        rng = rng_transport(entry.rotation, rng);
      } else {
        const env::SplitEntry& entry = pool[static_cast<std::size_t>(e) % pool.size()];
        rec.map = entry.file;
        start = environment.reset(entry.maze, rec.env_seed);
      }
      const training::EpisodeResult ep = training::play_episode(model, environment, start, search, rng, false);
      rec.total_return = ep.total_return;
      rec.steps = ep.steps;
      returns.push_back(rec.total_return);
      report.episodes.push_back(rec);
    }
    report.rows.push_back(summarize(setting, returns));
  }
  return report;
}

inline const char* report_header() { return "variant,setting,episodes,mean_return,std_return"; }
inline const char* episodes_header() { return "variant,setting,episode,map,rotation,env_seed,return,steps"; }

inline std::string report_csv(const EvalReport& r) {
  std::string out = std::string(report_header()) + "\n";
  char buf[256];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%.17g,%.17g\n", r.variant.c_str(), to_string(row.setting).c_str(),
                  row.episodes, row.mean, row.std);
    out += buf;
  }
  return out;
}

inline std::string episodes_csv(const EvalReport& r) {
  std::string out = std::string(episodes_header()) + "\n";
  char buf[512];
  for (const auto& e : r.episodes) {
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%s,%d,%llu,%.17g,%d\n", r.variant.c_str(), to_string(e.setting).c_str(),
                  e.episode, e.map.c_str(), e.rotation, static_cast<unsigned long long>(e.env_seed), e.total_return,
                  e.steps);
    out += buf;
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw std::runtime_error("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace eqmz::harness
