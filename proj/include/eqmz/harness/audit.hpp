#pragma once

// Paired-search equivariance audit.
//
// For an observation o and a rotation g, one search runs on o with a raw
// stream and its twin runs on g.o with the same stream transported by g. The
// twins are stepped one simulation at a time; after the root expansion and
// after every simulation the two trees are walked together, action a in the
// first matched with g.a in the second, and every node is compared exactly:
// visit counts, Q, priors, rewards, values, child structure and latent
// (second latent == g acting on the first). The first mismatch is reported
// with its simulation index and tree depth.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "eqmz/env/maze.hpp"
#include "eqmz/env/minipacman.hpp"
#include "eqmz/mcts.hpp"
#include "eqmz/observation.hpp"
#include "eqmz/worldmodel.hpp"

namespace eqmz::harness {

struct Divergence {
  int simulation = -1;  // -1: right after the root expansion
  int depth = 0;
  std::string detail;
};

struct AuditCase {
  int index = 0;
  Rotation g{};
  bool pass = false;
  std::optional<Divergence> divergence;
  ActionId action{};          // greedy action of the raw search
  ActionId rotated_action{};  // greedy action of the twin
};

struct AuditReport {
  std::string variant;
  int budget = 0;
  std::vector<AuditCase> cases;

  int passes() const {
    int n = 0;
    for (const auto& c : cases) n += c.pass ? 1 : 0;
    return n;
  }
  int failures() const { return static_cast<int>(cases.size()) - passes(); }
};

/// First mismatch between `a` and its twin `b` under g, breadth first.
template <class Latent>
std::optional<Divergence> compare_trees(const std::vector<mcts::Node<Latent>>& a, const std::vector<mcts::Node<Latent>>& b,
                                        Rotation g, int simulation) {
  auto fail = [&](int depth, std::string what) { return Divergence{simulation, depth, std::move(what)}; };
  if (a.size() != b.size())
    return fail(0, "tree sizes " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  std::queue<std::pair<int, int>> frontier;
  frontier.push({0, 0});
  while (!frontier.empty()) {
    const auto [ia, ib] = frontier.front();
    frontier.pop();
    const auto& na = a[static_cast<std::size_t>(ia)];
    const auto& nb = b[static_cast<std::size_t>(ib)];
    const int d = na.depth;
    if (na.reward != nb.reward) return fail(d, "reward differs");
    if (na.value != nb.value) return fail(d, "value differs");
    if (!(nb.latent == act_on_latent(g, na.latent))) return fail(d, "latent is not the rotated latent");
    const int n = na.stats.num_actions();
    if (nb.stats.num_actions() != n) return fail(d, "action counts differ");
    for (int act = 0; act < n; ++act) {
      const int ga = act_on_action(g, ActionId{act}).id;
      const std::string edge = " on action " + std::to_string(act) + " / " + std::to_string(ga);
      if (na.stats.prior[act] != nb.stats.prior[ga]) return fail(d, "prior differs" + edge);
      if (na.stats.visits[act] != nb.stats.visits[ga])
        return fail(d, "visit count " + std::to_string(na.stats.visits[act]) + " vs " +
                           std::to_string(nb.stats.visits[ga]) + edge);
      if (na.stats.q[act] != nb.stats.q[ga]) return fail(d, "Q differs" + edge);
      const int ca = na.stats.children[act];
      const int cb = nb.stats.children[ga];
      if ((ca < 0) != (cb < 0)) return fail(d, "expansion differs" + edge);
      if (ca >= 0) frontier.push({ca, cb});
    }
  }
  return std::nullopt;
}

/// Runs the paired searches and reports the first divergence, if any.
template <mcts::SearchModel Model>
AuditCase audit_pair(const Model& model, const nd::Tensor& obs, Rotation g, const mcts::MctsConfig& cfg,
                     std::uint64_t seed, int index = 0) {
  AuditCase out;
  out.index = index;
  out.g = g;
  RngStream raw(seed);
  RngStream moved = rng_transport(g, RngStream(seed));
  mcts::Search<Model> first(model, obs, cfg, raw);
  mcts::Search<Model> second(model, act_on_observation(g, obs), cfg, moved);
  out.divergence = compare_trees(first.nodes(), second.nodes(), g, -1);
  for (int sim = 0; sim < cfg.budget && !out.divergence; ++sim) {
    first.simulate();
    second.simulate();
    out.divergence = compare_trees(first.nodes(), second.nodes(), g, sim);
  }
  const auto ra = first.result();
  const auto rb = second.result();
  out.action = mcts::sample_action(ra.distribution, 0.0, raw);
  out.rotated_action = mcts::sample_action(rb.distribution, 0.0, moved);
  if (!out.divergence) {
    for (int a = 0; a < static_cast<int>(ra.distribution.size()); ++a)
      if (ra.distribution[a] != rb.distribution[act_on_action(g, ActionId{a}).id])
        out.divergence = Divergence{cfg.budget, 0, "visit distributions differ"};
    if (ra.value != rb.value) out.divergence = Divergence{cfg.budget, 0, "root values differ"};
  }
  if (!out.divergence && out.rotated_action != act_on_action(g, out.action))
    out.divergence = Divergence{cfg.budget, 0, "selected actions do not correspond"};
  out.pass = !out.divergence.has_value();
  return out;
}

/// Observation of a freshly reset state advanced by a few random moves.
inline nd::Tensor audit_observation(const env::EnvConfig& env_config, std::uint64_t seed, int warmup_steps) {
  const env::MiniPacman environment(env_config);
  const env::MazeMap maze = env::generate_maze(mix_seed(seed, 0), env_config.side);
  env::EnvState s = environment.reset(maze, mix_seed(seed, 1));
  RngStream rng(mix_seed(seed, 2));
  for (int i = 0; i < warmup_steps; ++i) {
    env::StepResult r = environment.step(s, ActionId{static_cast<int>(rng.uniform_index(4))});
    if (r.done) break;
    s = std::move(r.state);
  }
  return env::observe(s);
}

/// `cases` observations times the four rotations.
inline AuditReport run_audit(const WorldModel& model, const env::EnvConfig& env_config, mcts::MctsConfig cfg, int cases,
                             std::uint64_t seed, int warmup_steps) {
  cfg.root_noise = false;
  AuditReport report;
  report.variant = to_string(model.variant());
  report.budget = cfg.budget;
  for (int c = 0; c < cases; ++c) {
    const nd::Tensor obs = audit_observation(env_config, mix_seed(seed, 3 * static_cast<std::uint64_t>(c)), warmup_steps);
    for (Rotation g : Rotation::all()) {
      const std::uint64_t search_seed = mix_seed(seed, 3 * static_cast<std::uint64_t>(c) + 1);
      report.cases.push_back(audit_pair(model, obs, g, cfg, search_seed, c));
    }
  }
  return report;
}

inline std::string audit_csv(const AuditReport& r) {
  std::string out = "variant,case,rotation,pass,divergence_simulation,divergence_depth,detail\n";
  for (const auto& c : r.cases) {
    out += r.variant + "," + std::to_string(c.index) + "," + std::to_string(c.g.k()) + "," + (c.pass ? "1" : "0") + ",";
    if (c.divergence)
      out += std::to_string(c.divergence->simulation) + "," + std::to_string(c.divergence->depth) + "," +
             c.divergence->detail;
    else
      out += ",,";
    out += "\n";
  }
  return out;
}

}  // namespace eqmz::harness
