#pragma once

// Deterministic MiniPacman-style grid world whose dynamics commute exactly
// with quarter-turn rotations of the whole state.
//
// Per step: the agent moves one cell (walls block silently). Walking into a
// ghost ends the episode with the caught penalty. Otherwise food on the new
// cell is eaten, and eating the last pellet ends the episode with the
// completion bonus. Then every ghost takes one step and landing on the agent
// ends the episode. Agent and ghost cannot swap cells: the agent moves first,
// so a swap is a walk into the ghost. Reaching the step cap ends the episode
// with no extra reward.
//
// Ghosts step to the open neighbour closest to the agent in Manhattan
// distance. Ties are broken in the ghost's own frame: keep heading, then turn
// right, then turn left, then reverse. No global direction is ever preferred.

#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "eqmz/env/maze.hpp"
#include "eqmz/group.hpp"
#include "eqmz/nd/tensor.hpp"
#include "eqmz/rng.hpp"

namespace eqmz::env {

struct EnvConfig {
  int side = 14;
  int ghosts = 1;
  double food_reward = 1.0;
  double completion_bonus = 5.0;
  double caught_penalty = -5.0;
  int episode_cap = 200;
  bool stay_action = false;  // adds the non-movement action id 4
  std::uint64_t seed = 0;

  int num_actions() const { return stay_action ? 5 : 4; }

  void validate() const {
    if (side < 5) throw std::invalid_argument("EnvConfig: side must be >= 5");
    if (episode_cap < 1) throw std::invalid_argument("EnvConfig: episode cap must be >= 1");
    if (ghosts < 0) throw std::invalid_argument("EnvConfig: ghost count must be >= 0");
  }
};

struct Ghost {
  Position pos;
  ActionId heading;

  friend bool operator==(const Ghost&, const Ghost&) = default;
};

struct EnvState {
  MazeMap maze;
  Position agent;
  std::vector<Ghost> ghosts;
  Grid2D<std::uint8_t> food;
  int food_left = 0;
  int steps = 0;
  bool done = false;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
};

enum ObsChannel : int { kWalls = 0, kFood = 1, kAgent = 2, kGhosts = 3 };
inline constexpr int kObsChannels = 4;

inline EnvState rotate_state(Rotation g, const EnvState& s) {
  const int n = s.maze.side();
  EnvState out;
  out.maze = rotate(g, s.maze);
  out.agent = rotate_position(g, s.agent, n);
  out.ghosts.reserve(s.ghosts.size());
  for (const Ghost& gh : s.ghosts) out.ghosts.push_back({rotate_position(g, gh.pos, n), act_on_action(g, gh.heading)});
  out.food = act_on_observation(g, s.food);
  out.food_left = s.food_left;
  out.steps = s.steps;
  out.done = s.done;
  return out;
}

/// One-hot [4, side, side] tensor: walls, food, agent, ghosts.
inline nd::Tensor observe(const EnvState& s) {
  const int n = s.maze.side();
  nd::Tensor obs(nd::Shape{kObsChannels, n, n}, 0.0);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (s.maze.wall(r, c)) obs.at(kWalls, r, c) = 1.0;
      if (s.food(r, c)) obs.at(kFood, r, c) = 1.0;
    }
  }
  obs.at(kAgent, s.agent.row, s.agent.col) = 1.0;
  for (const Ghost& g : s.ghosts) obs.at(kGhosts, g.pos.row, g.pos.col) = 1.0;
  return obs;
}

class MiniPacman {
 public:
  explicit MiniPacman(EnvConfig config = {}) : config_(config) { config_.validate(); }

  const EnvConfig& config() const { return config_; }
  int num_actions() const { return config_.num_actions(); }

  /// Agent on a seed-chosen corridor cell, ghosts on distinct corridor cells,
  /// food on every other corridor cell.
  ///
  /// With a non-identity frame g the draw happens on the maze rotated back by
  /// g and the resulting state is rotated by g, so
  /// reset(rotate(g, m), seed, g) == rotate_state(g, reset(m, seed)).
  EnvState reset(const MazeMap& maze, std::uint64_t seed, Rotation frame = Rotation::identity()) const {
    if (!frame.is_identity()) return rotate_state(frame, reset(rotate(inverse(frame), maze), seed));
    std::vector<Position> cells = maze.corridor_cells();
    if (cells.size() < static_cast<std::size_t>(1 + config_.ghosts))
      throw std::invalid_argument("reset: maze has " + std::to_string(cells.size()) + " corridor cells for " +
                                  std::to_string(1 + config_.ghosts) + " occupants");
    RngStream rng(seed);
    EnvState s;
    s.maze = maze;
    const std::size_t agent_idx = rng.uniform_index(cells.size());
    s.agent = cells[agent_idx];
    cells.erase(cells.begin() + static_cast<std::ptrdiff_t>(agent_idx));

    // Ghosts start away from the agent when the maze allows it.
    const int min_distance = maze.side() / 2;
    for (int i = 0; i < config_.ghosts; ++i) {
      std::vector<std::size_t> far;
      for (std::size_t j = 0; j < cells.size(); ++j)
        if (manhattan(cells[j], s.agent) >= min_distance) far.push_back(j);
      const std::size_t pick = far.empty() ? rng.uniform_index(cells.size()) : far[rng.uniform_index(far.size())];
      s.ghosts.push_back({cells[pick], ActionId{static_cast<int>(rng.uniform_index(4))}});
      cells.erase(cells.begin() + static_cast<std::ptrdiff_t>(pick));
    }

    s.food = Grid2D<std::uint8_t>(maze.side(), maze.side(), 0);
    for (Position p : cells) s.food(p.row, p.col) = 1;
    s.food_left = static_cast<int>(cells.size());
    return s;
  }

  StepResult step(const EnvState& state, ActionId a) const {
    if (a.id < 0 || a.id >= num_actions())
      throw std::invalid_argument("step: action id " + std::to_string(a.id) + " outside action set");
    if (state.done) return {state, 0.0, true};
    EnvState s = state;
    double reward = 0.0;
    bool done = false;

    const Position before = s.agent;
    const auto [dr, dc] = move_delta(a);
    const Position target{before.row + dr, before.col + dc};
    if (s.maze.open(target)) s.agent = target;

    if (ghost_at(s, s.agent)) {
      reward += config_.caught_penalty;
      done = true;
    } else {
      if (s.food(s.agent.row, s.agent.col)) {
        s.food(s.agent.row, s.agent.col) = 0;
        --s.food_left;
        reward += config_.food_reward;
        if (s.food_left == 0) {
          reward += config_.completion_bonus;
          done = true;
        }
      }
    }

    if (!done) {
      bool caught = false;
      for (Ghost& g : s.ghosts) {
        move_ghost(s.maze, g, s.agent);
        if (g.pos == s.agent) caught = true;
      }
      if (caught) {
        reward += config_.caught_penalty;
        done = true;
      }
    }

    ++s.steps;
    if (s.steps >= config_.episode_cap) done = true;
    s.done = done;
    return {std::move(s), reward, done};
  }

  /// Upper bound on an episode's return from a freshly reset state.
  double max_return(const EnvState& s) const {
    return s.food_left * config_.food_reward + config_.completion_bonus;
  }

 private:
  static int manhattan(Position a, Position b) { return std::abs(a.row - b.row) + std::abs(a.col - b.col); }

  static bool ghost_at(const EnvState& s, Position p) {
    for (const Ghost& g : s.ghosts)
      if (g.pos == p) return true;
    return false;
  }

  static void move_ghost(const MazeMap& maze, Ghost& g, Position agent) {
    const int h = g.heading.id;
    const int preference[4] = {h, (h + 1) % 4, (h + 3) % 4, (h + 2) % 4};
    int best_dir = -1;
    int best_dist = 0;
    for (int dir : preference) {
      const auto [dr, dc] = move_delta(ActionId{dir});
      const Position q{g.pos.row + dr, g.pos.col + dc};
      if (!maze.open(q)) continue;
      const int d = manhattan(q, agent);
      if (best_dir < 0 || d < best_dist) {
        best_dir = dir;
        best_dist = d;
      }
    }
    if (best_dir < 0) return;
    const auto [dr, dc] = move_delta(ActionId{best_dir});
    g.pos = {g.pos.row + dr, g.pos.col + dc};
    g.heading = ActionId{best_dir};
  }

  EnvConfig config_;
};

}  // namespace eqmz::env
