#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "eqmz/env/minipacman.hpp"
#include "eqmz/env/splits.hpp"
#include "eqmz/observation.hpp"

namespace eqmz::env {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("eqmz_env_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 7x7 open room.
MazeMap room(int side = 7) {
  Grid2D<std::uint8_t> w(side, side, 0);
  for (int i = 0; i < side; ++i) w(0, i) = w(side - 1, i) = w(i, 0) = w(i, side - 1) = 1;
  return MazeMap(std::move(w));
}

EnvState manual_state(const MazeMap& m, Position agent, std::vector<Ghost> ghosts) {
  EnvState s;
  s.maze = m;
  s.agent = agent;
  s.ghosts = std::move(ghosts);
  s.food = Grid2D<std::uint8_t>(m.side(), m.side(), 0);
  for (Position p : m.corridor_cells()) {
    bool occupied = p == agent;
    for (const Ghost& g : s.ghosts) occupied = occupied || g.pos == p;
    if (!occupied) {
      s.food(p.row, p.col) = 1;
      ++s.food_left;
    }
  }
  return s;
}

TEST(Maze, GeneratedMazesAreValidAndSeeded) {
  for (int side : {5, 6, 7, 10, 14, 15}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const MazeMap m = generate_maze(seed, side);  // validated on construction
      EXPECT_EQ(m.side(), side);
      EXPECT_EQ(generate_maze(seed, side), m);
    }
  }
  EXPECT_NE(generate_maze(1, 14), generate_maze(2, 14));
  EXPECT_THROW(generate_maze(0, 4), MazeError);
}

TEST(Maze, LoopFractionOpensExtraWalls) {
  const auto tree = generate_maze(3, 15, 0.0).corridor_cells().size();
  const auto loopy = generate_maze(3, 15, 1.0).corridor_cells().size();
  // A spanning tree over 7x7 lattice cells has 48 passages.
  EXPECT_EQ(tree, 49u + 48u);
  EXPECT_GT(loopy, tree);
}

TEST(Maze, ValidationNamesTheProblem) {
  EXPECT_THROW(parse_ascii("###\n#.#\n"), MazeError);
  try {
    parse_ascii("#####\n#.#.#\n#####\n#####\n#####\n");
    FAIL();
  } catch (const MazeError& e) {
    EXPECT_NE(std::string(e.what()).find("disconnected"), std::string::npos);
  }
  try {
    parse_ascii("#####\n#...#\n#.x.#\n#...#\n#####\n");
    FAIL();
  } catch (const MazeError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_ascii("#####\n#....\n#...#\n#...#\n#####\n"), MazeError);
}

TEST(Maze, AsciiAndFileRoundTrip) {
  const fs::path dir = scratch("maze");
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MazeMap m = generate_maze(seed, 11);
    EXPECT_EQ(parse_ascii(to_ascii(m)), m);
    const std::string path = (dir / "m.txt").string();
    save_map(path, m);
    EXPECT_EQ(load_map(path), m);
  }
  EXPECT_THROW(load_map((dir / "missing.txt").string()), MazeError);
}

TEST(Maze, CanonicalFormIsRotationInvariant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MazeMap m = generate_maze(seed, 9);
    for (Rotation g : Rotation::all()) EXPECT_EQ(canonical_form(rotate(g, m)), canonical_form(m));
  }
}

TEST(Reset, PlacesOccupantsAndFood) {
  EnvConfig cfg;
  cfg.side = 14;
  cfg.ghosts = 2;
  const MiniPacman env(cfg);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const MazeMap m = generate_maze(seed, 14);
    const EnvState s = env.reset(m, seed);
    EXPECT_TRUE(m.open(s.agent));
    ASSERT_EQ(s.ghosts.size(), 2u);
    EXPECT_NE(s.ghosts[0].pos, s.ghosts[1].pos);
    for (const Ghost& g : s.ghosts) {
      EXPECT_TRUE(m.open(g.pos));
      EXPECT_NE(g.pos, s.agent);
      EXPECT_GE(std::abs(g.pos.row - s.agent.row) + std::abs(g.pos.col - s.agent.col), 7);
    }
    EXPECT_EQ(s.food_left, static_cast<int>(m.corridor_cells().size()) - 3);
    EXPECT_EQ(s.food(s.agent.row, s.agent.col), 0);
    EXPECT_EQ(env.reset(m, seed), s);
  }
}

TEST(Reset, FrameArgumentIsEquivariant) {
  const MiniPacman env(EnvConfig{.side = 10, .ghosts = 2});
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const MazeMap m = generate_maze(seed, 10);
    const EnvState s = env.reset(m, seed);
    for (Rotation g : Rotation::all()) EXPECT_EQ(env.reset(rotate(g, m), seed, g), rotate_state(g, s));
  }
}

TEST(Observation, OneHotChannelsRotateWithState) {
  const MiniPacman env(EnvConfig{.side = 9, .ghosts = 1});
  const EnvState s = env.reset(generate_maze(4, 9), 4);
  const nd::Tensor obs = observe(s);
  EXPECT_EQ(obs.shape(), (nd::Shape{4, 9, 9}));
  EXPECT_EQ(obs.at(kAgent, s.agent.row, s.agent.col), 1.0);
  EXPECT_EQ(obs.at(kGhosts, s.ghosts[0].pos.row, s.ghosts[0].pos.col), 1.0);
  for (Rotation g : Rotation::all()) EXPECT_EQ(observe(rotate_state(g, s)), act_on_observation(g, obs));
}

TEST(Step, WallsBlockAndFoodPays) {
  const MiniPacman env(EnvConfig{.side = 7, .ghosts = 0});
  EnvState s = manual_state(room(), {1, 1}, {});
  const int food = s.food_left;
  StepResult r = env.step(s, actions::up);
  EXPECT_EQ(r.state.agent, (Position{1, 1}));
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_EQ(r.state.steps, 1);
  r = env.step(r.state, actions::right);
  EXPECT_EQ(r.state.agent, (Position{1, 2}));
  EXPECT_EQ(r.reward, 1.0);
  EXPECT_EQ(r.state.food_left, food - 1);
  r = env.step(r.state, actions::left);
  EXPECT_EQ(r.reward, 0.0);
}

TEST(Step, LastPelletAddsCompletionBonus) {
  const MiniPacman env(EnvConfig{.side = 7, .ghosts = 0});
  EnvState s = manual_state(room(), {1, 1}, {});
  s.food = Grid2D<std::uint8_t>(7, 7, 0);
  s.food(2, 1) = 1;
  s.food_left = 1;
  const StepResult r = env.step(s, actions::down);
  EXPECT_EQ(r.reward, 6.0);
  EXPECT_TRUE(r.done);
  EXPECT_EQ(env.step(r.state, actions::up).reward, 0.0);
}

TEST(Step, WalkingIntoGhostIsCaught) {
  const MiniPacman env(EnvConfig{.side = 7, .ghosts = 1});
  const EnvState s = manual_state(room(), {3, 3}, {{{3, 4}, actions::left}});
  const StepResult r = env.step(s, actions::right);
  EXPECT_EQ(r.reward, -5.0);
  EXPECT_TRUE(r.done);
}

TEST(Step, GhostLandingOnAgentIsCaught) {
  const MazeMap m = parse_ascii("#######\n#.....#\n#######\n#######\n#######\n#######\n#######\n");
  const MiniPacman env(EnvConfig{.side = 7, .ghosts = 1});
  const EnvState s = manual_state(m, {1, 1}, {{{1, 2}, actions::left}});
  const StepResult r = env.step(s, actions::left);  // blocked by the wall
  EXPECT_TRUE(r.done);
  EXPECT_EQ(r.reward, -5.0);
}

TEST(Step, GhostFollowsRetreatingAgent) {
  const MazeMap m = parse_ascii("#######\n#.....#\n#######\n#######\n#######\n#######\n#######\n");
  const MiniPacman env(EnvConfig{.side = 7, .ghosts = 1});
  const EnvState s = manual_state(m, {1, 2}, {{{1, 4}, actions::left}});
  const StepResult r = env.step(s, actions::left);
  EXPECT_FALSE(r.done);
  EXPECT_EQ(r.reward, 1.0);
  EXPECT_EQ(r.state.ghosts[0].pos, (Position{1, 3}));
}

TEST(Step, GhostTieKeepsHeadingThenTurnsRight) {
  const MiniPacman env(EnvConfig{.side = 7, .ghosts = 1});
  // Agent diagonal to the ghost: moving down or right are equally close.
  EnvState s = manual_state(room(), {5, 5}, {{{3, 3}, actions::right}});
  EXPECT_EQ(env.step(s, ActionId{0}).state.ghosts[0].pos, (Position{3, 4}));
  s.ghosts[0].heading = actions::down;
  EXPECT_EQ(env.step(s, ActionId{0}).state.ghosts[0].pos, (Position{4, 3}));
  // Heading left: right turn is up (worse), left turn is down.
  s.ghosts[0].heading = actions::left;
  const auto moved = env.step(s, ActionId{0}).state.ghosts[0];
  EXPECT_EQ(moved.pos, (Position{4, 3}));
  EXPECT_EQ(moved.heading, actions::down);
}

TEST(Step, EpisodeCapEndsWithoutReward) {
  const MiniPacman env(EnvConfig{.side = 7, .ghosts = 0, .episode_cap = 2});
  const EnvState s = manual_state(room(), {1, 1}, {});
  const StepResult a = env.step(s, actions::up);
  EXPECT_FALSE(a.done);
  const StepResult b = env.step(a.state, actions::up);
  EXPECT_TRUE(b.done);
  EXPECT_EQ(b.reward, 0.0);
}

TEST(Step, StayActionIsOptIn) {
  const MiniPacman four(EnvConfig{.side = 7, .ghosts = 0});
  const MiniPacman five(EnvConfig{.side = 7, .ghosts = 0, .stay_action = true});
  const EnvState s = manual_state(room(), {2, 2}, {});
  EXPECT_THROW(four.step(s, actions::stay), std::invalid_argument);
  EXPECT_EQ(five.step(s, actions::stay).state.agent, (Position{2, 2}));
  EXPECT_THROW(five.step(s, ActionId{5}), std::invalid_argument);
}

// 10,000 (state, action, rotation) triples along random rollouts, several
// ghosts so that tie-breaking is exercised.
TEST(Step, TransitionCommutesWithRotation) {
  EnvConfig cfg;
  cfg.side = 9;
  cfg.ghosts = 3;
  cfg.stay_action = true;
  const MiniPacman env(cfg);
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> action(0, 4);
  int checked = 0;
  for (std::uint64_t ep = 0; checked < 10000; ++ep) {
    EnvState s = env.reset(generate_maze(ep, cfg.side), ep);
    while (!s.done && checked < 10000) {
      const ActionId a{action(rng)};
      const StepResult r = env.step(s, a);
      for (Rotation g : Rotation::all()) {
        const StepResult gr = env.step(rotate_state(g, s), act_on_action(g, a));
        ASSERT_EQ(gr.state, rotate_state(g, r.state)) << "episode " << ep << " step " << s.steps;
        ASSERT_EQ(gr.reward, r.reward);
        ASSERT_EQ(gr.done, r.done);
      }
      ++checked;
      s = r.state;
    }
  }
}

TEST(Splits, DisjointAndRotatedCopies) {
  const Splits sp = make_splits(5, 5, 5, 14);
  ASSERT_EQ(sp.train.size(), 5u);
  ASSERT_EQ(sp.rotated.size(), 15u);
  ASSERT_EQ(sp.different.size(), 5u);
  std::set<std::string> x_forms;
  for (const auto& e : sp.train) x_forms.insert(canonical_form(e.maze));
  EXPECT_EQ(x_forms.size(), 5u);
  for (const auto& y : sp.different) {
    EXPECT_TRUE(disjoint_from(y.maze, sp.train));
    EXPECT_EQ(x_forms.count(canonical_form(y.maze)), 0u);
  }
  for (std::size_t i = 0; i < sp.rotated.size(); ++i) {
    const auto& rx = sp.rotated[i];
    EXPECT_EQ(rx.source, static_cast<int>(i / 3));
    EXPECT_EQ(rx.rotation.k(), static_cast<int>(i % 3) + 1);
    EXPECT_EQ(rx.maze, rotate(rx.rotation, sp.train[i / 3].maze));
  }
}

TEST(Splits, ManifestRoundTripAndDeterminism) {
  const Splits sp = make_splits(9, 3, 2, 10);
  EXPECT_EQ(manifest_text(make_splits(9, 3, 2, 10)), manifest_text(sp));
  const fs::path dir = scratch("splits");
  write_splits(dir, sp);
  const Splits back = read_splits(dir / "manifest.txt");
  EXPECT_EQ(back.side, 10);
  EXPECT_EQ(back.seed, 9u);
  ASSERT_EQ(back.train.size(), 3u);
  ASSERT_EQ(back.rotated.size(), 9u);
  ASSERT_EQ(back.different.size(), 2u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back.train[i].maze, sp.train[i].maze);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(back.rotated[i].maze, sp.rotated[i].maze);
    EXPECT_EQ(back.rotated[i].source, sp.rotated[i].source);
    EXPECT_EQ(back.rotated[i].rotation, sp.rotated[i].rotation);
  }
  EXPECT_EQ(manifest_text(back), manifest_text(sp));
}

TEST(Splits, ManifestErrorsCarryLineNumbers) {
  const fs::path dir = scratch("bad_manifest");
  {
    std::ofstream out(dir / "manifest.txt");
    out << "side 7\nseed 1\nRX rx.txt x.txt 2\n";
  }
  try {
    read_splits(dir / "manifest.txt");
    FAIL();
  } catch (const MazeError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

TEST(Splits, ExhaustionIsReported) {
  // Side 5 admits only a handful of distinct maps.
  EXPECT_THROW(make_splits(0, 50, 0, 5, 20), MazeError);
}

}  // namespace
}  // namespace eqmz::env
