// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// The same lines go to <work-dir>/summary.txt. Tolerances, sizes and seeds are
// fixed here; --only selects criteria by number.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eqmz/env/minipacman.hpp"
#include "eqmz/env/splits.hpp"
#include "eqmz/group.hpp"
#include "eqmz/harness/commands.hpp"
#include "eqmz/observation.hpp"
#include "eqmz/rng.hpp"
#include "eqmz/worldmodel.hpp"
#include "fd_cases.hpp"
#include "loss_samples.hpp"
#include "mcts_reference.hpp"

namespace fs = std::filesystem;
using namespace eqmz;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects the first failure; later checks are skipped once one fails.
struct Checker {
  Outcome out;
  bool ok() const { return out.pass; }
  bool require(bool cond, const std::string& what) {
    if (out.pass && !cond) {
      out.pass = false;
      out.detail = what;
    }
    return cond;
  }
};

// 1. Group axioms and representation homomorphisms.

Outcome group_suite() {
  Checker c;
  for (Rotation a : Rotation::all()) {
    c.require(compose(a, Rotation::identity()) == a && compose(Rotation::identity(), a) == a, "identity law");
    c.require(compose(a, inverse(a)) == Rotation::identity(), "inverse law");
    for (Rotation b : Rotation::all()) {
      c.require(compose(a, b).k() == (a.k() + b.k()) % 4, "composition table entry");
      c.require(compose(a, b) == compose(b, a), "commutativity");
      for (Rotation d : Rotation::all()) c.require(compose(compose(a, b), d) == compose(a, compose(b, d)), "associativity");
    }
  }
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 7);
  std::uniform_int_distribution<int> val(-100, 100);
  std::uniform_int_distribution<int> action(0, 9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 1000 && c.ok(); ++trial) {
    Grid2D<int> x(dim(rng), dim(rng));
    for (int& v : x.cells()) v = val(rng);
    const ActionId a{action(rng)};
    const std::array<double, 4> z{u(rng), u(rng), u(rng), u(rng)};
    const std::string at = " (trial " + std::to_string(trial) + ")";
    c.require(act_on_observation(Rotation::identity(), x) == x, "grid identity" + at);
    c.require(act_on_action(Rotation::identity(), a) == a, "action identity" + at);
    c.require(act_on_latent(Rotation::identity(), z) == z, "latent identity" + at);
    for (Rotation g : Rotation::all()) {
      for (Rotation h : Rotation::all()) {
        const Rotation gh = compose(g, h);
        c.require(act_on_observation(g, act_on_observation(h, x)) == act_on_observation(gh, x), "grid homomorphism" + at);
        c.require(act_on_action(g, act_on_action(h, a)) == act_on_action(gh, a), "action homomorphism" + at);
        c.require(act_on_latent(g, act_on_latent(h, z)) == act_on_latent(gh, z), "latent homomorphism" + at);
      }
      if (a.id < 4) {
        // The displacement of a move turns with the grid.
        const auto [dr, dc] = move_delta(a);
        const auto [r0, c0] = rotate_index(g, 3, 3, 7, 7);
        const auto [r1, c1] = rotate_index(g, 3 + dr, 3 + dc, 7, 7);
        const auto [er, ec] = move_delta(act_on_action(g, a));
        c.require(r1 - r0 == er && c1 - c0 == ec, "move delta rotates with the grid" + at);
      }
    }
  }
  if (c.ok()) c.out.detail = "16 products, 1000 grids/actions/latents";
  return c.out;
}

// 2. Bit-exact equivariance of every model component.

nd::Tensor random_obs(int channels, int side, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  nd::Tensor t(nd::Shape{channels, side, side});
  for (double& v : t.values()) v = u(rng);
  return t;
}

Outcome component_equivariance() {
  Checker c;
  int draws = 0;
  for (TransitionKind kind : {TransitionKind::Constrained, TransitionKind::Interacting}) {
    std::mt19937_64 rng(kind == TransitionKind::Constrained ? 2 : 3);
    std::uniform_int_distribution<int> side(3, 7);
    std::uniform_int_distribution<int> action(0, 3);
    ModelConfig mc;
    mc.channels = 3;
    mc.encoder_layers = 2;
    mc.res_blocks = 1;
    mc.hidden = 8;
    mc.transition = kind;
    for (int draw = 0; draw < 1000 && c.ok(); ++draw, ++draws) {
      const WorldModel m(mc, Variant::EqMuZero, rng());
      const nd::Tensor obs = random_obs(4, side(rng), rng);
      const ActionId a{action(rng)};
      nd::Graph graph(false);
      const LatentState z = WorldModel::values(m.represent(graph, obs));
      const LatentState ea = WorldModel::values(m.action_embedding(graph, a));
      const LatentState tz = WorldModel::values(m.transition(graph, WorldModel::constants(graph, z)));
      const auto p = m.policy(graph, WorldModel::constants(graph, z)).value().values();
      const double r = m.reward(graph, WorldModel::constants(graph, z)).value()[0];
      const double v = m.value(graph, WorldModel::constants(graph, z)).value()[0];
      const std::string at = " (" + to_string(kind) + " draw " + std::to_string(draw) + ")";
      for (Rotation g : Rotation::all()) {
        const LatentState gz = act_on_latent(g, z);
        nd::Graph gg(false);
        c.require(WorldModel::values(m.represent(gg, act_on_observation(g, obs))) == gz, "encoder" + at);
        c.require(WorldModel::values(m.action_embedding(gg, act_on_action(g, a))) == act_on_latent(g, ea),
                  "action embedding" + at);
        c.require(WorldModel::values(m.transition(gg, WorldModel::constants(gg, gz))) == act_on_latent(g, tz),
                  "transition" + at);
        const auto gp = m.policy(gg, WorldModel::constants(gg, gz)).value().values();
        for (int b = 0; b < 4; ++b)
          c.require(gp[static_cast<std::size_t>(act_on_action(g, ActionId{b}).id)] == p[static_cast<std::size_t>(b)],
                    "policy" + at);
        c.require(m.reward(gg, WorldModel::constants(gg, gz)).value()[0] == r, "reward" + at);
        c.require(m.value(gg, WorldModel::constants(gg, gz)).value()[0] == v, "value" + at);
      }
    }
  }
  if (c.ok()) c.out.detail = std::to_string(draws) + " draws x 4 rotations, exact";
  return c.out;
}

// 3. Paired-search audit through cmd_audit.

struct AuditRun {
  int exit_code = 0;
  int passes = -1;
  int cases = -1;
};

AuditRun audit_variant(const fs::path& work, Variant v) {
  harness::ExperimentConfig cfg;
  cfg.variant = v;
  cfg.audit.cases = 100;
  cfg.audit.budget = 50;
  cfg.audit.seed = 0;
  cfg.output_dir = (work / "audit").string();
  std::ostringstream out;
  std::ostringstream err;
  AuditRun run;
  run.exit_code = harness::cmd_audit(cfg, std::nullopt, out, err);
  // Last line: "<variant>: <passes>/<cases> cases equivariant (budget 50)"
  std::string text = out.str();
  const std::size_t colon = text.rfind(": ");
  if (colon != std::string::npos) std::sscanf(text.c_str() + colon + 2, "%d/%d", &run.passes, &run.cases);
  return run;
}

Outcome paired_audit(const fs::path& work) {
  Checker c;
  const AuditRun eq = audit_variant(work, Variant::EqMuZero);
  const AuditRun std_run = audit_variant(work, Variant::StdMuZero);
  c.require(eq.cases == 400, "EqMuZero audit ran " + std::to_string(eq.cases) + " cases, expected 400");
  c.require(eq.exit_code == harness::kOk && eq.passes == 400,
            "EqMuZero " + std::to_string(eq.passes) + "/400, exit " + std::to_string(eq.exit_code));
  c.require(std_run.cases == 400 && std_run.exit_code == harness::kOk, "StdMuZero audit did not complete");
  c.require(std_run.passes < 400, "StdMuZero anti-test found no failure");
  c.out.detail = "EqMuZero " + std::to_string(eq.passes) + "/" + std::to_string(eq.cases) + ", StdMuZero " +
                 std::to_string(std_run.passes) + "/" + std::to_string(std_run.cases) + " (budget 50)";
  return c.out;
}

// 4. Search statistics against the straight-line reference.

Outcome reference_oracle() {
  Checker c;
  std::mt19937_64 gen(4);
  std::uniform_int_distribution<int> budget(1, 8);
  std::uniform_real_distribution<double> gamma(0.5, 1.0);
  int deep = 0;
  for (int k = 0; k < 200 && c.ok(); ++k) {
    mcts::reference::PathModel model;
    model.actions = 4;
    mcts::MctsConfig cfg;
    cfg.budget = budget(gen);
    cfg.discount = gamma(gen);
    const std::uint64_t obs = gen();
    const std::uint64_t seed = gen();
    int depth = 0;
    const auto bad = mcts::reference::check_case(model, cfg, obs, seed, &depth);
    c.require(!bad, "case " + std::to_string(k) + ": " + bad.value_or(""));
    deep += depth >= 2;
  }
  if (c.ok()) c.out.detail = "200 cases, " + std::to_string(deep) + " reach depth 2";
  return c.out;
}

// 5. Finite-difference gradients of every op and of the full loss.

Outcome numerics() {
  Checker c;
  constexpr double kTol = 1e-4;
  double worst_op = 0.0;
  for (const auto& op : nd::fdcheck::op_cases()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed * 104729 + 5);
      auto [inputs, f] = op.make(rng, seed + 5000);
      worst = std::max(worst, nd::fdcheck::max_relative_error(inputs, f));
    }
    c.require(worst < kTol, std::string("op ") + op.name + " relative error " + std::to_string(worst));
    worst_op = std::max(worst_op, worst);
  }
  double worst_loss = 0.0;
  int checked = 0;
  int kinks = 0;
  for (std::uint64_t seed = 0; seed < 100 && c.ok(); ++seed) {
    std::mt19937_64 rng(seed + 77);
    ModelConfig mc;
    mc.channels = 2;
    mc.encoder_layers = 1;
    mc.res_blocks = 1;
    mc.hidden = 4;
    mc.transition = seed % 2 ? TransitionKind::Interacting : TransitionKind::Constrained;
    const Variant v = all_variants[seed % all_variants.size()];
    WorldModel model(mc, v, mix_seed(seed, 3));
    const std::vector<training::Sample> batch{training::samples::random_sample(rng, 2),
                                              training::samples::random_sample(rng, 2)};
    const training::LossWeights w{1.0, 0.5, 2.0};
    const auto r = training::samples::check_loss_gradient(model, batch, w, 7, seed);
    c.require(r.worst < kTol, "loss seed " + std::to_string(seed) + " (" + to_string(v) + ") " + r.worst_at +
                                  " relative error " + std::to_string(r.worst));
    worst_loss = std::max(worst_loss, r.worst);
    checked += r.checked;
    kinks += r.kinks;
  }
  c.require(kinks * 100 < checked, "too many kink skips: " + std::to_string(kinks));
  if (c.ok()) {
    std::ostringstream d;
    d << nd::fdcheck::op_cases().size() << " ops worst " << worst_op << "; loss " << checked << " entries worst "
      << worst_loss << ", " << kinks << " kink skips";
    c.out.detail = d.str();
  }
  return c.out;
}

// 6. Environment dynamics commute with rotation.

/// Ghosts whose best next square is shared by two or more directions.
int ghost_ties(const env::EnvState& s, env::Position agent) {
  int ties = 0;
  for (const env::Ghost& g : s.ghosts) {
    int best = 1 << 30;
    int count = 0;
    for (int dir = 0; dir < 4; ++dir) {
      const auto [dr, dc] = move_delta(ActionId{dir});
      const env::Position q{g.pos.row + dr, g.pos.col + dc};
      if (!s.maze.open(q)) continue;
      const int d = std::abs(q.row - agent.row) + std::abs(q.col - agent.col);
      if (d < best) {
        best = d;
        count = 1;
      } else if (d == best) {
        ++count;
      }
    }
    ties += count > 1;
  }
  return ties;
}

Outcome environment_symmetry() {
  Checker c;
  env::EnvConfig cfg;
  cfg.side = 9;
  cfg.ghosts = 3;
  cfg.stay_action = true;
  const env::MiniPacman environment(cfg);
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> action(0, 4);
  std::uniform_int_distribution<int> rot(0, 3);
  int triples = 0;
  int ties = 0;
  for (std::uint64_t ep = 0; triples < 10000 && c.ok(); ++ep) {
    env::EnvState s = environment.reset(env::generate_maze(ep, cfg.side), ep);
    while (!s.done && triples < 10000 && c.ok()) {
      const ActionId a{action(rng)};
      const Rotation g{rot(rng)};
      const env::StepResult r = environment.step(s, a);
      const env::StepResult gr = environment.step(env::rotate_state(g, s), act_on_action(g, a));
      const std::string at = " (episode " + std::to_string(ep) + " step " + std::to_string(s.steps) + ")";
      c.require(gr.state == env::rotate_state(g, r.state), "next state" + at);
      c.require(gr.reward == r.reward && gr.done == r.done, "reward or termination" + at);
      ties += ghost_ties(s, r.state.agent);
      ++triples;
      s = r.state;
    }
  }
  c.require(ties > 0, "no ghost tie-break was exercised");
  if (c.ok()) c.out.detail = std::to_string(triples) + " triples, " + std::to_string(ties) + " ghost ties";
  return c.out;
}

// 7. Desk-scale protocol: train both variants, paired evaluation on X and RX.

harness::ExperimentConfig desk_config(const fs::path& dir, std::uint64_t seed) {
  harness::ExperimentConfig c;
  c.env.episode_cap = 50;
  c.model.channels = 8;
  c.model.encoder_layers = 2;
  c.model.res_blocks = 1;
  c.model.hidden = 32;
  c.search.budget = 16;
  c.train.iterations = 60;
  c.train.updates_per_iteration = 10;
  c.train.batch_size = 16;
  c.train.unroll = 3;
  c.train.td_steps = 5;
  c.train.seed = seed;
  c.splits.seed = seed;
  c.eval.episodes = 100;
  c.eval.seed = seed;
  c.output_dir = dir.string();
  return c;
}

struct SeedSetResult {
  bool paired = true;
  std::string paired_detail;
  double eq_rx = 0.0;
  double std_rx = 0.0;
};

double mean(const std::vector<double>& xs) {
  std::vector<double> sorted = xs;
  std::sort(sorted.begin(), sorted.end());
  double s = 0.0;
  for (double x : sorted) s += x;
  return s / static_cast<double>(xs.size());
}

SeedSetResult run_seed_set(const fs::path& work, std::uint64_t seed) {
  const fs::path dir = work / ("protocol_seed" + std::to_string(seed));
  fs::remove_all(dir);
  harness::ExperimentConfig cfg = desk_config(dir, seed);
  std::ostringstream sink;
  if (harness::cmd_gen_maps(cfg, sink, std::cerr) != harness::kOk) throw std::runtime_error("gen-maps failed");
  const env::Splits splits = harness::load_splits(cfg);
  SeedSetResult out;
  for (Variant v : {Variant::EqMuZero, Variant::StdMuZero}) {
    cfg.variant = v;
    if (harness::cmd_train(cfg, sink, std::cerr) != harness::kOk)
      throw std::runtime_error("training " + to_string(v) + " failed");
    const WorldModel model = WorldModel::from_checkpoint(nd::load_checkpoint(harness::default_checkpoint(cfg).string()));
    const harness::EvalReport r = harness::evaluate(model, to_string(v), cfg.env, cfg.search, splits, cfg.eval.episodes,
                                                    cfg.eval.seed, {harness::Setting::Same, harness::Setting::Rotated});
    const std::vector<double> x = r.returns(harness::Setting::Same);
    const std::vector<double> rx = r.returns(harness::Setting::Rotated);
    if (v == Variant::EqMuZero) {
      for (int e = 0; e < cfg.eval.episodes && out.paired; ++e) {
        const auto& a = r.episodes[static_cast<std::size_t>(e)];
        const auto& b = r.episodes[static_cast<std::size_t>(cfg.eval.episodes + e)];
        if (a.total_return != b.total_return || a.steps != b.steps) {
          out.paired = false;
          out.paired_detail = "seed set " + std::to_string(seed) + " episode " + std::to_string(e) + ": X return " +
                              std::to_string(a.total_return) + " vs RX " + std::to_string(b.total_return);
        }
      }
      out.eq_rx = mean(rx);
    } else {
      out.std_rx = mean(rx);
    }
    std::cout << "  seed set " << seed << " " << to_string(v) << ": mean X " << mean(x) << ", mean RX " << mean(rx)
              << '\n'
              << std::flush;
  }
  return out;
}

Outcome protocol(const fs::path& work) {
  Checker c;
  std::vector<SeedSetResult> sets;
  int ordered = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    sets.push_back(run_seed_set(work, seed));
    const SeedSetResult& s = sets.back();
    c.require(s.paired, "EqMuZero X and RX differ: " + s.paired_detail);
    ordered += s.eq_rx >= s.std_rx;
    if (seed == 0 && ordered == 1) break;
  }
  c.require(2 * ordered > static_cast<int>(sets.size()) || (sets.size() == 1 && ordered == 1),
            "EqMuZero RX mean below StdMuZero on " + std::to_string(sets.size() - ordered) + " of " +
                std::to_string(sets.size()) + " seed sets");
  std::ostringstream d;
  if (!c.ok()) d << c.out.detail << "; ";
  d << "X == RX for EqMuZero on every episode of " << sets.size() << " seed set(s); RX means (Eq vs Std):";
  for (const auto& s : sets) d << " " << s.eq_rx << " vs " << s.std_rx;
  c.out.detail = d.str();
  return c.out;
}

// 8. Rerunning each CLI command reproduces its outputs byte for byte.

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(EQMZ_CLI) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    files[fs::relative(entry.path(), root).string()] = bytes.str();
  }
  return files;
}

Outcome determinism(const fs::path& work) {
  Checker c;
  const fs::path dir = work / "determinism";
  const fs::path run = dir / "run";
  const std::string common = "--run.output_dir=" + run.string() +
                             " --env.side=7 --env.episode_cap=12 --model.channels=2 --model.encoder_layers=1"
                             " --model.res_blocks=1 --model.hidden=8 --mcts.budget=6 --train.iterations=3"
                             " --train.updates_per_iteration=2 --train.batch_size=4 --train.unroll=2"
                             " --train.checkpoint_interval=1 --splits.train_maps=2 --splits.eval_maps=2"
                             " --eval.episodes=4 --audit.cases=3 --audit.budget=8";
  const std::vector<std::pair<std::string, std::string>> steps{
      {"gen-maps", "gen-maps " + common},
      {"train", "train " + common},
      {"eval", "eval " + common},
      {"audit", "audit " + common},
      {"plot", "plot " + common + " " + (run / "train/EqMuZero/metrics.csv").string() + " " +
                   (run / "eval/EqMuZero/report.csv").string() + " --out " + (run / "plots").string()}};
  std::vector<std::map<std::string, std::string>> outputs;
  for (int pass = 0; pass < 2; ++pass) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path log = dir / "log.txt";
    for (const auto& [name, args] : steps)
      c.require(run_cli(args, log) == 0, name + " exited non-zero on pass " + std::to_string(pass));
    outputs.push_back(snapshot(dir));
  }
  if (c.ok()) {
    const auto& a = outputs[0];
    const auto& b = outputs[1];
    std::set<std::string> names;
    for (const auto& [k, _] : a) names.insert(k);
    for (const auto& [k, _] : b) names.insert(k);
    for (const std::string& k : names) {
      const auto ia = a.find(k);
      const auto ib = b.find(k);
      c.require(ia != a.end() && ib != b.end() && ia->second == ib->second, "output differs between runs: " + k);
    }
    for (const char* must : {"run/maps/manifest.txt", "run/train/EqMuZero/model.ckpt", "run/train/EqMuZero/metrics.csv",
                             "run/eval/EqMuZero/episodes.csv", "run/audit/EqMuZero/audit.csv",
                             "run/plots/report.svg", "log.txt"})
      c.require(a.count(must) == 1, std::string("missing output ") + must);
    if (c.ok()) c.out.detail = std::to_string(a.size()) + " files identical across reruns, stdout included";
  }
  return c.out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance criteria");
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work, "scratch directory");
  app.add_option("--only", only, "criterion numbers to run (default all)")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);
  const fs::path root = fs::absolute(work);
  fs::create_directories(root);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"group axioms and representations", group_suite},
      {"component equivariance", component_equivariance},
      {"paired-search audit", [&] { return paired_audit(root); }},
      {"search reference oracle", reference_oracle},
      {"finite-difference gradients", numerics},
      {"environment symmetry", environment_symmetry},
      {"desk-scale protocol", [&] { return protocol(root); }},
      {"determinism", [&] { return determinism(root); }}};

  std::ofstream summary(root / "summary.txt");
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    char timing[32];
    std::snprintf(timing, sizeof timing, " [%.1fs]", secs);
    const std::string line = std::string(o.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + " (" +
                             criteria[i].first + "): " + o.detail + timing;
    std::cout << line << std::endl;
    summary << line << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
