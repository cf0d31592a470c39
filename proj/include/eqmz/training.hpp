#pragma once

// Self-play, target construction and optimization of the world model.
//
// Unroll of length K from position t, with s^0 the represented observation
// at t and s^{k+1} = next_state(s^k, a_{t+k}):
//
//   policy(s^k)    -> visit distribution at t+k   (uniform past the end)
//   value(s^k)     -> n-step return from t+k      (0 past the end)
//   reward(s^{k+1}) -> reward observed at t+k     (0 past the end)
//
// for k = 0..K. Positions past the end of the episode act with action 0.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "eqmz/env/minipacman.hpp"
#include "eqmz/mcts.hpp"
#include "eqmz/nd/checkpoint.hpp"
#include "eqmz/worldmodel.hpp"

namespace eqmz::training {

struct Trajectory {
  std::vector<nd::Tensor> observations;
  std::vector<ActionId> actions;
  std::vector<double> rewards;  // rewards[t] follows actions[t]
  std::vector<std::vector<double>> visits;
  std::vector<double> root_values;

  int size() const { return static_cast<int>(actions.size()); }

  void validate() const {
    const std::size_t n = actions.size();
    if (observations.size() != n || rewards.size() != n || visits.size() != n || root_values.size() != n)
      throw std::logic_error("Trajectory: per-step sequences have different lengths");
  }

  double total_reward() const {
    double s = 0.0;
    for (double r : rewards) s += r;
    return s;
  }
};

struct UnrollTargets {
  std::vector<ActionId> actions;              // K+1 actions driving the unroll
  std::vector<std::vector<double>> policies;  // K+1
  std::vector<double> values;                 // K+1
  std::vector<double> rewards;                // K+1
};

inline double value_target(const Trajectory& traj, int t, int n, double discount) {
  if (t >= traj.size()) return 0.0;
  double g = 0.0;
  double scale = 1.0;
  for (int j = 0; j < n; ++j) {
    if (t + j >= traj.size()) return g;
    g += scale * traj.rewards[t + j];
    scale *= discount;
  }
  if (t + n < traj.size()) g += scale * traj.root_values[t + n];
  return g;
}

inline UnrollTargets make_targets(const Trajectory& traj, int t, int unroll, int td_steps, double discount,
                                  int num_actions) {
  if (t < 0 || t >= traj.size())
    throw std::out_of_range("make_targets: index " + std::to_string(t) + " outside trajectory of length " +
                            std::to_string(traj.size()));
  UnrollTargets out;
  const std::vector<double> uniform(static_cast<std::size_t>(num_actions), 1.0 / num_actions);
  for (int k = 0; k <= unroll; ++k) {
    const int i = t + k;
    const bool inside = i < traj.size();
    out.actions.push_back(inside ? traj.actions[i] : ActionId{0});
    out.policies.push_back(inside ? traj.visits[i] : uniform);
    out.values.push_back(value_target(traj, i, td_steps, discount));
    out.rewards.push_back(inside ? traj.rewards[i] : 0.0);
  }
  return out;
}

/// Trajectories in insertion order; the oldest is evicted at capacity.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  }

  void add(Trajectory traj) {
    traj.validate();
    if (traj.size() == 0) return;
    if (trajectories_.size() == capacity_) {
      positions_ -= static_cast<std::size_t>(trajectories_.front().size());
      trajectories_.pop_front();
    }
    positions_ += static_cast<std::size_t>(traj.size());
    trajectories_.push_back(std::move(traj));
  }

  std::size_t size() const { return trajectories_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t positions() const { return positions_; }
  const Trajectory& at(std::size_t i) const { return trajectories_.at(i); }

  /// Uniform over all stored (trajectory, index) pairs.
  std::pair<std::size_t, int> sample(RngStream& rng) const {
    if (positions_ == 0) throw std::logic_error("ReplayBuffer::sample on an empty buffer");
    std::size_t u = rng.uniform_index(positions_);
    for (std::size_t i = 0; i < trajectories_.size(); ++i) {
      const auto n = static_cast<std::size_t>(trajectories_[i].size());
      if (u < n) return {i, static_cast<int>(u)};
      u -= n;
    }
    throw std::logic_error("ReplayBuffer: position bookkeeping is inconsistent");
  }

 private:
  std::size_t capacity_;
  std::deque<Trajectory> trajectories_;
  std::size_t positions_ = 0;
};

struct TrainConfig {
  int iterations = 100;
  int episodes_per_iteration = 1;
  int updates_per_iteration = 10;
  int batch_size = 32;
  int unroll = 5;
  int td_steps = 5;
  int replay_capacity = 500;
  double learning_rate = 1e-3;
  double weight_policy = 1.0;
  double weight_value = 1.0;
  double weight_reward = 1.0;
  int checkpoint_interval = 10;  // iterations
  std::uint64_t seed = 0;

  int total_steps() const { return iterations * updates_per_iteration; }

  void validate() const {
    if (iterations < 1 || episodes_per_iteration < 1 || updates_per_iteration < 0)
      throw std::invalid_argument("TrainConfig: iteration counts must be positive");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
    if (unroll < 1) throw std::invalid_argument("TrainConfig: unroll length K must be >= 1");
    if (td_steps < 1) throw std::invalid_argument("TrainConfig: n-step horizon must be >= 1");
    if (replay_capacity < 1) throw std::invalid_argument("TrainConfig: replay capacity must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
    if (!(weight_policy >= 0.0) || !(weight_value >= 0.0) || !(weight_reward >= 0.0))
      throw std::invalid_argument("TrainConfig: loss weights must be >= 0");
    if (checkpoint_interval < 1) throw std::invalid_argument("TrainConfig: checkpoint interval must be >= 1");
  }
};

struct EpisodeResult {
  Trajectory trajectory;
  double total_return = 0.0;
  int steps = 0;
};

/// Acts by search + sample_action from `start` until the episode ends.
/// Observations are recorded only when `record` is set.
template <class Model>
EpisodeResult play_episode(const Model& model, const env::MiniPacman& environment, env::EnvState start,
                           const mcts::MctsConfig& cfg, RngStream& rng, bool record = true) {
  EpisodeResult out;
  env::EnvState s = std::move(start);
  while (!s.done) {
    const nd::Tensor obs = env::observe(s);
    const mcts::SearchResult search = mcts::run_search(model, obs, cfg, rng);
    const ActionId a = mcts::sample_action(search.distribution, cfg.temperature, rng);
    env::StepResult step = environment.step(s, a);
    if (record) {
      out.trajectory.observations.push_back(obs);
      out.trajectory.actions.push_back(a);
      out.trajectory.rewards.push_back(step.reward);
      out.trajectory.visits.push_back(search.distribution);
      out.trajectory.root_values.push_back(search.value);
    }
    out.total_return += step.reward;
    ++out.steps;
    s = std::move(step.state);
  }
  return out;
}

template <class Model>
Trajectory self_play_episode(const Model& model, const env::MiniPacman& environment, const env::MazeMap& maze,
                             std::uint64_t env_seed, const mcts::MctsConfig& cfg, RngStream& rng) {
  return play_episode(model, environment, environment.reset(maze, env_seed), cfg, rng).trajectory;
}

struct Sample {
  nd::Tensor observation;
  UnrollTargets targets;
};

struct LossWeights {
  double policy = 1.0;
  double value = 1.0;
  double reward = 1.0;
};

struct LossTerms {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double reward = 0.0;
};

struct LossVars {
  nd::Var total;
  nd::Var policy;
  nd::Var value;
  nd::Var reward;
};

/// Weighted unroll loss of one sample, summed over k = 0..K.
inline LossVars sample_loss(const WorldModel& model, nd::Graph& g, const Sample& sample, const LossWeights& w) {
  const UnrollTargets& tg = sample.targets;
  LatentVars z = model.represent(g, sample.observation);
  std::vector<nd::Var> lp;
  std::vector<nd::Var> lv;
  std::vector<nd::Var> lr;
  for (std::size_t k = 0; k < tg.actions.size(); ++k) {
    const nd::Var p = model.policy(g, z);
    const nd::Var target_p = g.constant(nd::Tensor(nd::Shape{static_cast<int>(tg.policies[k].size())}, tg.policies[k]));
    lp.push_back(nd::scale(nd::dot(target_p, nd::log(p)), -1.0));
    const nd::Var dv = nd::sub(model.value(g, z), g.constant(nd::Tensor::vector({tg.values[k]})));
    lv.push_back(nd::dot(dv, dv));
    z = model.next_state(g, z, tg.actions[k]);
    const nd::Var dr = nd::sub(model.reward(g, z), g.constant(nd::Tensor::vector({tg.rewards[k]})));
    lr.push_back(nd::dot(dr, dr));
  }
  auto total_of = [](const std::vector<nd::Var>& xs) {
    nd::Var acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = nd::add(acc, xs[i]);
    return acc;
  };
  LossVars out;
  out.policy = total_of(lp);
  out.value = total_of(lv);
  out.reward = total_of(lr);
  out.total = nd::add(nd::add(nd::scale(out.policy, w.policy), nd::scale(out.value, w.value)),
                      nd::scale(out.reward, w.reward));
  return out;
}

/// Mean loss over the batch. When `grads` is non-null it receives the
/// gradient of the mean total loss for every parameter of the model.
inline LossTerms batch_loss(const WorldModel& model, std::span<const Sample> batch, const LossWeights& w,
                            std::map<std::string, nd::Tensor>* grads = nullptr) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  LossTerms terms;
  if (grads) {
    grads->clear();
    for (const auto& [name, t] : model.params().tensors()) grads->emplace(name, nd::Tensor(t.shape(), 0.0));
  }
  for (const Sample& sample : batch) {
    nd::Graph g(grads != nullptr);
    const LossVars l = sample_loss(model, g, sample, w);
    terms.total += l.total.value().item() * inv;
    terms.policy += l.policy.value().item() * inv;
    terms.value += l.value.value().item() * inv;
    terms.reward += l.reward.value().item() * inv;
    if (!std::isfinite(terms.total)) break;
    if (grads) {
      g.backward(l.total);
      for (const auto& [name, gr] : g.parameter_grads()) {
        nd::Tensor& acc = grads->at(name);
        for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += gr[i] * inv;
      }
    }
  }
  return terms;
}

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::string last_good)
      : std::runtime_error(what), last_good_checkpoint(std::move(last_good)) {}
  std::string last_good_checkpoint;  // empty when none was written yet
};

struct MetricsRow {
  int step = 0;
  LossTerms loss;
  double selfplay_return = 0.0;
};

inline const char* metrics_header() { return "step,loss_total,loss_p,loss_v,loss_r,selfplay_return"; }

inline std::string metrics_line(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g", r.step, r.loss.total, r.loss.policy,
                r.loss.value, r.loss.reward, r.selfplay_return);
  return buf;
}

struct TrainSetup {
  ModelConfig model;
  Variant variant = Variant::EqMuZero;
  env::EnvConfig env;
  mcts::MctsConfig search;  // root noise is forced on during self-play
  TrainConfig train;
};

struct TrainResult {
  WorldModel model;
  std::vector<MetricsRow> metrics;
};

/// Per iteration: play `episodes_per_iteration` episodes with the current
/// parameters (map e % |X|), then run `updates_per_iteration` Adam steps on
/// uniformly sampled replay positions and emit one metrics row. Acting uses
/// temperature 1 for the first half of the iterations and 0 afterwards.
///
/// With a non-empty `out_dir`, metrics.csv is appended row by row and
/// model.ckpt is rewritten every `checkpoint_interval` iterations and at the
/// end; on divergence model.ckpt is left at the last good parameters.
inline TrainResult train(const TrainSetup& setup, const std::vector<env::MazeMap>& maps,
                         const std::filesystem::path& out_dir = {}) {
  const TrainConfig& tc = setup.train;
  tc.validate();
  setup.env.validate();
  if (maps.empty()) throw std::invalid_argument("train: no training maps");
  if (setup.model.num_actions != setup.env.num_actions())
    throw std::invalid_argument("train: model has " + std::to_string(setup.model.num_actions) +
                                " actions, environment has " + std::to_string(setup.env.num_actions()));

  WorldModel model(setup.model, setup.variant, mix_seed(tc.seed, 0));
  const env::MiniPacman environment(setup.env);
  RngStream act_rng(mix_seed(tc.seed, 1));
  RngStream replay_rng(mix_seed(tc.seed, 2));
  ReplayBuffer replay(static_cast<std::size_t>(tc.replay_capacity));
  nd::Adam adam(nd::AdamConfig{tc.learning_rate});
  const LossWeights weights{tc.weight_policy, tc.weight_value, tc.weight_reward};

  std::ofstream metrics_out;
  std::string ckpt_path;
  std::string last_good;
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + out_dir.string() + ": " + ec.message());
    const auto mpath = out_dir / "metrics.csv";
    metrics_out.open(mpath, std::ios::binary | std::ios::trunc);
    if (!metrics_out) throw std::runtime_error("cannot write " + mpath.string());
    metrics_out << metrics_header() << '\n';
    ckpt_path = (out_dir / "model.ckpt").string();
  }
  auto save = [&] {
    if (ckpt_path.empty()) return;
    nd::save_checkpoint(ckpt_path, model.to_checkpoint());
    last_good = ckpt_path;
  };

  TrainResult result{model, {}};
  int step = 0;
  long episode = 0;
  for (int it = 0; it < tc.iterations; ++it) {
    mcts::MctsConfig acting = setup.search;
    acting.root_noise = true;
    acting.temperature = 2 * it < tc.iterations ? 1.0 : 0.0;
    double returns = 0.0;
    for (int e = 0; e < tc.episodes_per_iteration; ++e, ++episode) {
      const auto& maze = maps[static_cast<std::size_t>(episode % static_cast<long>(maps.size()))];
      const env::EnvState start = environment.reset(maze, mix_seed(tc.seed, 1000 + static_cast<std::uint64_t>(episode)));
      EpisodeResult ep = play_episode(model, environment, start, acting, act_rng);
      returns += ep.total_return;
      replay.add(std::move(ep.trajectory));
    }

    MetricsRow row;
    row.selfplay_return = returns / tc.episodes_per_iteration;
    for (int u = 0; u < tc.updates_per_iteration && replay.positions() > 0; ++u) {
      std::vector<Sample> batch;
      batch.reserve(static_cast<std::size_t>(tc.batch_size));
      for (int b = 0; b < tc.batch_size; ++b) {
        const auto [ti, t] = replay.sample(replay_rng);
        const Trajectory& traj = replay.at(ti);
        batch.push_back({traj.observations[static_cast<std::size_t>(t)],
                         make_targets(traj, t, tc.unroll, tc.td_steps, setup.search.discount, setup.model.num_actions)});
      }
      std::map<std::string, nd::Tensor> grads;
      const LossTerms l = batch_loss(model, batch, weights, &grads);
      if (!std::isfinite(l.total))
        throw TrainingDiverged("non-finite loss at step " + std::to_string(step) + " (policy " +
                                   std::to_string(l.policy) + ", value " + std::to_string(l.value) + ", reward " +
                                   std::to_string(l.reward) + ")",
                               last_good);
      adam.step(model.params(), grads);
      if (!model.params().all_finite())
        throw TrainingDiverged("non-finite parameters after step " + std::to_string(step), last_good);
      ++step;
      const double n = static_cast<double>(u + 1);
      row.loss.total += (l.total - row.loss.total) / n;
      row.loss.policy += (l.policy - row.loss.policy) / n;
      row.loss.value += (l.value - row.loss.value) / n;
      row.loss.reward += (l.reward - row.loss.reward) / n;
    }
    row.step = step;
    result.metrics.push_back(row);
    if (metrics_out.is_open()) {
      metrics_out << metrics_line(row) << '\n';
      metrics_out.flush();
    }
    if ((it + 1) % tc.checkpoint_interval == 0 || it + 1 == tc.iterations) save();
  }
  result.model = model;
  return result;
}

}  // namespace eqmz::training
