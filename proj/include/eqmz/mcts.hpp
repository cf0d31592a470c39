#pragma once

// pUCT Monte-Carlo tree search over a learned model.
//
// The root is expanded before the first simulation and that expansion is not
// part of the budget. Each simulation descends from the root by pUCT until it
// picks an edge with no child, expands that edge through the model and backs
// the discounted return up the path, so every simulation adds exactly one
// visit to one root edge.
//
// Action selection scores
//
//   Q(s,a) + P(s,a) * (sqrt(sum_b N(s,b)) / (1 + N(s,a))) * (c1 + log((sum_b N(s,b) + c2 + 1) / c2))
//
// with Q = 0 on unvisited edges. Exact ties are broken uniformly at random
// through RngStream::choose_action, which is what lets a rotated search make
// the corresponding choice when its stream is transported.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdio>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "eqmz/group.hpp"
#include "eqmz/rng.hpp"

namespace eqmz::mcts {

struct MctsConfig {
  int budget = 50;
  double c1 = 1.25;
  double c2 = 19652.0;
  double discount = 0.97;
  bool root_noise = false;
  double noise_fraction = 0.25;
  double noise_alpha = 0.3;
  double temperature = 0.0;
  bool minmax_q = false;

  void validate() const {
    if (budget < 1) throw std::invalid_argument("MctsConfig: budget must be >= 1");
    if (!(c1 > 0.0) || !(c2 > 0.0)) throw std::invalid_argument("MctsConfig: c1 and c2 must be positive");
    if (!(discount >= 0.0 && discount <= 1.0)) throw std::invalid_argument("MctsConfig: discount must lie in [0, 1]");
    if (temperature < 0.0) throw std::invalid_argument("MctsConfig: temperature must be >= 0");
    if (!(noise_fraction >= 0.0 && noise_fraction <= 1.0) || !(noise_alpha > 0.0))
      throw std::invalid_argument("MctsConfig: invalid root noise parameters");
  }
};

/// Per-action statistics of one node.
struct NodeStats {
  std::vector<int> visits;    // N
  std::vector<double> q;      // Q
  std::vector<double> prior;  // P
  std::vector<int> children;  // -1 until the edge is expanded

  explicit NodeStats(std::vector<double> p = {})
      : visits(p.size(), 0), q(p.size(), 0.0), prior(std::move(p)), children(prior.size(), -1) {}

  int num_actions() const { return static_cast<int>(prior.size()); }
  int visit_sum() const {
    int s = 0;
    for (int n : visits) s += n;
    return s;
  }
};

/// Running bounds of backed-up values, used when min-max normalization is on.
struct ValueBounds {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void update(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double normalize(double v) const { return hi > lo ? (v - lo) / (hi - lo) : v; }
};

inline double puct_score(double q, double prior, int visits, int visit_sum, const MctsConfig& cfg) {
  const double total = static_cast<double>(visit_sum);
  const double exploration = cfg.c1 + std::log((total + cfg.c2 + 1.0) / cfg.c2);
  return q + prior * (std::sqrt(total) / (1.0 + static_cast<double>(visits))) * exploration;
}

/// argmax of the pUCT score, uniform among exact ties.
inline ActionId select_action_puct(const NodeStats& stats, const MctsConfig& cfg, RngStream& rng,
                                   const ValueBounds* bounds = nullptr) {
  const int n = stats.num_actions();
  if (n == 0) throw std::invalid_argument("select_action_puct: node has no actions");
  const int visit_sum = stats.visit_sum();
  std::vector<ActionId> best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < n; ++a) {
    double q = stats.q[a];
    if (bounds && stats.visits[a] > 0) q = bounds->normalize(q);
    const double s = puct_score(q, stats.prior[a], stats.visits[a], visit_sum, cfg);
    if (s > best_score) {
      best_score = s;
      best.assign(1, ActionId{a});
    } else if (s == best_score) {
      best.push_back(ActionId{a});
    }
  }
  if (best.empty()) throw std::runtime_error("select_action_puct: no finite score");
  return best.size() == 1 ? best.front() : rng.choose_action(best);
}

/// sum_{i<m} discount^i r_i + discount^m leaf_value, evaluated from the leaf
/// backwards the same way backup() accumulates it.
inline double compute_return(std::span<const double> rewards, double leaf_value, double discount) {
  double g = leaf_value;
  for (std::size_t i = rewards.size(); i-- > 0;) g = rewards[i] + discount * g;
  return g;
}

/// Incremental mean update of one edge.
inline void update_edge(NodeStats& stats, int action, double ret) {
  const double n = static_cast<double>(stats.visits[action]);
  stats.q[action] = (n * stats.q[action] + ret) / (n + 1.0);
  stats.visits[action] += 1;
}

/// Sample from visit counts: argmax with random tie break at temperature 0,
/// otherwise proportional to N^(1/temperature).
inline ActionId sample_action(std::span<const double> distribution, double temperature, RngStream& rng) {
  if (distribution.empty()) throw std::invalid_argument("sample_action: empty distribution");
  if (temperature == 0.0) {
    const double mx = *std::max_element(distribution.begin(), distribution.end());
    std::vector<ActionId> best;
    for (std::size_t a = 0; a < distribution.size(); ++a)
      if (distribution[a] == mx) best.push_back(ActionId{static_cast<int>(a)});
    return best.size() == 1 ? best.front() : rng.choose_action(best);
  }
  std::vector<double> weights(distribution.size());
  for (std::size_t a = 0; a < distribution.size(); ++a)
    weights[a] = distribution[a] > 0.0 ? std::pow(distribution[a], 1.0 / temperature) : 0.0;
  return rng.sample_action(weights);
}

/// Models the search can plan with. `initial` embeds an observation and
/// `recurrent` expands one edge; both return the latent plus reward, value and
/// prior heads.
template <class M>
concept SearchModel = requires(const M& m, const typename M::Observation& obs, const typename M::Latent& z, ActionId a) {
  { m.num_actions() } -> std::convertible_to<int>;
  { m.initial(obs).latent } -> std::convertible_to<typename M::Latent>;
  { m.initial(obs).value } -> std::convertible_to<double>;
  { m.initial(obs).prior } -> std::convertible_to<std::vector<double>>;
  { m.recurrent(z, a).reward } -> std::convertible_to<double>;
};

template <class Latent>
struct Node {
  Latent latent;
  double reward = 0.0;
  double value = 0.0;
  int depth = 0;
  NodeStats stats;
};

struct SearchResult {
  std::vector<double> distribution;
  std::vector<int> visits;
  double value = 0.0;
};

template <SearchModel Model>
class Search {
 public:
  using Latent = typename Model::Latent;

  /// The model must outlive the search.
  Search(const Model&&, const typename Model::Observation&, MctsConfig, RngStream&, std::ostream* = nullptr) = delete;

  /// Expands the root (not counted in the budget) and, when configured, mixes
  /// Dirichlet noise into its prior.
  Search(const Model& model, const typename Model::Observation& obs, MctsConfig cfg, RngStream& rng,
         std::ostream* trace = nullptr)
      : model_(model), cfg_(cfg), rng_(rng), trace_(trace) {
    cfg_.validate();
    auto root = model_.initial(obs);
    Node<Latent> node{std::move(root.latent), root.reward, root.value, 0, NodeStats(std::move(root.prior))};
    if (node.stats.num_actions() != model_.num_actions())
      throw std::runtime_error("Search: model prior has the wrong number of actions");
    if (cfg_.root_noise) {
      const auto noise = rng_.dirichlet(node.stats.num_actions(), cfg_.noise_alpha);
      for (int a = 0; a < node.stats.num_actions(); ++a)
        node.stats.prior[a] = (1.0 - cfg_.noise_fraction) * node.stats.prior[a] + cfg_.noise_fraction * noise[a];
    }
    nodes_.push_back(std::move(node));
  }

  const std::vector<Node<Latent>>& nodes() const { return nodes_; }
  const Node<Latent>& root() const { return nodes_.front(); }
  int simulations() const { return simulations_; }
  const MctsConfig& config() const { return cfg_; }

  /// One select / expand / backup pass.
  void simulate() {
    std::vector<std::pair<int, int>> path;
    int node = 0;
    for (;;) {
      const ActionId a = select_action_puct(nodes_[node].stats, cfg_, rng_, cfg_.minmax_q ? &bounds_ : nullptr);
      path.emplace_back(node, a.id);
      const int child = nodes_[node].stats.children[a.id];
      if (child < 0) break;
      node = child;
    }
    const auto [parent, action] = path.back();
    auto inf = model_.recurrent(nodes_[parent].latent, ActionId{action});
    Node<Latent> leaf{std::move(inf.latent), inf.reward, inf.value, nodes_[parent].depth + 1,
                      NodeStats(std::move(inf.prior))};
    nodes_.push_back(std::move(leaf));
    nodes_[parent].stats.children[action] = static_cast<int>(nodes_.size()) - 1;
    backup(path);
    ++simulations_;
  }

  SearchResult run() {
    while (simulations_ < cfg_.budget) simulate();
    return result();
  }

  SearchResult result() const {
    const NodeStats& s = root().stats;
    SearchResult r;
    r.visits = s.visits;
    const int total = s.visit_sum();
    r.distribution.assign(s.visits.size(), 0.0);
    if (total > 0)
      for (std::size_t a = 0; a < s.visits.size(); ++a)
        r.distribution[a] = static_cast<double>(s.visits[a]) / static_cast<double>(total);
    r.value = root_value();
    return r;
  }

  /// Visit-weighted mean of root Q; the products are summed in ascending
  /// order so the value does not depend on action order.
  double root_value() const {
    const NodeStats& s = root().stats;
    const int total = s.visit_sum();
    if (total == 0) return root().value;
    std::vector<double> terms;
    for (int a = 0; a < s.num_actions(); ++a) terms.push_back(static_cast<double>(s.visits[a]) * s.q[a]);
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += t;
    return acc / static_cast<double>(total);
  }

 private:
  void backup(const std::vector<std::pair<int, int>>& path) {
    const int leaf = nodes_[path.back().first].stats.children[path.back().second];
    double ret = nodes_[leaf].value;
    std::vector<double> returns(path.size());
    for (std::size_t i = path.size(); i-- > 0;) {
      const auto [node, action] = path[i];
      const int child = nodes_[node].stats.children[action];
      ret = nodes_[child].reward + cfg_.discount * ret;
      update_edge(nodes_[node].stats, action, ret);
      bounds_.update(nodes_[node].stats.q[action]);
      returns[i] = ret;
    }
    if (trace_) write_trace(path, returns);
  }

  void write_trace(const std::vector<std::pair<int, int>>& path, const std::vector<double>& returns) const {
    char buf[64];
    *trace_ << "sim=" << simulations_ << " path=";
    for (std::size_t i = 0; i < path.size(); ++i) *trace_ << (i ? "," : "") << path[i].second;
    std::snprintf(buf, sizeof buf, "%.17g", nodes_[nodes_[path.back().first].stats.children[path.back().second]].value);
    *trace_ << " leaf_value=" << buf << " updates=";
    for (std::size_t i = 0; i < path.size(); ++i) {
      const auto [node, action] = path[i];
      std::snprintf(buf, sizeof buf, "%.17g", returns[i]);
      *trace_ << (i ? ";" : "") << "d" << i << ":G=" << buf << ":N=" << nodes_[node].stats.visits[action];
      std::snprintf(buf, sizeof buf, "%.17g", nodes_[node].stats.q[action]);
      *trace_ << ":Q=" << buf;
    }
    *trace_ << '\n';
  }

  const Model& model_;
  MctsConfig cfg_;
  RngStream& rng_;
  std::ostream* trace_;
  std::vector<Node<Latent>> nodes_;
  ValueBounds bounds_;
  int simulations_ = 0;
};

template <SearchModel Model>
SearchResult run_search(const Model& model, const typename Model::Observation& obs, const MctsConfig& cfg,
                        RngStream& rng, std::ostream* trace = nullptr) {
  Search<Model> search(model, obs, cfg, rng, trace);
  return search.run();
}

}  // namespace eqmz::mcts
