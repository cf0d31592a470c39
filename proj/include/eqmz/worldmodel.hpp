#pragma once

// MuZero world model in C4-equivariant form, with unconstrained baselines.
//
// The latent state is four equally shaped feature maps. Rotating the input by
// 90 degrees clockwise shifts the components one step: (z1,z2,z3,z4) becomes
// (z2,z3,z4,z1).
//
//   representation  H(X)_i   = h(R^i X)
//   action input    G(a)_i   = g(R^i a), broadcast over pixels
//   encoder         E(X, a)  = H(X) + G(a)
//   transition      T(z)_i   = tau(z_i)                          constrained
//                   T(z)_i   = tau(z_i, z_i+1, z_i+2, z_i+3)     interacting
//   next state      z'       = T(z + G(a))
//   policy          P(a | z) = mean_i pi(R^i a | z_i)
//   reward, value   rho(z1+z2+z3+z4), v(z1+z2+z3+z4)
//
// Every sum or mean over the four components is a sorted_sum, so the result
// depends only on the multiset of operands and the symmetry holds bit for bit.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "eqmz/group.hpp"
#include "eqmz/nd/checkpoint.hpp"
#include "eqmz/nd/graph.hpp"
#include "eqmz/nd/params.hpp"
#include "eqmz/observation.hpp"
#include "eqmz/rng.hpp"

namespace eqmz {

enum class Variant { EqMuZero, StdMuZero, StdWithEqEncoder, EqWithStdEncoder, EqWithStdPolicy };

inline constexpr std::array<Variant, 5> all_variants{Variant::EqMuZero, Variant::StdMuZero, Variant::StdWithEqEncoder,
                                                     Variant::EqWithStdEncoder, Variant::EqWithStdPolicy};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::EqMuZero: return "EqMuZero";
    case Variant::StdMuZero: return "StdMuZero";
    case Variant::StdWithEqEncoder: return "StdWithEqEncoder";
    case Variant::EqWithStdEncoder: return "EqWithStdEncoder";
    case Variant::EqWithStdPolicy: return "EqWithStdPolicy";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : all_variants)
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown variant '" + s +
                              "' (expected EqMuZero, StdMuZero, StdWithEqEncoder, EqWithStdEncoder or EqWithStdPolicy)");
}

/// Which implementation each component dispatches to.
struct Dispatch {
  bool eq_encoder;
  bool eq_transition;
  bool eq_policy;
  bool eq_heads;  // reward and value

  bool fully_equivariant() const { return eq_encoder && eq_transition && eq_policy && eq_heads; }
};

constexpr Dispatch dispatch_for(Variant v) {
  switch (v) {
    case Variant::EqMuZero: return {true, true, true, true};
    case Variant::StdMuZero: return {false, false, false, false};
    case Variant::StdWithEqEncoder: return {true, false, false, false};
    case Variant::EqWithStdEncoder: return {false, true, true, true};
    case Variant::EqWithStdPolicy: return {true, true, false, true};
  }
  return {false, false, false, false};
}

enum class TransitionKind { Constrained, Interacting };

inline std::string to_string(TransitionKind k) { return k == TransitionKind::Constrained ? "constrained" : "interacting"; }

inline TransitionKind parse_transition_kind(const std::string& s) {
  if (s == "constrained") return TransitionKind::Constrained;
  if (s == "interacting") return TransitionKind::Interacting;
  throw std::invalid_argument("unknown transition kind '" + s + "' (expected constrained or interacting)");
}

struct ModelConfig {
  int obs_channels = 4;
  int channels = 16;  // per latent component
  int num_actions = 4;
  int encoder_layers = 3;
  int res_blocks = 2;
  int hidden = 32;
  int kernel = 3;
  TransitionKind transition = TransitionKind::Constrained;
  bool scale_latent = true;  // min-max scale each component after h and tau

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LatentState {
  std::array<nd::Tensor, 4> z;

  friend bool operator==(const LatentState&, const LatentState&) = default;
};

inline LatentState act_on_latent(Rotation g, const LatentState& s) { return LatentState{act_on_latent(g, s.z)}; }

using LatentVars = std::array<nd::Var, 4>;

/// Heads and next latent for one node of the search tree.
struct Inference {
  LatentState latent;
  double reward = 0.0;
  double value = 0.0;
  std::vector<double> prior;
};

class WorldModel {
 public:
  WorldModel(ModelConfig config, Variant variant, std::uint64_t init_seed)
      : config_(config), variant_(variant), dispatch_(dispatch_for(variant)) {
    validate();
    initialize(init_seed);
  }

  WorldModel(ModelConfig config, Variant variant, nd::ParamStore params)
      : config_(config), variant_(variant), dispatch_(dispatch_for(variant)), params_(std::move(params)) {
    validate();
    for (const auto& [name, shape] : parameter_shapes()) {
      if (!params_.contains(name)) throw std::invalid_argument("WorldModel: missing parameter " + name);
      if (params_.get(name).shape() != shape)
        throw std::invalid_argument("WorldModel: parameter " + name + " has shape " +
                                    nd::shape_str(params_.get(name).shape()) + ", expected " + nd::shape_str(shape));
    }
  }

  const ModelConfig& config() const { return config_; }
  Variant variant() const { return variant_; }
  Dispatch dispatch() const { return dispatch_; }
  const nd::ParamStore& params() const { return params_; }
  nd::ParamStore& params() { return params_; }

  /// Every parameter this variant uses, with its shape, in name order.
  std::map<std::string, nd::Shape> parameter_shapes() const {
    std::map<std::string, nd::Shape> out;
    const int c = config_.channels;
    const int a = config_.num_actions;
    const int k = config_.kernel;
    const int h = config_.hidden;
    auto conv = [&](const std::string& p, int out_c, int in_c) {
      out[p + ".w"] = {out_c, in_c, k, k};
      out[p + ".b"] = {out_c};
    };
    auto fc = [&](const std::string& p, int out_n, int in_n) {
      out[p + ".w"] = {out_n, in_n};
      out[p + ".b"] = {out_n};
    };
    auto blocks = [&](const std::string& p, int ch) {
      for (int j = 0; j < config_.res_blocks; ++j) {
        conv(p + ".block" + std::to_string(j) + ".conv1", ch, ch);
        conv(p + ".block" + std::to_string(j) + ".conv2", ch, ch);
      }
    };
    auto mlp = [&](const std::string& p, int in_n, int out_n) {
      fc(p + ".fc0", h, in_n);
      fc(p + ".fc1", out_n, h);
    };
    if (dispatch_.eq_encoder) {
      for (int l = 0; l < config_.encoder_layers; ++l)
        conv("eq.h.conv" + std::to_string(l), c, l == 0 ? config_.obs_channels : c);
      out["eq.g.embed"] = {a, c};
    } else {
      conv("std.enc.stem", 4 * c, config_.obs_channels);
      blocks("std.enc", 4 * c);
      out["std.g.embed"] = {a, 4 * c};
    }
    if (dispatch_.eq_transition) {
      if (config_.transition == TransitionKind::Interacting) conv("eq.tau.mix", c, 4 * c);
      blocks("eq.tau", c);
    } else {
      blocks("std.tau", 4 * c);
    }
    if (dispatch_.eq_policy)
      mlp("eq.pi", c, a);
    else
      mlp("std.pi", 4 * c, a);
    if (dispatch_.eq_heads) {
      mlp("eq.rho", c, 1);
      mlp("eq.v", c, 1);
    } else {
      mlp("std.rho", 4 * c, 1);
      mlp("std.v", 4 * c, 1);
    }
    return out;
  }

  // ---- equivariant components -------------------------------------------

  /// h: stack of same-padded convolutions with relu.
  nd::Var eq_h(nd::Graph& g, nd::Var x) const {
    for (int l = 0; l < config_.encoder_layers; ++l) {
      const std::string p = "eq.h.conv" + std::to_string(l);
      x = nd::relu(nd::conv2d(bind(g, p + ".w"), bind(g, p + ".b"), x));
    }
    return x;
  }

  LatentVars eq_represent(nd::Graph& g, const nd::Tensor& obs) const {
    LatentVars z;
    for (int i = 0; i < 4; ++i) z[i] = eq_h(g, g.constant(act_on_observation(Rotation{i}, obs)));
    return z;
  }

  /// g(R^i a) for each component i, as channel vectors.
  LatentVars eq_action_embedding(nd::Graph& g, ActionId a) const {
    nd::Var table = bind(g, "eq.g.embed");
    LatentVars out;
    for (int i = 0; i < 4; ++i) {
      const int row = checked_action(act_on_action(Rotation{i}, a));
      out[i] = as_vector(nd::slice(table, row, 1));
    }
    return out;
  }

  nd::Var eq_tau(nd::Graph& g, std::span<const nd::Var> args) const {
    nd::Var x = args[0];
    if (config_.transition == TransitionKind::Interacting)
      x = nd::add(x, nd::conv2d(bind(g, "eq.tau.mix.w"), bind(g, "eq.tau.mix.b"), nd::concat(args)));
    return res_stack(g, "eq.tau", x);
  }

  LatentVars eq_transition(nd::Graph& g, const LatentVars& z) const {
    LatentVars out;
    for (int i = 0; i < 4; ++i) {
      if (config_.transition == TransitionKind::Constrained) {
        const std::array<nd::Var, 1> arg{z[i]};
        out[i] = eq_tau(g, arg);
      } else {
        const std::array<nd::Var, 4> args{z[i], z[(i + 1) % 4], z[(i + 2) % 4], z[(i + 3) % 4]};
        out[i] = eq_tau(g, args);
      }
    }
    return out;
  }

  /// Per-component distributions pi(. | z_i).
  std::array<nd::Var, 4> eq_component_policies(nd::Graph& g, const LatentVars& z) const {
    std::array<nd::Var, 4> out;
    for (int i = 0; i < 4; ++i) out[i] = nd::softmax(mlp(g, "eq.pi", nd::mean_pool(z[i])));
    return out;
  }

  nd::Var eq_policy(nd::Graph& g, const LatentVars& z) const {
    const auto pis = eq_component_policies(g, z);
    std::array<nd::Var, 4> terms;
    for (int i = 0; i < 4; ++i) {
      std::vector<int> idx(static_cast<std::size_t>(config_.num_actions));
      for (int a = 0; a < config_.num_actions; ++a) idx[a] = act_on_action(Rotation{i}, ActionId{a}).id;
      terms[i] = nd::gather(pis[i], std::move(idx));
    }
    return nd::scale(nd::sorted_sum(terms), 0.25);
  }

  nd::Var eq_reward(nd::Graph& g, const LatentVars& z) const {
    return mlp(g, "eq.rho", nd::mean_pool(nd::sorted_sum(z)));
  }
  nd::Var eq_value(nd::Graph& g, const LatentVars& z) const { return mlp(g, "eq.v", nd::mean_pool(nd::sorted_sum(z))); }

  // ---- baseline components ----------------------------------------------

  LatentVars std_represent(nd::Graph& g, const nd::Tensor& obs) const {
    nd::Var x = nd::relu(nd::conv2d(bind(g, "std.enc.stem.w"), bind(g, "std.enc.stem.b"), g.constant(obs)));
    return split(res_stack(g, "std.enc", x));
  }

  LatentVars std_action_embedding(nd::Graph& g, ActionId a) const {
    nd::Var row = as_vector(nd::slice(bind(g, "std.g.embed"), checked_action(a), 1));
    LatentVars out;
    for (int i = 0; i < 4; ++i) out[i] = nd::slice(row, i * config_.channels, config_.channels);
    return out;
  }

  LatentVars std_transition(nd::Graph& g, const LatentVars& z) const {
    return split(res_stack(g, "std.tau", nd::concat(z)));
  }

  nd::Var std_policy(nd::Graph& g, const LatentVars& z) const { return nd::softmax(mlp(g, "std.pi", pooled(z))); }
  nd::Var std_reward(nd::Graph& g, const LatentVars& z) const { return mlp(g, "std.rho", pooled(z)); }
  nd::Var std_value(nd::Graph& g, const LatentVars& z) const { return mlp(g, "std.v", pooled(z)); }

  // ---- variant dispatch -------------------------------------------------

  LatentVars represent(nd::Graph& g, const nd::Tensor& obs) const {
    return scaled(dispatch_.eq_encoder ? eq_represent(g, obs) : std_represent(g, obs));
  }
  LatentVars action_embedding(nd::Graph& g, ActionId a) const {
    return dispatch_.eq_encoder ? eq_action_embedding(g, a) : std_action_embedding(g, a);
  }
  /// Observation and action embedded together: H(X) + G(a).
  LatentVars encode(nd::Graph& g, const nd::Tensor& obs, ActionId a) const {
    return with_action(g, represent(g, obs), a);
  }
  LatentVars transition(nd::Graph& g, const LatentVars& z) const {
    return scaled(dispatch_.eq_transition ? eq_transition(g, z) : std_transition(g, z));
  }
  LatentVars next_state(nd::Graph& g, const LatentVars& z, ActionId a) const {
    return transition(g, with_action(g, z, a));
  }
  nd::Var policy(nd::Graph& g, const LatentVars& z) const {
    return dispatch_.eq_policy ? eq_policy(g, z) : std_policy(g, z);
  }
  nd::Var reward(nd::Graph& g, const LatentVars& z) const {
    return dispatch_.eq_heads ? eq_reward(g, z) : std_reward(g, z);
  }
  nd::Var value(nd::Graph& g, const LatentVars& z) const {
    return dispatch_.eq_heads ? eq_value(g, z) : std_value(g, z);
  }

  // ---- non-recording inference used by the search -----------------------

  Inference initial_inference(const nd::Tensor& obs) const {
    nd::Graph g(false);
    return heads(g, represent(g, obs));
  }

  Inference recurrent_inference(const LatentState& parent, ActionId a) const {
    nd::Graph g(false);
    return heads(g, next_state(g, constants(g, parent), a));
  }

  using Latent = LatentState;
  using Observation = nd::Tensor;
  int num_actions() const { return config_.num_actions; }
  Inference initial(const nd::Tensor& obs) const { return initial_inference(obs); }
  Inference recurrent(const LatentState& parent, ActionId a) const { return recurrent_inference(parent, a); }

  static LatentVars constants(nd::Graph& g, const LatentState& s) {
    return {g.constant(s.z[0]), g.constant(s.z[1]), g.constant(s.z[2]), g.constant(s.z[3])};
  }

  static LatentState values(const LatentVars& z) {
    return LatentState{{z[0].value(), z[1].value(), z[2].value(), z[3].value()}};
  }

  // ---- persistence ------------------------------------------------------

  nd::Checkpoint to_checkpoint() const {
    nd::Checkpoint ckpt;
    ckpt.meta["variant"] = to_string(variant_);
    ckpt.meta["model.obs_channels"] = std::to_string(config_.obs_channels);
    ckpt.meta["model.channels"] = std::to_string(config_.channels);
    ckpt.meta["model.num_actions"] = std::to_string(config_.num_actions);
    ckpt.meta["model.encoder_layers"] = std::to_string(config_.encoder_layers);
    ckpt.meta["model.res_blocks"] = std::to_string(config_.res_blocks);
    ckpt.meta["model.hidden"] = std::to_string(config_.hidden);
    ckpt.meta["model.kernel"] = std::to_string(config_.kernel);
    ckpt.meta["model.transition"] = to_string(config_.transition);
    ckpt.meta["model.scale_latent"] = config_.scale_latent ? "1" : "0";
    ckpt.params = params_;
    return ckpt;
  }

  static WorldModel from_checkpoint(const nd::Checkpoint& ckpt) {
    auto get = [&](const std::string& key) -> const std::string& {
      auto it = ckpt.meta.find(key);
      if (it == ckpt.meta.end()) throw nd::CheckpointError("checkpoint lacks meta key " + key);
      return it->second;
    };
    ModelConfig c;
    c.obs_channels = std::stoi(get("model.obs_channels"));
    c.channels = std::stoi(get("model.channels"));
    c.num_actions = std::stoi(get("model.num_actions"));
    c.encoder_layers = std::stoi(get("model.encoder_layers"));
    c.res_blocks = std::stoi(get("model.res_blocks"));
    c.hidden = std::stoi(get("model.hidden"));
    c.kernel = std::stoi(get("model.kernel"));
    c.transition = parse_transition_kind(get("model.transition"));
    c.scale_latent = get("model.scale_latent") == "1";
    return WorldModel(c, parse_variant(get("variant")), ckpt.params);
  }

 private:
  void validate() const {
    const auto& c = config_;
    if (c.obs_channels < 1 || c.channels < 1 || c.hidden < 1 || c.encoder_layers < 1 || c.res_blocks < 0)
      throw std::invalid_argument("ModelConfig: sizes must be positive");
    if (c.num_actions < 4) throw std::invalid_argument("ModelConfig: need at least the four moves");
    if (c.kernel < 1 || c.kernel % 2 == 0) throw std::invalid_argument("ModelConfig: kernel size must be odd");
  }

  static std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ULL;
    return h;
  }

  void initialize(std::uint64_t seed) {
    for (const auto& [name, shape] : parameter_shapes()) {
      const bool is_bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
      if (is_bias) {
        params_.set(name, nd::Tensor(shape, 0.0));
        continue;
      }
      std::mt19937_64 rng(mix_seed(seed, name_hash(name)));
      int fan_in = 0;
      int fan_out = 0;
      if (shape.size() == 4) {
        fan_in = shape[1] * shape[2] * shape[3];
        fan_out = shape[0] * shape[2] * shape[3];
      } else {
        fan_in = shape[1];
        fan_out = shape[0];
      }
      params_.set(name, nd::glorot_uniform(shape, fan_in, fan_out, rng));
    }
  }

  nd::Var bind(nd::Graph& g, const std::string& name) const { return params_.bind(g, name); }

  int checked_action(ActionId a) const {
    if (a.id < 0 || a.id >= config_.num_actions)
      throw std::invalid_argument("action id " + std::to_string(a.id) + " outside model action set of size " +
                                  std::to_string(config_.num_actions));
    return a.id;
  }

  // [1, n] -> [n]
  static nd::Var as_vector(nd::Var row) { return nd::reshape(row, nd::Shape{row.shape()[1]}); }

  nd::Var res_stack(nd::Graph& g, const std::string& prefix, nd::Var x) const {
    for (int j = 0; j < config_.res_blocks; ++j) {
      const std::string p = prefix + ".block" + std::to_string(j);
      x = nd::residual_block(bind(g, p + ".conv1.w"), bind(g, p + ".conv1.b"), bind(g, p + ".conv2.w"),
                             bind(g, p + ".conv2.b"), x);
    }
    return x;
  }

  nd::Var mlp(nd::Graph& g, const std::string& prefix, nd::Var x) const {
    x = nd::relu(nd::dense(bind(g, prefix + ".fc0.w"), bind(g, prefix + ".fc0.b"), x));
    return nd::dense(bind(g, prefix + ".fc1.w"), bind(g, prefix + ".fc1.b"), x);
  }

  LatentVars split(nd::Var x) const {
    LatentVars out;
    for (int i = 0; i < 4; ++i) out[i] = nd::slice(x, i * config_.channels, config_.channels);
    return out;
  }

  static nd::Var pooled(const LatentVars& z) {
    const std::array<nd::Var, 4> p{nd::mean_pool(z[0]), nd::mean_pool(z[1]), nd::mean_pool(z[2]), nd::mean_pool(z[3])};
    return nd::concat(p);
  }

  LatentVars scaled(LatentVars z) const {
    if (config_.scale_latent)
      for (nd::Var& zi : z) zi = nd::minmax_scale(zi);
    return z;
  }

  LatentVars with_action(nd::Graph& g, const LatentVars& z, ActionId a) const {
    const LatentVars e = action_embedding(g, a);
    LatentVars out;
    for (int i = 0; i < 4; ++i) out[i] = nd::add_channel_vector(z[i], e[i]);
    return out;
  }

  Inference heads(nd::Graph& g, const LatentVars& z) const {
    Inference inf;
    inf.reward = reward(g, z).value()[0];
    inf.value = value(g, z).value()[0];
    inf.prior = policy(g, z).value().values();
    inf.latent = values(z);
    return inf;
  }

  ModelConfig config_;
  Variant variant_;
  Dispatch dispatch_;
  nd::ParamStore params_;
};

}  // namespace eqmz
