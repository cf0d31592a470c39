#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>

#include "eqmz/nd/graph.hpp"
#include "eqmz/nd/tensor.hpp"

namespace eqmz::nd {

/// Named parameter tensors, iterated in name order.
class ParamStore {
 public:
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const Tensor& get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("ParamStore: no parameter named '" + name + "'");
    return it->second;
  }
  Tensor& get(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("ParamStore: no parameter named '" + name + "'");
    return it->second;
  }

  void set(const std::string& name, Tensor value) { tensors_[name] = std::move(value); }

  Var bind(Graph& g, const std::string& name) const { return g.parameter(name, get(name)); }

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  std::map<std::string, Tensor>& tensors() { return tensors_; }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.numel();
    return n;
  }

  bool all_finite() const {
    for (const auto& [_, t] : tensors_)
      if (!t.all_finite()) return false;
    return true;
  }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Shape shape, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = (2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0) * limit;
  return t;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive moment estimation with bias correction.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (const auto& [name, grad] : grads) {
      Tensor& p = params.get(name);
      auto [mit, _m] = m_.try_emplace(name, p.shape(), 0.0);
      auto [vit, _v] = v_.try_emplace(name, p.shape(), 0.0);
      Tensor& m = mit->second;
      Tensor& v = vit->second;
      for (std::size_t i = 0; i < p.numel(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
      }
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

}  // namespace eqmz::nd
