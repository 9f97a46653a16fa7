#pragma once

#include <string>
#include <utility>
#include <vector>

#include "usdaf/core/tensor.hpp"

namespace usdaf::ad {

/// Named, ordered collection of trainable tensors.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor tensor) {
    for (const auto& [n, t] : entries_) {
      if (n == name) throw ConfigError("duplicate parameter name: " + name);
    }
    tensor.set_requires_grad(true);
    entries_.emplace_back(std::move(name), std::move(tensor));
    return entries_.back().second;
  }

  void append(const ParameterSet& other) {
    for (const auto& [n, t] : other.entries_) add(n, t);
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : entries_) {
      if (n == name) return &t;
    }
    return nullptr;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct OptimizerState {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::vector<double>> velocity;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  }
};

/// SGD with momentum and L2 weight decay:
///   v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v
/// Gradients are cleared afterwards.
inline void sgd_step(std::vector<Tensor>& params, OptimizerState& state) {
  state.validate();
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const auto& p : params) state.velocity.emplace_back(p.size(), 0.0);
  }
  if (state.velocity.size() != params.size()) throw ShapeError("optimizer state does not match parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& v = state.velocity[k];
    if (v.size() != p.size()) throw ShapeError("velocity shape does not match parameter " + std::to_string(k));
    if (!p.has_grad()) throw Error("sgd_step: parameter " + std::to_string(k) + " has no gradient");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& v = state.velocity[k];
    auto values = p.mutable_values();
    const auto g = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      v[i] = state.momentum * v[i] + g[i] + state.weight_decay * values[i];
      values[i] -= state.learning_rate * v[i];
    }
    p.clear_grad();
  }
}

}  // namespace usdaf::ad
