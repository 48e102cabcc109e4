// Named parameter storage shared by every module, plus the per-step binding
// that registers parameters as graph inputs so gradients can be collected.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "avseg/graph.hpp"
#include "avseg/tensor.hpp"

namespace avseg {

/// Flat, name-ordered map of learnable tensors. Iteration order is the map
/// order, which keeps optimizer traversal and serialization deterministic.
class ParamDict {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    auto [it, inserted] = values_.emplace(name, std::move(t));
    if (!inserted) throw Error("param '" + name + "' already exists");
    return it->second;
  }

  bool has(const std::string& name) const { return values_.count(name) > 0; }

  Tensor& at(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw Error("unknown param '" + name + "'");
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    return const_cast<ParamDict*>(this)->at(name);
  }

  size_t size() const { return values_.size(); }
  long total_scalars() const {
    long n = 0;
    for (const auto& [k, v] : values_) n += v.size();
    return n;
  }

  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(values_.size());
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, Tensor> values_;
};

/// One training step's view of a ParamDict: parameters become graph inputs on
/// first use, so the tape can hand their gradients back by name afterwards.
class BoundParams {
 public:
  BoundParams(Graph& g, ParamDict& dict) : g_(&g), dict_(&dict) {}

  /// Any parameter whose name starts with `prefix` is registered without
  /// gradient tracking (still used in the forward pass).
  void freeze_prefix(std::string prefix) {
    frozen_prefixes_.push_back(std::move(prefix));
  }

  bool frozen(const std::string& name) const {
    for (const auto& p : frozen_prefixes_)
      if (name.rfind(p, 0) == 0) return true;
    return false;
  }

  Var use(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    Var v = g_->input(dict_->at(name), /*requires_grad=*/!frozen(name));
    vars_.emplace(name, v);
    return v;
  }

  bool used(const std::string& name) const { return vars_.count(name) > 0; }

  /// Gradient of the bound parameter; call after Graph::backward.
  Tensor grad(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end())
      throw Error("param '" + name + "' was not used in this graph");
    return g_->grad(it->second);
  }

  bool trainable(const std::string& name) const {
    auto it = vars_.find(name);
    return it != vars_.end() && g_->requires_grad(it->second);
  }

  ParamDict& dict() { return *dict_; }

 private:
  Graph* g_;
  ParamDict* dict_;
  std::vector<std::string> frozen_prefixes_;
  std::map<std::string, Var> vars_;
};

// He initialization for ReLU conv stacks, Glorot for linear maps.
inline Tensor conv_init(Rng& rng, long kh, long kw, long ci, long co) {
  double fan_in = static_cast<double>(kh * kw * ci);
  return rng.normal_tensor({kh, kw, ci, co}, std::sqrt(2.0 / fan_in));
}

inline Tensor linear_init(Rng& rng, long in, long out) {
  return rng.normal_tensor({in, out}, std::sqrt(2.0 / (in + out)));
}

// Small random bias keeps ReLU pre-activations off exact zero even when a
// whole receptive field is zero (common after a previous ReLU), which would
// otherwise park units on the kink.
inline Tensor bias_init(Rng& rng, long n) {
  return rng.normal_tensor({n}, 0.01);
}

}  // namespace avseg
