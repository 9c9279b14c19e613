#pragma once

#include <map>
#include <string>
#include <vector>

#include "dannet/errors.hpp"
#include "dannet/tensor.hpp"

namespace dannet {

template <typename Real>
struct Param {
  Tensor<Real> value;
  Tensor<Accum<Real>> grad;  // gradients are kept one precision level up
  bool trainable = true;
};

/// Named parameter store. Iteration order is the lexicographic name order,
/// which keeps checkpointing and updates deterministic.
template <typename Real>
class ParameterSet {
 public:
  Tensor<Real>& create(const std::string& name, std::vector<int> shape, bool trainable = true) {
    if (entries_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Param<Real> p;
    p.value = Tensor<Real>(shape);
    p.grad = Tensor<Accum<Real>>(std::move(shape));
    p.trainable = trainable;
    auto [it, ok] = entries_.emplace(name, std::move(p));
    (void)ok;
    return it->second.value;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Param<Real>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Param<Real>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  void zero_grads() {
    for (auto& [name, p] : entries_) p.grad.fill(Accum<Real>(0));
  }

  size_t size() const { return entries_.size(); }

  int64_t trainable_count() const {
    int64_t n = 0;
    for (const auto& [name, p] : entries_)
      if (p.trainable) n += p.value.numel();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, p] : entries_) out.push_back(name);
    return out;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::string, Param<Real>> entries_;
};

}  // namespace dannet
