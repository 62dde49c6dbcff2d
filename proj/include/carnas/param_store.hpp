#pragma once

#include <cstdint>
#include <iostream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "carnas/errors.hpp"
#include "carnas/tensor.hpp"

namespace carnas {

/// A trainable tensor together with its gradient and Adam moments.
struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor first_moment;
  Tensor second_moment;
  std::uint64_t step = 0;
  bool has_grad = false;
};

/// Named parameters keyed by dotted path, e.g. "gnn0.chunk2.layer1.weight".
///
/// Iteration is in lexicographic name order, which fixes the order of
/// optimizer updates and checkpoint records.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor value) {
    if (params_.contains(name)) throw StateError("duplicate parameter '" + name + "'");
    Parameter p;
    p.grad = Tensor::zeros_like(value);
    p.first_moment = Tensor::zeros_like(value);
    p.second_moment = Tensor::zeros_like(value);
    p.value = std::move(value);
    return params_.emplace(name, std::move(p)).first->second;
  }

  bool contains(const std::string& name) const { return params_.contains(name); }

  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw StateError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw StateError("unknown parameter '" + name + "'");
    return it->second;
  }

  const Tensor& value(const std::string& name) const { return at(name).value; }
  Tensor& value(const std::string& name) { return at(name).value; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, _] : params_) out.push_back(k);
    return out;
  }

  std::size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& [_, p] : params_) {
      p.grad.fill(0.0);
      p.has_grad = false;
    }
  }

 private:
  std::map<std::string, Parameter> params_;
};

/// Total number of scalar entries across parameters whose name starts with
/// `prefix`. An empty prefix counts everything; a prefix that matches nothing
/// returns 0 and logs a warning.
inline std::size_t param_count(const ParamStore& store, std::string_view prefix = {}) {
  std::size_t total = 0;
  bool matched = false;
  for (const auto& [name, p] : store) {
    if (name.starts_with(prefix)) {
      total += p.value.size();
      matched = true;
    }
  }
  if (!matched && !prefix.empty()) {
    std::clog << "warning: no parameters under prefix '" << prefix << "'\n";
  }
  return total;
}

}  // namespace carnas
