#pragma once

#include <cmath>

#include "carnas/errors.hpp"
#include "carnas/param_store.hpp"

namespace carnas {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over every parameter, then clears gradients.
/// Every registered parameter must carry a gradient from the last backward().
inline void adam_step(ParamStore& store, const AdamOptions& opt = {}) {
  for (const auto& [name, p] : store) {
    if (!p.has_grad) throw StateError("adam_step: parameter '" + name + "' has no gradient");
  }
  for (auto& [name, p] : store) {
    ++p.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(p.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(p.step));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      double& m = p.first_moment[i];
      double& v = p.second_moment[i];
      m = opt.beta1 * m + (1.0 - opt.beta1) * g;
      v = opt.beta2 * v + (1.0 - opt.beta2) * g * g;
      p.value[i] -= opt.lr * (m / bc1) / (std::sqrt(v / bc2) + opt.eps);
    }
  }
  store.zero_grad();
}

}  // namespace carnas
