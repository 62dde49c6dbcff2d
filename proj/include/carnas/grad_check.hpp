#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "carnas/autograd.hpp"
#include "carnas/errors.hpp"
#include "carnas/param_store.hpp"

namespace carnas {

/// Builds a scalar loss from the parameters in the store on a fresh tape.
using LossFn = std::function<Var(Tape&, ParamStore&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double ad = 0.0;
  double fd = 0.0;
};

/// Compares reverse-mode gradients with central differences
/// (f(p+eps) - f(p-eps)) / (2 eps) on every coordinate of every parameter.
/// Relative error per coordinate is |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
inline GradCheckResult grad_check_detailed(const LossFn& f, ParamStore& store, double eps = 1e-5) {
  Tape tape;
  Var loss = f(tape, store);
  tape.backward(loss);

  auto eval = [&] {
    Tape t;
    const double v = f(t, store).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss at perturbed point");
    return v;
  };

  GradCheckResult res;
  for (auto& [name, p] : store) {
    const Tensor analytic = p.grad;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + eps;
      const double up = eval();
      p.value[i] = orig - eps;
      const double down = eval();
      p.value[i] = orig;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = analytic[i];
      const double rel = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
      if (rel > res.max_rel_error) res = {rel, name, i, ad, fd};
    }
  }
  store.zero_grad();
  return res;
}

inline double grad_check(const LossFn& f, ParamStore& store, double eps = 1e-5) {
  return grad_check_detailed(f, store, eps).max_rel_error;
}

}  // namespace carnas
