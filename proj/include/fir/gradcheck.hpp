#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "fir/tensor.hpp"

namespace fir {

/// Central-difference verification of reverse-mode gradients.
///
/// `loss_fn` must be a deterministic map from the current values of the
/// `wrt` tensors to a scalar tensor (it may capture other tensors). For
/// every coordinate of every tensor in `wrt` the analytic gradient is
/// compared against (f(x + h e) - f(x - h e)) / 2h and the maximum of
/// |analytic - numeric| / max(1, |analytic|) is returned. Meant to run in
/// 64-bit mode.
template <typename T>
T finite_diff_check(const std::function<Tensor<T>()>& loss_fn,
                    std::vector<Tensor<T>> wrt, T h = T(1e-4)) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.clear_grad();  // stale gradients from earlier passes must not leak in
  }
  Tensor<T> loss = loss_fn();
  backward(loss);
  std::vector<std::vector<T>> analytic;
  analytic.reserve(wrt.size());
  for (auto& t : wrt) {
    analytic.push_back(t.has_grad() ? t.grad() : std::vector<T>(t.numel(), T(0)));
  }

  T max_rel = T(0);
  NoGradGuard no_grad;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& vals = wrt[ti].values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const T orig = vals[i];
      vals[i] = orig + h;
      const T fp = loss_fn().values()[0];
      vals[i] = orig - h;
      const T fm = loss_fn().values()[0];
      vals[i] = orig;
      const T numeric = (fp - fm) / (T(2) * h);
      const T a = analytic[ti][i];
      const T rel = std::abs(a - numeric) / std::max(T(1), std::abs(a));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace fir
