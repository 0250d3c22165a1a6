#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fir/errors.hpp"
#include "fir/tensor.hpp"

namespace fir {

struct OptimizerConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("optimizer: lr must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
      throw ConfigError("optimizer: betas must lie in [0, 1)");
    }
    if (!(eps > 0)) throw ConfigError("optimizer: eps must be positive");
    if (weight_decay < 0) throw ConfigError("optimizer: weight_decay must be >= 0");
  }
};

/// Adaptive moment estimation with decoupled weight decay. Holds first and
/// second moment state per parameter tensor, matched by position in the
/// (stable) parameter list.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, OptimizerConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].numel(), T(0));
      v_[i].assign(params_[i].numel(), T(0));
    }
  }

  /// One update using the gradients currently stored on the parameters.
  /// Parameters without a gradient (unused branches) are skipped.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      auto& p = params_[i].values();
      const auto& g = params_[i].grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = static_cast<T>(cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj);
        v[j] = static_cast<T>(cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj);
        const double mhat = static_cast<double>(m[j]) / bc1;
        const double vhat = static_cast<double>(v[j]) / bc2;
        const double update = mhat / (std::sqrt(vhat) + cfg_.eps) +
                              cfg_.weight_decay * static_cast<double>(p[j]);
        p[j] = static_cast<T>(static_cast<double>(p[j]) - lr * update);
      }
    }
  }

  std::int64_t step_count() const { return t_; }

 private:
  std::vector<Tensor<T>> params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::int64_t t_ = 0;
};

/// Global L2 norm over the gradients currently stored on `params`.
template <typename T>
double gradient_norm(const std::vector<Tensor<T>>& params) {
  double ss = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) ss += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(ss);
}

}  // namespace fir
