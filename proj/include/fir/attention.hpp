#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fir/random.hpp"
#include "fir/tensor.hpp"

namespace fir {

enum class AttentionKind { dot, cosine };

/// Multi-head self-attention configuration. qk_dim is the width of the
/// query/key projections (the full model width, or half of it when the
/// layer variant shares one projection pair across both fractal levels).
struct AttentionConfig {
  std::int64_t heads = 1;
  std::int64_t model_dim = 0;  // C
  std::int64_t qk_dim = 0;     // C or C/2
  AttentionKind kind = AttentionKind::dot;
  double cosine_scale = 10.0;  // initial temperature, cosine mode only
  bool with_output_proj = true;

  std::int64_t head_dim() const { return qk_dim / heads; }

  void validate() const {
    if (heads < 1 || model_dim < 1 || qk_dim < 1) {
      throw ConfigError("attention: heads, model_dim and qk_dim must be positive");
    }
    if (qk_dim % heads != 0) {
      throw ConfigError("attention: qk_dim " + std::to_string(qk_dim) +
                        " not divisible by heads " + std::to_string(heads));
    }
    if (model_dim % heads != 0) {
      throw ConfigError("attention: model_dim " + std::to_string(model_dim) +
                        " not divisible by heads " + std::to_string(heads));
    }
    if (kind == AttentionKind::cosine && !(cosine_scale > 0)) {
      throw ConfigError("attention: cosine_scale must be positive");
    }
  }
};

/// Projection weights for one attention block. The cosine temperature is a
/// learnable per-head scalar stored in log space, exponentiated and clamped
/// to <= 100 at use so the softmax never degenerates.
template <typename T>
struct AttentionParams {
  Tensor<T> wq, bq;  // [C, qk_dim], [qk_dim]
  Tensor<T> wk, bk;
  Tensor<T> wv, bv;  // [C, C], [C]
  Tensor<T> wo, bo;  // [C, C], [C]; undefined when with_output_proj is false
  Tensor<T> log_scale;  // [heads], cosine mode only

  bool has_output_proj() const { return wo.defined(); }
};

inline constexpr double kCosineScaleCap = 100.0;

namespace detail {
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::int64_t heads) {
  // [G, n, D] -> [G, heads, n, D/heads]
  const std::int64_t G = x.dim(0), n = x.dim(1), D = x.dim(2);
  Tensor<T> t = reshape(x, {G, n, heads, D / heads});
  return permute(t, {0, 2, 1, 3});
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  // [G, heads, n, d] -> [G, n, heads*d]
  const std::int64_t G = x.dim(0), h = x.dim(1), n = x.dim(2), d = x.dim(3);
  Tensor<T> t = permute(x, {0, 2, 1, 3});
  return reshape(t, {G, n, h * d});
}
}  // namespace detail

/// Multi-head self-attention over token groups x[G, n, C].
/// Per head: A = softmax(Q K^T / sqrt(d)) for dot-product scores, or
/// A = softmax(scale_h * Qhat Khat^T) with row-normalized Q, K for cosine
/// scores. Output is A V per head, heads merged, optionally projected.
template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const AttentionConfig& cfg,
               const AttentionParams<T>& params) {
  cfg.validate();
  if (x.ndim() != 3 || x.dim(2) != cfg.model_dim) {
    throw ConfigError("mhsa: expected input [G, n, " + std::to_string(cfg.model_dim) +
                      "], got " + shape_to_string(x.shape()));
  }
  if (params.wq.dim(0) != cfg.model_dim || params.wq.dim(1) != cfg.qk_dim ||
      params.wv.dim(1) != cfg.model_dim) {
    throw ConfigError("mhsa: parameter shapes do not match config (wq " +
                      shape_to_string(params.wq.shape()) + ", wv " +
                      shape_to_string(params.wv.shape()) + ")");
  }

  const std::int64_t G = x.dim(0), n = x.dim(1);
  Tensor<T> flat = reshape(x, {G * n, cfg.model_dim});
  auto project = [&](const Tensor<T>& w, const Tensor<T>& b) {
    return reshape(add_rowbias(matmul(flat, w), b), {G, n, w.dim(1)});
  };
  Tensor<T> q = project(params.wq, params.bq);
  Tensor<T> k = project(params.wk, params.bk);
  Tensor<T> v = project(params.wv, params.bv);

  q = detail::split_heads(q, cfg.heads);  // [G, h, n, d]
  k = detail::split_heads(k, cfg.heads);
  v = detail::split_heads(v, cfg.heads);

  Tensor<T> scores;
  if (cfg.kind == AttentionKind::dot) {
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(cfg.head_dim()));
    scores = matmul_nt(scale(q, inv_sqrt_d), k);  // [G, h, n, n]
  } else {
    Tensor<T> qn = l2_normalize_last(q);
    Tensor<T> kn = l2_normalize_last(k);
    Tensor<T> temp = clamp_max(fir::exp(params.log_scale), T(kCosineScaleCap));
    scores = scale_axis(matmul_nt(qn, kn), temp, 1);
  }
  Tensor<T> attn = softmax_last(scores);
  Tensor<T> ctx = matmul(attn, v);  // [G, h, n, C/h]
  Tensor<T> merged = detail::merge_heads(ctx);
  if (!params.has_output_proj()) return merged;
  Tensor<T> out = add_rowbias(matmul(reshape(merged, {G * n, cfg.model_dim}), params.wo),
                              params.bo);
  return reshape(out, {G, n, cfg.model_dim});
}

// ---------------------------------------------------------------------------
// Closed-form similarity gradients and the magnitude experiment
// ---------------------------------------------------------------------------

template <typename T>
struct PairGradient {
  std::vector<T> dq;
  std::vector<T> dk;
};

/// d/dq (q . k) = k and d/dk (q . k) = q.
template <typename T>
PairGradient<T> grad_dot_closed_form(const std::vector<T>& q, const std::vector<T>& k) {
  if (q.size() != k.size()) {
    throw ShapeError("grad_dot_closed_form: vectors of length " + std::to_string(q.size()) +
                     " vs " + std::to_string(k.size()));
  }
  return {k, q};
}

/// d/dq cos(q, k) = (khat - cos(q, k) qhat) / |q|, and symmetrically for k.
/// Both inputs must be nonzero.
template <typename T>
PairGradient<T> grad_cos_closed_form(const std::vector<T>& q, const std::vector<T>& k) {
  if (q.size() != k.size()) {
    throw ShapeError("grad_cos_closed_form: vectors of length " + std::to_string(q.size()) +
                     " vs " + std::to_string(k.size()));
  }
  T qq = T(0), kk = T(0), qk = T(0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    qq += q[i] * q[i];
    kk += k[i] * k[i];
    qk += q[i] * k[i];
  }
  const T nq = std::sqrt(qq);
  const T nk = std::sqrt(kk);
  if (!(nq > T(0)) || !(nk > T(0))) {
    throw DomainError("grad_cos_closed_form: zero-norm input vector");
  }
  const T cos = qk / (nq * nk);
  PairGradient<T> g;
  g.dq.resize(q.size());
  g.dk.resize(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    g.dq[i] = (k[i] / nk - cos * q[i] / nq) / nq;
    g.dk[i] = (q[i] / nq - cos * k[i] / nk) / nk;
  }
  return g;
}

/// Configuration of the gradient-magnitude comparison between the two
/// similarity kinds. Vector norms are sampled uniformly from
/// [norm_lo, norm_hi]; directions are uniform on the sphere, optionally
/// forced orthogonal.
struct GradExperimentConfig {
  std::int64_t n_samples = 1000;
  double norm_lo = 1.0;
  double norm_hi = 1.0;
  int dim = 16;
  bool orthogonal = false;
  std::uint64_t seed = 0;
};

struct GradNormSummary {
  std::int64_t count = 0;
  double max = 0.0;
  double mean = 0.0;
  double q50 = 0.0;
  double q90 = 0.0;
  double q99 = 0.0;
};

struct GradExperimentSample {
  double q_norm = 0.0;
  double k_norm = 0.0;
  double dot_grad_norm = 0.0;
  double cos_grad_norm = 0.0;
};

struct GradExperimentResult {
  std::vector<GradExperimentSample> samples;
  GradNormSummary dot;
  GradNormSummary cosine;
};

namespace detail {
inline GradNormSummary summarize_norms(std::vector<double> norms) {
  GradNormSummary s;
  s.count = static_cast<std::int64_t>(norms.size());
  if (norms.empty()) return s;
  double sum = 0.0;
  for (double v : norms) {
    s.max = std::max(s.max, v);
    sum += v;
  }
  s.mean = sum / static_cast<double>(norms.size());
  std::sort(norms.begin(), norms.end());
  auto nearest_rank = [&](double q) {
    const std::size_t idx = static_cast<std::size_t>(
        std::min<double>(std::ceil(q * static_cast<double>(norms.size())),
                         static_cast<double>(norms.size())));
    return norms[idx == 0 ? 0 : idx - 1];
  };
  s.q50 = nearest_rank(0.50);
  s.q90 = nearest_rank(0.90);
  s.q99 = nearest_rank(0.99);
  return s;
}

inline std::vector<double> random_direction(RandomStream& rng, int dim) {
  std::vector<double> v(dim);
  double ss = 0.0;
  do {
    ss = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      ss += x * x;
    }
  } while (ss == 0.0);
  const double inv = 1.0 / std::sqrt(ss);
  for (auto& x : v) x *= inv;
  return v;
}
}  // namespace detail

/// Samples query/key pairs, evaluates both closed-form gradients w.r.t. the
/// query, and summarizes the gradient-norm distributions. Deterministic for
/// a fixed config.
inline GradExperimentResult gradient_magnitude_experiment(const GradExperimentConfig& cfg) {
  GradExperimentResult result;
  if (cfg.n_samples < 1) return result;
  RandomStream rng(cfg.seed ^ 0x5bd1e995u);
  std::vector<double> dot_norms, cos_norms;
  dot_norms.reserve(cfg.n_samples);
  cos_norms.reserve(cfg.n_samples);
  for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
    std::vector<double> qdir = detail::random_direction(rng, cfg.dim);
    std::vector<double> kdir = detail::random_direction(rng, cfg.dim);
    if (cfg.orthogonal) {
      // Gram-Schmidt against q, renormalized.
      double proj = 0.0;
      for (int j = 0; j < cfg.dim; ++j) proj += qdir[j] * kdir[j];
      double ss = 0.0;
      for (int j = 0; j < cfg.dim; ++j) {
        kdir[j] -= proj * qdir[j];
        ss += kdir[j] * kdir[j];
      }
      if (ss == 0.0) {
        --i;
        continue;
      }
      const double inv = 1.0 / std::sqrt(ss);
      for (auto& x : kdir) x *= inv;
    }
    const double qn = rng.uniform(cfg.norm_lo, cfg.norm_hi);
    const double kn = rng.uniform(cfg.norm_lo, cfg.norm_hi);
    std::vector<double> q(cfg.dim), k(cfg.dim);
    for (int j = 0; j < cfg.dim; ++j) {
      q[j] = qdir[j] * qn;
      k[j] = kdir[j] * kn;
    }
    const auto gd = grad_dot_closed_form(q, k);
    const auto gc = grad_cos_closed_form(q, k);
    auto norm_of = [](const std::vector<double>& v) {
      double ss = 0.0;
      for (double x : v) ss += x * x;
      return std::sqrt(ss);
    };
    GradExperimentSample sample;
    sample.q_norm = qn;
    sample.k_norm = kn;
    sample.dot_grad_norm = norm_of(gd.dq);
    sample.cos_grad_norm = norm_of(gc.dq);
    result.samples.push_back(sample);
    dot_norms.push_back(sample.dot_grad_norm);
    cos_norms.push_back(sample.cos_grad_norm);
  }
  result.dot = detail::summarize_norms(std::move(dot_norms));
  result.cosine = detail::summarize_norms(std::move(cos_norms));
  return result;
}

}  // namespace fir
