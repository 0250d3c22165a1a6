#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "fir/attention.hpp"
#include "fir/conv.hpp"
#include "fir/partition.hpp"
#include "fir/tensor.hpp"

namespace fir {

/// Spatial block of the convolutional FFN:
///   conv1  - dense 3x3 at the expanded width
///   linear - pointwise 1x1
///   conv3  - 1x1 down to a quarter width, 3x3, 1x1 back up
enum class ConvKind { conv1, linear, conv3 };

/// v3 runs both fractal levels inside one layer (shared projections, one
/// output projection, halved query/key width). v1 alternates: even layers
/// attend within windows, odd layers across the window grid of each region.
enum class LayerVariant { v1, v3 };

enum class Activation { gelu, identity };

enum class AttMode { l1_only, l2_only, both };

struct FifmConfig {
  std::int64_t p = 2;  // window side
  std::int64_t s = 2;  // windows per region side
  std::int64_t channels = 0;
  std::int64_t heads = 1;
  AttentionKind attention_kind = AttentionKind::dot;
  double cosine_scale = 10.0;
  std::int64_t ffn_ratio = 2;  // expansion ratio of the FFN
  ConvKind conv_kind = ConvKind::conv3;
  LayerVariant variant = LayerVariant::v3;
  Activation act = Activation::gelu;
  double residual_scale = 1.0;  // 0.01 under the residual-rescale init scheme
  double ln_eps = 1e-6;

  std::int64_t qk_dim() const {
    return variant == LayerVariant::v3 ? channels / 2 : channels;
  }
  std::int64_t ffn_width() const { return ffn_ratio * channels; }

  void validate() const {
    if (channels < 1) throw ConfigError("fifm: channels must be positive");
    if (p < 1 || s < 1) throw ConfigError("fifm: window and grouping factors must be positive");
    if (ffn_ratio < 1) throw ConfigError("fifm: ffn_ratio must be >= 1");
    if (variant == LayerVariant::v3 && channels % 2 != 0) {
      throw ConfigError("fifm: v3 halves the query/key width, channels must be even");
    }
    if (conv_kind == ConvKind::conv3 && ffn_width() % 4 != 0) {
      throw ConfigError("fifm: conv3 bottleneck needs the FFN width " +
                        std::to_string(ffn_width()) + " divisible by 4");
    }
    AttentionConfig a = attention_config(true);
    a.validate();
  }

  AttentionConfig attention_config(bool with_output_proj) const {
    AttentionConfig a;
    a.heads = heads;
    a.model_dim = channels;
    a.qk_dim = qk_dim();
    a.kind = attention_kind;
    a.cosine_scale = cosine_scale;
    a.with_output_proj = with_output_proj;
    return a;
  }
};

/// Which attention sublayer a given layer runs under the configured variant.
inline AttMode layer_att_mode(LayerVariant variant, std::int64_t layer_index) {
  if (variant == LayerVariant::v3) return AttMode::both;
  return layer_index % 2 == 0 ? AttMode::l1_only : AttMode::l2_only;
}

// ---------------------------------------------------------------------------
// Parameter structures and construction
// ---------------------------------------------------------------------------

enum class ParamRole { weight, bias, ln_gain, ln_bias, log_scale };

/// Callback creating one parameter tensor for a given shape and role; the
/// model module supplies the scheme-specific initializer.
template <typename T>
using ParamInit = std::function<Tensor<T>(const Shape&, ParamRole)>;

template <typename T>
struct LayerNormParams {
  Tensor<T> gain, bias;
};

template <typename T>
struct FfnParams {
  ConvKind kind = ConvKind::conv3;
  Tensor<T> expand_w, expand_b;  // 1x1, C -> gamma*C
  Tensor<T> s1_w, s1_b;          // spatial block, stage 1
  Tensor<T> s2_w, s2_b;          // conv3 only
  Tensor<T> s3_w, s3_b;          // conv3 only
  Tensor<T> project_w, project_b;  // 1x1, gamma*C -> C
};

template <typename T>
struct LayerParams {
  LayerNormParams<T> ln1, ln2;
  std::optional<AttentionParams<T>> l1_attn;
  std::optional<AttentionParams<T>> l2_attn;
  FfnParams<T> ffn;
};

template <typename T>
AttentionParams<T> build_attention_params(const AttentionConfig& cfg,
                                          const ParamInit<T>& init) {
  AttentionParams<T> p;
  p.wq = init({cfg.model_dim, cfg.qk_dim}, ParamRole::weight);
  p.bq = init({cfg.qk_dim}, ParamRole::bias);
  p.wk = init({cfg.model_dim, cfg.qk_dim}, ParamRole::weight);
  p.bk = init({cfg.qk_dim}, ParamRole::bias);
  p.wv = init({cfg.model_dim, cfg.model_dim}, ParamRole::weight);
  p.bv = init({cfg.model_dim}, ParamRole::bias);
  if (cfg.with_output_proj) {
    p.wo = init({cfg.model_dim, cfg.model_dim}, ParamRole::weight);
    p.bo = init({cfg.model_dim}, ParamRole::bias);
  }
  if (cfg.kind == AttentionKind::cosine) {
    Tensor<T> ls = init({cfg.heads}, ParamRole::log_scale);
    auto& v = ls.values();
    std::fill(v.begin(), v.end(), static_cast<T>(std::log(cfg.cosine_scale)));
    p.log_scale = ls;
  }
  return p;
}

template <typename T>
FfnParams<T> build_ffn_params(const FifmConfig& cfg, const ParamInit<T>& init) {
  const std::int64_t C = cfg.channels;
  const std::int64_t E = cfg.ffn_width();
  FfnParams<T> f;
  f.kind = cfg.conv_kind;
  f.expand_w = init({1, 1, C, E}, ParamRole::weight);
  f.expand_b = init({E}, ParamRole::bias);
  switch (cfg.conv_kind) {
    case ConvKind::conv1:
      f.s1_w = init({3, 3, E, E}, ParamRole::weight);
      f.s1_b = init({E}, ParamRole::bias);
      break;
    case ConvKind::linear:
      f.s1_w = init({1, 1, E, E}, ParamRole::weight);
      f.s1_b = init({E}, ParamRole::bias);
      break;
    case ConvKind::conv3: {
      const std::int64_t Q = E / 4;
      f.s1_w = init({1, 1, E, Q}, ParamRole::weight);
      f.s1_b = init({Q}, ParamRole::bias);
      f.s2_w = init({3, 3, Q, Q}, ParamRole::weight);
      f.s2_b = init({Q}, ParamRole::bias);
      f.s3_w = init({1, 1, Q, E}, ParamRole::weight);
      f.s3_b = init({E}, ParamRole::bias);
      break;
    }
  }
  f.project_w = init({1, 1, E, C}, ParamRole::weight);
  f.project_b = init({C}, ParamRole::bias);
  return f;
}

template <typename T>
LayerParams<T> build_layer_params(const FifmConfig& cfg, std::int64_t layer_index,
                                  const ParamInit<T>& init) {
  cfg.validate();
  LayerParams<T> lp;
  lp.ln1.gain = init({cfg.channels}, ParamRole::ln_gain);
  lp.ln1.bias = init({cfg.channels}, ParamRole::ln_bias);
  lp.ln2.gain = init({cfg.channels}, ParamRole::ln_gain);
  lp.ln2.bias = init({cfg.channels}, ParamRole::ln_bias);
  const AttMode mode = layer_att_mode(cfg.variant, layer_index);
  if (mode == AttMode::both) {
    lp.l1_attn = build_attention_params<T>(cfg.attention_config(false), init);
    lp.l2_attn = build_attention_params<T>(cfg.attention_config(true), init);
  } else if (mode == AttMode::l1_only) {
    lp.l1_attn = build_attention_params<T>(cfg.attention_config(true), init);
  } else {
    lp.l2_attn = build_attention_params<T>(cfg.attention_config(true), init);
  }
  lp.ffn = build_ffn_params<T>(cfg, init);
  return lp;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// Fractal attention over [B,H,W,C]: window attention, regrouping into
/// region-level token groups, attention across the regrouped tokens, and the
/// inverse mappings. `both` runs the two levels back to back with no
/// projection between them and one output projection at the end.
template <typename T>
Tensor<T> fifm_att(const Tensor<T>& x, const FifmConfig& cfg, const LayerParams<T>& params,
                   AttMode mode) {
  if (x.ndim() != 4 || x.dim(3) != cfg.channels) {
    throw ConfigError("fifm_att: expected [B,H,W," + std::to_string(cfg.channels) +
                      "], got " + shape_to_string(x.shape()));
  }
  FractalGeometry g{x.dim(1), x.dim(2), cfg.p, cfg.s};
  g.validate();
  Tensor<T> windows = window_partition(x, cfg.p);
  switch (mode) {
    case AttMode::both: {
      Tensor<T> y1 = mhsa(windows, cfg.attention_config(false), *params.l1_attn);
      Tensor<T> grouped = fractal_regroup(y1, g);
      Tensor<T> y2 = mhsa(grouped, cfg.attention_config(true), *params.l2_attn);
      Tensor<T> back = fractal_regroup_reverse(y2, g);
      return window_reverse(back, cfg.p, g.H, g.W);
    }
    case AttMode::l1_only: {
      Tensor<T> y1 = mhsa(windows, cfg.attention_config(true), *params.l1_attn);
      return window_reverse(y1, cfg.p, g.H, g.W);
    }
    case AttMode::l2_only: {
      Tensor<T> grouped = fractal_regroup(windows, g);
      Tensor<T> y2 = mhsa(grouped, cfg.attention_config(true), *params.l2_attn);
      Tensor<T> back = fractal_regroup_reverse(y2, g);
      return window_reverse(back, cfg.p, g.H, g.W);
    }
  }
  throw ConfigError("fifm_att: unknown attention mode");
}

namespace detail {
template <typename T>
Tensor<T> apply_act(const Tensor<T>& x, Activation act) {
  return act == Activation::gelu ? gelu(x) : x;
}
}  // namespace detail

/// Convolutional FFN over [B,H,W,C]: pointwise expansion to gamma*C,
/// activation, the configured spatial block at the expanded width,
/// activation, pointwise projection back to C. Mixes all channels and a
/// local spatial neighborhood in one pass.
template <typename T>
Tensor<T> fifm_conv(const Tensor<T>& x, const FifmConfig& cfg, const FfnParams<T>& f) {
  if (x.ndim() != 4 || x.dim(3) != cfg.channels) {
    throw ConfigError("fifm_conv: expected [B,H,W," + std::to_string(cfg.channels) +
                      "], got " + shape_to_string(x.shape()));
  }
  Tensor<T> h = conv2d(x, f.expand_w, f.expand_b);
  h = detail::apply_act(h, cfg.act);
  switch (f.kind) {
    case ConvKind::conv1:
    case ConvKind::linear:
      h = conv2d(h, f.s1_w, f.s1_b);
      break;
    case ConvKind::conv3:
      h = conv2d(h, f.s1_w, f.s1_b);
      h = conv2d(h, f.s2_w, f.s2_b);
      h = conv2d(h, f.s3_w, f.s3_b);
      break;
  }
  h = detail::apply_act(h, cfg.act);
  return conv2d(h, f.project_w, f.project_b);
}

/// One full layer: pre-norm attention branch and pre-norm convolutional FFN
/// branch, each with a residual connection.
template <typename T>
Tensor<T> fractal_ir_layer(const Tensor<T>& x, const FifmConfig& cfg,
                           const LayerParams<T>& params, std::int64_t layer_index = 0) {
  const AttMode mode = layer_att_mode(cfg.variant, layer_index);
  Tensor<T> att = fifm_att(layer_norm(x, params.ln1.gain, params.ln1.bias,
                                      static_cast<T>(cfg.ln_eps)),
                           cfg, params, mode);
  if (cfg.residual_scale != 1.0) att = scale(att, static_cast<T>(cfg.residual_scale));
  Tensor<T> x1 = add(x, att);
  Tensor<T> conv = fifm_conv(layer_norm(x1, params.ln2.gain, params.ln2.bias,
                                        static_cast<T>(cfg.ln_eps)),
                             cfg, params.ffn);
  if (cfg.residual_scale != 1.0) conv = scale(conv, static_cast<T>(cfg.residual_scale));
  return add(x1, conv);
}

/// Enumerates every tensor of an attention block as (dotted name, tensor).
template <typename T, typename Fn>
void visit_attention_params(AttentionParams<T>& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".wq", p.wq);
  fn(prefix + ".bq", p.bq);
  fn(prefix + ".wk", p.wk);
  fn(prefix + ".bk", p.bk);
  fn(prefix + ".wv", p.wv);
  fn(prefix + ".bv", p.bv);
  if (p.wo.defined()) {
    fn(prefix + ".wo", p.wo);
    fn(prefix + ".bo", p.bo);
  }
  if (p.log_scale.defined()) fn(prefix + ".log_scale", p.log_scale);
}

template <typename T, typename Fn>
void visit_ffn_params(FfnParams<T>& f, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".expand.w", f.expand_w);
  fn(prefix + ".expand.b", f.expand_b);
  fn(prefix + ".s1.w", f.s1_w);
  fn(prefix + ".s1.b", f.s1_b);
  if (f.s2_w.defined()) {
    fn(prefix + ".s2.w", f.s2_w);
    fn(prefix + ".s2.b", f.s2_b);
    fn(prefix + ".s3.w", f.s3_w);
    fn(prefix + ".s3.b", f.s3_b);
  }
  fn(prefix + ".project.w", f.project_w);
  fn(prefix + ".project.b", f.project_b);
}

template <typename T, typename Fn>
void visit_layer_params(LayerParams<T>& lp, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".ln1.gain", lp.ln1.gain);
  fn(prefix + ".ln1.bias", lp.ln1.bias);
  fn(prefix + ".ln2.gain", lp.ln2.gain);
  fn(prefix + ".ln2.bias", lp.ln2.bias);
  if (lp.l1_attn) visit_attention_params(*lp.l1_attn, prefix + ".l1_attn", fn);
  if (lp.l2_attn) visit_attention_params(*lp.l2_attn, prefix + ".l2_attn", fn);
  visit_ffn_params(lp.ffn, prefix + ".ffn", fn);
}

}  // namespace fir
