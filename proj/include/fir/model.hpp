#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fir/fifm.hpp"
#include "fir/random.hpp"

namespace fir {

enum class ModelArch { columnar, ushape };
enum class TaskHead { denoise, sr2x };

/// Weight initialization / rescaling schemes for scaled-up training.
enum class InitScheme {
  kaiming_fan_in,    // N(0, sqrt(2 / fan_in)) weights
  trunc_normal,      // N(0, 0.02) truncated at +-2 sigma
  zero_layernorm,    // kaiming weights, layer-norm gain and bias zeroed
  residual_rescale,  // kaiming weights, residual branches scaled by 0.01
  weight_rescale,    // kaiming weights, residual-branch weights scaled by 0.1
};

struct StageGeometry {
  std::int64_t p = 2;
  std::int64_t s = 2;
};

inline constexpr double kResidualRescaleFactor = 0.01;
inline constexpr double kWeightRescaleFactor = 0.1;
inline constexpr double kTruncNormalStd = 0.02;
inline constexpr int kUshapeLevels = 4;  // three downsampling levels plus the latent

struct ModelConfig {
  ModelArch arch = ModelArch::columnar;
  std::int64_t stages = 2;  // columnar stage count; ushape is fixed 3+1+3
  std::int64_t layers_per_stage = 2;
  std::int64_t channels = 16;
  std::int64_t image_channels = 1;
  std::int64_t heads = 2;
  AttentionKind attention_kind = AttentionKind::dot;
  double cosine_scale = 10.0;
  std::int64_t ffn_ratio = 2;
  ConvKind conv_kind = ConvKind::conv3;
  LayerVariant variant = LayerVariant::v3;
  Activation act = Activation::gelu;
  InitScheme init_scheme = InitScheme::kaiming_fan_in;
  TaskHead task = TaskHead::denoise;
  // One entry per columnar stage / ushape level (0..3, latent last), or a
  // single entry broadcast everywhere.
  std::vector<StageGeometry> geometry{StageGeometry{}};

  /// Body stages in forward order; the ushape runs encoder levels 0..2, the
  /// latent, then decoder levels 2..0.
  std::int64_t n_body_stages() const { return arch == ModelArch::columnar ? stages : 7; }

  /// Resolution level of a body stage (ushape halves spatial dims per level).
  int stage_level(std::int64_t stage_pos) const {
    if (arch == ModelArch::columnar) return 0;
    if (stage_pos <= 3) return static_cast<int>(stage_pos);
    return static_cast<int>(6 - stage_pos);
  }

  std::int64_t stage_channels(std::int64_t stage_pos) const {
    return channels << stage_level(stage_pos);
  }

  StageGeometry stage_geometry(std::int64_t stage_pos) const {
    const std::size_t slot = arch == ModelArch::columnar
                                 ? static_cast<std::size_t>(stage_pos)
                                 : static_cast<std::size_t>(stage_level(stage_pos));
    if (geometry.size() == 1) return geometry[0];
    return geometry.at(slot);
  }

  FifmConfig layer_config(std::int64_t stage_pos) const {
    const StageGeometry g = stage_geometry(stage_pos);
    FifmConfig f;
    f.p = g.p;
    f.s = g.s;
    f.channels = stage_channels(stage_pos);
    f.heads = heads;
    f.attention_kind = attention_kind;
    f.cosine_scale = cosine_scale;
    f.ffn_ratio = ffn_ratio;
    f.conv_kind = conv_kind;
    f.variant = variant;
    f.act = act;
    f.residual_scale =
        init_scheme == InitScheme::residual_rescale ? kResidualRescaleFactor : 1.0;
    return f;
  }

  void validate() const {
    if (channels < 1 || image_channels < 1 || layers_per_stage < 1) {
      throw ConfigError("model: channels, image_channels and layers_per_stage must be >= 1");
    }
    if (arch == ModelArch::columnar) {
      if (stages < 1) throw ConfigError("model: columnar needs at least one stage");
      if (geometry.size() != 1 && geometry.size() != static_cast<std::size_t>(stages)) {
        throw ConfigError("model: geometry list must have 1 or stages entries");
      }
    } else {
      if (geometry.size() != 1 && geometry.size() != kUshapeLevels) {
        throw ConfigError("model: ushape geometry list must have 1 or 4 entries");
      }
    }
    for (std::int64_t sp = 0; sp < n_body_stages(); ++sp) {
      layer_config(sp).validate();
    }
  }

  /// Spatial sizes must be a multiple of this for a direct forward pass.
  std::int64_t required_divisor() const {
    std::int64_t d = 1;
    for (std::int64_t sp = 0; sp < n_body_stages(); ++sp) {
      const StageGeometry g = stage_geometry(sp);
      const std::int64_t need = (g.p * g.s) << stage_level(sp);
      d = std::lcm(d, need);
    }
    return d;
  }
};

template <typename T>
struct ConvBlockParams {
  Tensor<T> w, b;
};

/// Named parameter tree for a whole model. Every tensor is reachable by a
/// unique dotted name via visit_model_params; that name is the checkpoint key.
template <typename T>
struct ModelParams {
  Tensor<T> shallow_w, shallow_b;
  std::vector<std::vector<LayerParams<T>>> stages;  // forward order
  std::vector<ConvBlockParams<T>> downs;  // ushape: stride-2 3x3, C -> 2C
  std::vector<ConvBlockParams<T>> ups;    // ushape: 1x1 to 2*C_lo, then shuffle
  std::vector<ConvBlockParams<T>> fuses;  // ushape: 1x1 skip fusion, 2C -> C
  Tensor<T> head_w, head_b;
};

namespace detail {

template <typename T>
std::int64_t fan_in_of(const Shape& shape) {
  if (shape.size() == 4) return shape[2] * shape[0] * shape[1];  // [k,k,cin,cout]
  if (shape.size() == 2) return shape[0];                        // [cin, cout]
  return 1;
}

template <typename T>
ParamInit<T> make_initializer(InitScheme scheme, RandomStream& rng, bool in_residual_branch) {
  return [scheme, &rng, in_residual_branch](const Shape& shape, ParamRole role) -> Tensor<T> {
    switch (role) {
      case ParamRole::bias:
      case ParamRole::ln_bias:
      case ParamRole::log_scale:
        return Tensor<T>::zeros(shape);
      case ParamRole::ln_gain:
        return scheme == InitScheme::zero_layernorm ? Tensor<T>::zeros(shape)
                                                    : Tensor<T>::ones(shape);
      case ParamRole::weight: {
        std::vector<T> v(shape_numel(shape));
        if (scheme == InitScheme::trunc_normal) {
          for (auto& x : v) x = static_cast<T>(rng.truncated_normal(0.0, kTruncNormalStd));
        } else {
          const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in_of<T>(shape)));
          for (auto& x : v) x = static_cast<T>(rng.normal(0.0, std_dev));
        }
        if (scheme == InitScheme::weight_rescale && in_residual_branch) {
          for (auto& x : v) x *= static_cast<T>(kWeightRescaleFactor);
        }
        return Tensor<T>::from_data(shape, std::move(v));
      }
    }
    throw ConfigError("initializer: unknown parameter role");
  };
}

}  // namespace detail

/// Creates and initializes the full parameter tree. Deterministic per seed.
template <typename T>
ModelParams<T> build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RandomStream rng(seed);
  // Layer-internal weights sit on residual branches; the extractor, samplers
  // and head do not.
  ParamInit<T> base_init = detail::make_initializer<T>(cfg.init_scheme, rng, false);
  ParamInit<T> layer_init = detail::make_initializer<T>(cfg.init_scheme, rng, true);

  ModelParams<T> m;
  m.shallow_w = base_init({3, 3, cfg.image_channels, cfg.channels}, ParamRole::weight);
  m.shallow_b = base_init({cfg.channels}, ParamRole::bias);

  std::int64_t global_layer = 0;
  for (std::int64_t sp = 0; sp < cfg.n_body_stages(); ++sp) {
    const FifmConfig lc = cfg.layer_config(sp);
    std::vector<LayerParams<T>> layers;
    layers.reserve(cfg.layers_per_stage);
    for (std::int64_t l = 0; l < cfg.layers_per_stage; ++l) {
      layers.push_back(build_layer_params<T>(lc, global_layer++, layer_init));
    }
    m.stages.push_back(std::move(layers));
  }

  if (cfg.arch == ModelArch::ushape) {
    for (int i = 0; i < 3; ++i) {
      const std::int64_t ci = cfg.channels << i;
      ConvBlockParams<T> down;
      down.w = base_init({3, 3, ci, 2 * ci}, ParamRole::weight);
      down.b = base_init({2 * ci}, ParamRole::bias);
      m.downs.push_back(std::move(down));
    }
    for (int i = 0; i < 3; ++i) {
      const std::int64_t clo = cfg.channels << (i + 1);
      ConvBlockParams<T> up;
      up.w = base_init({1, 1, clo, 2 * clo}, ParamRole::weight);
      up.b = base_init({2 * clo}, ParamRole::bias);
      m.ups.push_back(std::move(up));
      const std::int64_t ci = cfg.channels << i;
      ConvBlockParams<T> fuse;
      fuse.w = base_init({1, 1, 2 * ci, ci}, ParamRole::weight);
      fuse.b = base_init({ci}, ParamRole::bias);
      m.fuses.push_back(std::move(fuse));
    }
  }

  if (cfg.task == TaskHead::denoise) {
    m.head_w = base_init({1, 1, cfg.channels, cfg.image_channels}, ParamRole::weight);
    m.head_b = base_init({cfg.image_channels}, ParamRole::bias);
  } else {
    m.head_w = base_init({3, 3, cfg.channels, 4 * cfg.image_channels}, ParamRole::weight);
    m.head_b = base_init({4 * cfg.image_channels}, ParamRole::bias);
  }
  return m;
}

template <typename T, typename Fn>
void visit_model_params(ModelParams<T>& m, const ModelConfig& cfg, Fn&& fn) {
  fn("shallow.w", m.shallow_w);
  fn("shallow.b", m.shallow_b);
  auto stage_name = [&](std::int64_t sp) -> std::string {
    if (cfg.arch == ModelArch::columnar) return "body.s" + std::to_string(sp);
    if (sp < 3) return "enc" + std::to_string(sp);
    if (sp == 3) return "latent";
    return "dec" + std::to_string(6 - sp);
  };
  for (std::size_t sp = 0; sp < m.stages.size(); ++sp) {
    for (std::size_t l = 0; l < m.stages[sp].size(); ++l) {
      visit_layer_params(m.stages[sp][l],
                         stage_name(static_cast<std::int64_t>(sp)) + ".l" + std::to_string(l),
                         fn);
    }
  }
  for (std::size_t i = 0; i < m.downs.size(); ++i) {
    fn("down" + std::to_string(i) + ".w", m.downs[i].w);
    fn("down" + std::to_string(i) + ".b", m.downs[i].b);
  }
  for (std::size_t i = 0; i < m.ups.size(); ++i) {
    fn("up" + std::to_string(i) + ".w", m.ups[i].w);
    fn("up" + std::to_string(i) + ".b", m.ups[i].b);
    fn("fuse" + std::to_string(i) + ".w", m.fuses[i].w);
    fn("fuse" + std::to_string(i) + ".b", m.fuses[i].b);
  }
  fn("head.w", m.head_w);
  fn("head.b", m.head_b);
}

template <typename T>
std::int64_t parameter_count(ModelParams<T>& m, const ModelConfig& cfg) {
  std::int64_t n = 0;
  visit_model_params(m, cfg, [&](const std::string&, Tensor<T>& t) { n += t.numel(); });
  return n;
}

template <typename T>
void set_params_requires_grad(ModelParams<T>& m, const ModelConfig& cfg, bool value) {
  visit_model_params(m, cfg,
                     [&](const std::string&, Tensor<T>& t) { t.set_requires_grad(value); });
}

/// Forward-pass knobs used by diagnostics (skip-sensitivity probes).
struct ForwardOptions {
  std::vector<bool> zero_skips;  // ushape: suppress skip connection i
};

template <typename T>
Tensor<T> model_forward(const ModelConfig& cfg, ModelParams<T>& m, const Tensor<T>& x,
                        const ForwardOptions* opts = nullptr) {
  if (x.ndim() != 4 || x.dim(3) != cfg.image_channels) {
    throw ShapeError("forward: expected [B,H,W," + std::to_string(cfg.image_channels) +
                     "], got " + shape_to_string(x.shape()));
  }
  const std::int64_t d = cfg.required_divisor();
  if (x.dim(1) % d != 0 || x.dim(2) % d != 0) {
    throw ShapeError("forward: spatial dims of " + shape_to_string(x.shape()) +
                     " must be multiples of " + std::to_string(d) +
                     " (pad the input up front)");
  }

  Tensor<T> shallow = conv2d(x, m.shallow_w, m.shallow_b);
  Tensor<T> f = shallow;
  std::int64_t global_layer = 0;
  auto run_stage = [&](std::int64_t sp, Tensor<T> input) {
    const FifmConfig lc = cfg.layer_config(sp);
    Tensor<T> h = std::move(input);
    for (auto& lp : m.stages[sp]) {
      h = fractal_ir_layer(h, lc, lp, global_layer++);
    }
    return h;
  };

  if (cfg.arch == ModelArch::columnar) {
    for (std::int64_t sp = 0; sp < cfg.stages; ++sp) f = run_stage(sp, f);
    f = add(f, shallow);
  } else {
    std::vector<Tensor<T>> skips;
    for (std::int64_t level = 0; level < 3; ++level) {
      f = run_stage(level, f);
      skips.push_back(f);
      f = conv2d(f, m.downs[level].w, m.downs[level].b, /*stride=*/2);
    }
    f = run_stage(3, f);
    for (std::int64_t level = 2; level >= 0; --level) {
      f = conv2d(f, m.ups[level].w, m.ups[level].b);
      f = pixel_shuffle(f, 2);
      Tensor<T> skip = skips[level];
      if (opts && level < static_cast<std::int64_t>(opts->zero_skips.size()) &&
          opts->zero_skips[level]) {
        skip = Tensor<T>::zeros(skip.shape());
      }
      f = concat_last(f, skip);
      f = conv2d(f, m.fuses[level].w, m.fuses[level].b);
      f = run_stage(6 - level, f);
    }
    f = add(f, shallow);
  }

  if (cfg.task == TaskHead::denoise) {
    Tensor<T> out = conv2d(f, m.head_w, m.head_b);
    return add(out, x);  // global input-to-output residual
  }
  Tensor<T> out = conv2d(f, m.head_w, m.head_b);
  return pixel_shuffle(out, 2);
}

// ---------------------------------------------------------------------------
// Initialization statistics and conv substitution
// ---------------------------------------------------------------------------

struct TensorInitStats {
  std::string name;
  std::int64_t numel = 0;
  double mean = 0.0;
  double stddev = 0.0;
  std::int64_t fan_in = 0;
  double kaiming_target = 0.0;  // sqrt(2 / fan_in); 0 for non-weight tensors
  bool is_weight = false;
};

/// Empirical mean/std of every parameter tensor next to its analytic
/// fan-in-based target.
template <typename T>
std::vector<TensorInitStats> init_stats(ModelParams<T>& m, const ModelConfig& cfg) {
  std::vector<TensorInitStats> out;
  visit_model_params(m, cfg, [&](const std::string& name, Tensor<T>& t) {
    TensorInitStats s;
    s.name = name;
    s.numel = t.numel();
    double sum = 0.0;
    for (T v : t.values()) sum += static_cast<double>(v);
    s.mean = sum / static_cast<double>(t.numel());
    double ss = 0.0;
    for (T v : t.values()) {
      const double d = static_cast<double>(v) - s.mean;
      ss += d * d;
    }
    s.stddev = std::sqrt(ss / static_cast<double>(t.numel()));
    s.is_weight = t.shape().size() >= 2;
    if (s.is_weight) {
      s.fan_in = detail::fan_in_of<T>(t.shape());
      s.kaiming_target = std::sqrt(2.0 / static_cast<double>(s.fan_in));
    }
    out.push_back(std::move(s));
  });
  return out;
}

/// Rebuilds only the FFN spatial blocks for a different conv kind,
/// re-initializing just those tensors; every other parameter is carried over
/// unchanged. Substituting the already-configured kind returns the tree as is.
template <typename T>
ModelParams<T> substitute_conv_kind(const ModelParams<T>& params, const ModelConfig& cfg,
                                    ConvKind new_kind, std::uint64_t seed) {
  if (new_kind == cfg.conv_kind) return params;
  RandomStream rng(seed);
  ParamInit<T> init = detail::make_initializer<T>(cfg.init_scheme, rng, true);
  ModelConfig new_cfg = cfg;
  new_cfg.conv_kind = new_kind;
  ModelParams<T> out = params;
  for (std::int64_t sp = 0; sp < new_cfg.n_body_stages(); ++sp) {
    const FifmConfig lc = new_cfg.layer_config(sp);
    const std::int64_t E = lc.ffn_width();
    for (auto& lp : out.stages[sp]) {
      FfnParams<T> f;
      f.kind = new_kind;
      f.expand_w = lp.ffn.expand_w;
      f.expand_b = lp.ffn.expand_b;
      f.project_w = lp.ffn.project_w;
      f.project_b = lp.ffn.project_b;
      switch (new_kind) {
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
      lp.ffn = std::move(f);
    }
  }
  return out;
}

/// Parameter count of one FFN spatial block at operating width `width`.
inline std::int64_t conv_block_param_count(ConvKind kind, std::int64_t width) {
  switch (kind) {
    case ConvKind::conv1:
      return 9 * width * width + width;
    case ConvKind::linear:
      return width * width + width;
    case ConvKind::conv3: {
      const std::int64_t q = width / 4;
      return (width * q + q) + (9 * q * q + q) + (q * width + width);
    }
  }
  throw ConfigError("conv_block_param_count: unknown conv kind");
}

}  // namespace fir
