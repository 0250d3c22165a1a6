#include "fir/analysis.hpp"

#include <cmath>
#include <sstream>

#include "fir/gradcheck.hpp"

namespace fir {

AttnMethod attn_method_from_string(const std::string& s) {
  if (s == "global") return AttnMethod::global_attn;
  if (s == "window_p") return AttnMethod::window_p;
  if (s == "window_8P") return AttnMethod::window_8p;
  if (s == "fractal") return AttnMethod::fractal;
  throw ConfigError("unknown attention method \"" + s +
                    "\" (expected global, window_p, window_8P or fractal)");
}

std::string attn_method_name(AttnMethod m) {
  switch (m) {
    case AttnMethod::global_attn:
      return "global";
    case AttnMethod::window_p:
      return "window_p";
    case AttnMethod::window_8p:
      return "window_8P";
    case AttnMethod::fractal:
      return "fractal";
  }
  throw ConfigError("unknown attention method");
}

ComplexityReport analytic_complexity(AttnMethod method, const ComplexityDims& d) {
  d.validate();
  const std::int64_t B = d.B, H = d.H, W = d.W, C = d.C, h = d.heads, p = d.p, s = d.s;
  const std::int64_t gamma = d.gamma;
  const std::int64_t HW = H * W;
  const std::int64_t mac = flop_cost::kMac;

  ComplexityReport r;
  r.method = method;
  r.dims = d;
  switch (method) {
    case AttnMethod::global_attn:
      r.time_projection_qkvo = mac * 4 * B * HW * C * C;
      r.time_ffn = mac * 2 * gamma * B * HW * C * C;
      r.time_attention = mac * 2 * B * HW * HW * C;
      r.space_values = 4 * B * HW * C + B * HW * HW * h;
      r.rf_bound = std::max(H, W);
      break;
    case AttnMethod::window_p:
      r.time_projection_qkvo = mac * 4 * B * HW * C * C;
      r.time_ffn = mac * 2 * gamma * B * HW * C * C;
      r.time_attention = mac * 2 * B * HW * p * p * C;
      r.space_values = 4 * B * HW * C + B * HW * h * p * p;
      r.rf_bound = 2 * p;
      break;
    case AttnMethod::window_8p:
      r.time_projection_qkvo = mac * 4 * B * HW * C * C;
      r.time_ffn = mac * 2 * gamma * B * HW * C * C;
      r.time_attention = mac * 128 * B * HW * p * p * s * s * C;
      r.space_values = 4 * B * HW * C + 64 * B * HW * h * p * p * s * s;
      r.rf_bound = 16 * d.P();
      break;
    case AttnMethod::fractal:
      // Projections: two q/k pairs at half width, two value projections and
      // one output projection, all dense in C.
      r.time_projection_qkvo = mac * 5 * B * HW * C * C;
      r.time_ffn = mac * 2 * gamma * B * HW * C * C;
      // (3/2) * B*HW*(p^2 + s^2)*C multiply-accumulates; exact as FLOPs.
      r.time_attention = 3 * B * HW * (p * p + s * s) * C;
      r.omitted_small_term = mac * 9 * gamma * B * HW * C;
      r.space_values = 3 * B * HW * C + B * HW * h * std::max(p * p, s * s);
      r.rf_bound = 16 * d.P();
      break;
  }
  return r;
}

std::string ComplexityReport::to_json() const {
  std::ostringstream os;
  os << "{\"method\":\"" << attn_method_name(method) << "\","
     << "\"dims\":{\"B\":" << dims.B << ",\"H\":" << dims.H << ",\"W\":" << dims.W
     << ",\"C\":" << dims.C << ",\"heads\":" << dims.heads << ",\"p\":" << dims.p
     << ",\"s\":" << dims.s << ",\"gamma\":" << dims.gamma << "},"
     << "\"time_flops\":" << time_total() << ","
     << "\"time_attention_flops\":" << time_attention << ","
     << "\"time_projection_flops\":" << time_projection_qkvo << ","
     << "\"time_ffn_flops\":" << time_ffn << ","
     << "\"omitted_small_term_flops\":" << omitted_small_term << ","
     << "\"space_values\":" << space_values << ","
     << "\"rf_bound\":" << rf_bound << "}";
  return os.str();
}

namespace {

ParamInit<double> probe_initializer(RandomStream& rng) {
  return [&rng](const Shape& shape, ParamRole role) -> Tensor<double> {
    switch (role) {
      case ParamRole::ln_gain:
        return Tensor<double>::ones(shape);
      case ParamRole::ln_bias:
      case ParamRole::log_scale:
        return Tensor<double>::zeros(shape);
      case ParamRole::bias: {
        // Nonzero biases keep softmax rows generic.
        return Tensor<double>::randn(shape, rng, 0.05);
      }
      case ParamRole::weight: {
        const double fan_in = static_cast<double>(detail::fan_in_of<double>(shape));
        return Tensor<double>::randn(shape, rng, std::sqrt(2.0 / fan_in));
      }
    }
    throw ConfigError("probe initializer: unknown role");
  };
}

template <typename T>
ParamInit<T> flops_initializer(RandomStream& rng) {
  return [&rng](const Shape& shape, ParamRole role) -> Tensor<T> {
    if (role == ParamRole::ln_gain) return Tensor<T>::ones(shape);
    if (role == ParamRole::weight) return Tensor<T>::randn(shape, rng, T(0.05));
    return Tensor<T>::zeros(shape);
  };
}

}  // namespace

FlopCount measure_fifm_att_flops(const FifmConfig& cfg, std::int64_t B, std::int64_t H,
                                 std::int64_t W, std::uint64_t seed) {
  cfg.validate();
  RandomStream rng(seed ^ 0xf10c5u);
  ParamInit<float> init = flops_initializer<float>(rng);
  LayerParams<float> params = build_layer_params<float>(cfg, 0, init);
  Tensor32 x = Tensor32::randn({B, H, W, cfg.channels}, rng);
  NoGradGuard no_grad;
  return flop_count_empirical([&] {
    fifm_att(x, cfg, params, layer_att_mode(cfg.variant, 0));
  });
}

FlopCount measure_layer_flops(const FifmConfig& cfg, std::int64_t B, std::int64_t H,
                              std::int64_t W, std::uint64_t seed) {
  cfg.validate();
  RandomStream rng(seed ^ 0xf10c5u);
  ParamInit<float> init = flops_initializer<float>(rng);
  LayerParams<float> params = build_layer_params<float>(cfg, 0, init);
  Tensor32 x = Tensor32::randn({B, H, W, cfg.channels}, rng);
  NoGradGuard no_grad;
  return flop_count_empirical([&] { fractal_ir_layer(x, cfg, params, 0); });
}

RfProbeResult receptive_field_probe(ProbeStack stack, int n_layers, const FifmConfig& cfg,
                                    std::int64_t H, std::int64_t W, std::int64_t py,
                                    std::int64_t px, std::uint64_t seed) {
  cfg.validate();
  if (n_layers < 1) throw ConfigError("receptive_field_probe: need at least one layer");
  if (py < 0 || py >= H || px < 0 || px >= W) {
    throw ConfigError("receptive_field_probe: probe pixel out of bounds");
  }
  RandomStream rng(seed ^ 0x9e3779b9u);
  ParamInit<double> init = probe_initializer(rng);

  Tensor64 x = Tensor64::randn({1, H, W, cfg.channels}, rng);
  x.set_requires_grad(true);

  Tensor64 f = x;
  for (int l = 0; l < n_layers; ++l) {
    switch (stack) {
      case ProbeStack::l1_attention: {
        FifmConfig c1 = cfg;
        c1.variant = LayerVariant::v1;  // full-width q/k, single attention
        LayerParams<double> lp = build_layer_params<double>(c1, /*layer_index=*/0, init);
        f = fifm_att(f, c1, lp, AttMode::l1_only);
        break;
      }
      case ProbeStack::fifm_att: {
        LayerParams<double> lp = build_layer_params<double>(cfg, 0, init);
        f = fifm_att(f, cfg, lp, layer_att_mode(cfg.variant, 0));
        break;
      }
      case ProbeStack::full_layers: {
        LayerParams<double> lp = build_layer_params<double>(cfg, l, init);
        f = fractal_ir_layer(f, cfg, lp, l);
        break;
      }
    }
  }

  // Channel-summed output at the probe pixel, selected through a mask so the
  // whole path stays on the tape.
  std::vector<double> mask_values(f.numel(), 0.0);
  const std::int64_t C = f.dim(3);
  for (std::int64_t c = 0; c < C; ++c) {
    mask_values[((0 * H + py) * W + px) * C + c] = 1.0;
  }
  Tensor64 mask = Tensor64::from_data(f.shape(), std::move(mask_values));
  Tensor64 loss = sum_all(mul(f, mask));
  backward(loss);

  const auto& g = x.grad();
  RfProbeResult r;
  r.H = H;
  r.W = W;
  r.support.assign(H * W, 0);
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t xw = 0; xw < W; ++xw) {
      double m = 0.0;
      for (std::int64_t c = 0; c < cfg.channels; ++c) {
        m = std::max(m, std::abs(g[((0 * H + y) * W + xw) * cfg.channels + c]));
      }
      if (m > kRfSupportThreshold) {
        r.support[y * W + xw] = 1;
        ++r.count;
        if (r.count == 1) {
          r.y0 = r.y1 = y;
          r.x0 = r.x1 = xw;
        } else {
          r.y0 = std::min(r.y0, y);
          r.y1 = std::max(r.y1, y);
          r.x0 = std::min(r.x0, xw);
          r.x1 = std::max(r.x1, xw);
        }
      }
    }
  }
  return r;
}

}  // namespace fir
