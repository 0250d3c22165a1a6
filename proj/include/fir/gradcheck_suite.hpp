#pragma once

#include <string>
#include <vector>

#include "fir/attention.hpp"
#include "fir/conv.hpp"
#include "fir/fifm.hpp"
#include "fir/gradcheck.hpp"
#include "fir/tensor.hpp"

namespace fir {

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

inline constexpr double kOpGradTol = 1e-5;
inline constexpr double kLayerGradTol = 1e-4;

/// Finite-difference verification of every differentiable operation and of
/// the composite attention/FFN/layer blocks, in 64-bit. Returns one result
/// per case; smooth test points avoid the kinks of abs/clamp.
inline std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 7) {
  std::vector<GradCheckCase> results;
  RandomStream rng(seed);

  auto check = [&](const std::string& name, double tol,
                   const std::function<Tensor64()>& fn, std::vector<Tensor64> wrt) {
    GradCheckCase c;
    c.name = name;
    c.tolerance = tol;
    c.max_rel_err = finite_diff_check<double>(fn, std::move(wrt), 1e-4);
    c.pass = c.max_rel_err <= tol;
    results.push_back(c);
  };

  // Elementwise and structural ops.
  {
    Tensor64 a = Tensor64::randn({3, 4}, rng);
    Tensor64 b = Tensor64::randn({3, 4}, rng);
    check("add", kOpGradTol, [=] { return sum_all(mul(add(a, b), b)); }, {a, b});
    check("sub", kOpGradTol, [=] { return sum_all(mul(sub(a, b), a)); }, {a, b});
    check("mul", kOpGradTol, [=] { return sum_all(mul(a, b)); }, {a, b});
    check("neg_scale", kOpGradTol, [=] { return sum_all(neg(scale(a, 1.7))); }, {a});
    check("mean_all", kOpGradTol, [=] { return mean_all(mul(a, a)); }, {a});
  }
  {
    Tensor64 a = Tensor64::rand_uniform({3, 4}, rng, 0.5, 2.0);
    Tensor64 b = Tensor64::rand_uniform({3, 4}, rng, 0.5, 2.0);
    check("div", kOpGradTol, [=] { return sum_all(div(a, b)); }, {a, b});
    check("sqrt", kOpGradTol, [=] { return sum_all(fir::sqrt(a)); }, {a});
    check("exp", kOpGradTol, [=] { return sum_all(fir::exp(scale(a, 0.3))); }, {a});
    // Points sit well away from the abs kink and the clamp boundary.
    check("abs", kOpGradTol, [=] { return sum_all(fir::abs(a)); }, {a});
    check("clamp_max", kOpGradTol, [=] { return sum_all(clamp_max(a, 1.0)); }, {a});
  }
  {
    Tensor64 a = Tensor64::randn({2, 3, 4}, rng);
    Tensor64 bias = Tensor64::randn({4}, rng);
    Tensor64 v = Tensor64::rand_uniform({3}, rng, 0.5, 1.5);
    check("gelu", kOpGradTol, [=] { return sum_all(gelu(a)); }, {a});
    check("add_rowbias", kOpGradTol,
          [=] { return sum_all(mul(add_rowbias(a, bias), a)); }, {a, bias});
    check("scale_axis", kOpGradTol,
          [=] { return sum_all(mul(scale_axis(a, v, 1), a)); }, {a, v});
    check("permute_reshape", kOpGradTol,
          [=] {
            Tensor64 t = permute(a, {2, 0, 1});
            return sum_all(mul(reshape(t, {4, 6}), reshape(a, {4, 6})));
          },
          {a});
  }
  {
    Tensor64 a = Tensor64::randn({2, 3}, rng);
    Tensor64 b = Tensor64::randn({2, 2}, rng);
    check("concat_last", kOpGradTol,
          [=] {
            Tensor64 c = concat_last(a, b);
            return sum_all(mul(c, c));
          },
          {a, b});
  }

  // Matrix products.
  {
    Tensor64 a = Tensor64::randn({2, 3, 4}, rng);
    Tensor64 b = Tensor64::randn({2, 4, 2}, rng);
    Tensor64 bt = Tensor64::randn({2, 2, 4}, rng);
    check("matmul", kOpGradTol, [=] { return sum_all(matmul(a, b)); }, {a, b});
    check("matmul_nt", kOpGradTol, [=] { return sum_all(matmul_nt(a, bt)); }, {a, bt});
  }

  // Normalizations.
  {
    Tensor64 a = Tensor64::randn({3, 5}, rng);
    Tensor64 gain = Tensor64::rand_uniform({5}, rng, 0.5, 1.5);
    Tensor64 bias = Tensor64::randn({5}, rng);
    check("softmax_last", kOpGradTol,
          [=] {
            Tensor64 y = softmax_last(a);
            return sum_all(mul(y, a));
          },
          {a});
    check("layer_norm", kOpGradTol,
          [=] {
            Tensor64 y = layer_norm(a, gain, bias);
            return sum_all(mul(y, y));
          },
          {a, gain, bias});
    check("l2_normalize_last", kOpGradTol,
          [=] {
            Tensor64 y = l2_normalize_last(a);
            return sum_all(mul(y, a));
          },
          {a});
  }

  // Convolutions and shuffles.
  {
    Tensor64 x = Tensor64::randn({1, 4, 4, 2}, rng);
    Tensor64 w3 = Tensor64::randn({3, 3, 2, 3}, rng, 0.4);
    Tensor64 w1 = Tensor64::randn({1, 1, 2, 3}, rng, 0.4);
    Tensor64 b = Tensor64::randn({3}, rng, 0.2);
    check("conv2d_k3_same", kOpGradTol,
          [=] { return sum_all(conv2d(x, w3, b)); }, {x, w3, b});
    check("conv2d_k1", kOpGradTol, [=] { return sum_all(conv2d(x, w1, b)); }, {x, w1, b});
    check("conv2d_k3_stride2", kOpGradTol,
          [=] { return sum_all(conv2d(x, w3, b, 2)); }, {x, w3, b});
    check("conv2d_k3_nopad", kOpGradTol,
          [=] { return sum_all(conv2d(x, w3, b, 1, Padding::none)); }, {x, w3, b});
  }
  {
    Tensor64 x = Tensor64::randn({1, 2, 2, 8}, rng);
    check("pixel_shuffle", kOpGradTol,
          [=] {
            Tensor64 y = pixel_shuffle(x, 2);
            return sum_all(mul(y, y));
          },
          {x});
    Tensor64 z = Tensor64::randn({1, 4, 4, 2}, rng);
    check("pixel_unshuffle", kOpGradTol,
          [=] {
            Tensor64 y = pixel_unshuffle(z, 2);
            return sum_all(mul(y, y));
          },
          {z});
  }

  // Attention blocks.
  auto attention_case = [&](const std::string& name, AttentionKind kind) {
    AttentionConfig acfg;
    acfg.heads = 2;
    acfg.model_dim = 4;
    acfg.qk_dim = 4;
    acfg.kind = kind;
    acfg.cosine_scale = 5.0;
    ParamInit<double> init = [&rng](const Shape& shape, ParamRole role) {
      if (role == ParamRole::weight) return Tensor64::randn(shape, rng, 0.5);
      if (role == ParamRole::ln_gain) return Tensor64::ones(shape);
      return Tensor64::randn(shape, rng, 0.1);
    };
    AttentionParams<double> ap = build_attention_params<double>(acfg, init);
    Tensor64 x = Tensor64::randn({2, 4, 4}, rng);
    std::vector<Tensor64> wrt{x, ap.wq, ap.bq, ap.wk, ap.bk, ap.wv, ap.bv, ap.wo, ap.bo};
    if (ap.log_scale.defined()) wrt.push_back(ap.log_scale);
    check(name, kOpGradTol,
          [=] {
            Tensor64 y = mhsa(x, acfg, ap);
            return sum_all(mul(y, y));
          },
          wrt);
  };
  attention_case("mhsa_dot", AttentionKind::dot);
  attention_case("mhsa_cosine", AttentionKind::cosine);

  // Fractal attention, FFN variants and the full layer at tiny dims.
  {
    FifmConfig cfg;
    cfg.p = 2;
    cfg.s = 2;
    cfg.channels = 4;
    cfg.heads = 2;
    cfg.ffn_ratio = 2;
    cfg.variant = LayerVariant::v3;
    ParamInit<double> init = [&rng](const Shape& shape, ParamRole role) {
      if (role == ParamRole::weight) return Tensor64::randn(shape, rng, 0.4);
      if (role == ParamRole::ln_gain) return Tensor64::ones(shape);
      return Tensor64::randn(shape, rng, 0.1);
    };
    for (ConvKind kind : {ConvKind::conv1, ConvKind::linear, ConvKind::conv3}) {
      FifmConfig ck = cfg;
      ck.conv_kind = kind;
      LayerParams<double> lp = build_layer_params<double>(ck, 0, init);
      Tensor64 x = Tensor64::randn({1, 4, 4, 4}, rng);
      std::vector<Tensor64> wrt{x};
      visit_layer_params(lp, "t", [&](const std::string&, Tensor64& t) { wrt.push_back(t); });
      const std::string kind_name =
          kind == ConvKind::conv1 ? "conv1" : (kind == ConvKind::linear ? "linear" : "conv3");
      if (kind == ConvKind::conv3) {
        check("fifm_att_v3", kLayerGradTol,
              [=] { return sum_all(fifm_att(x, ck, lp, AttMode::both)); }, wrt);
      }
      check("fifm_conv_" + kind_name, kLayerGradTol,
            [=] { return sum_all(fifm_conv(x, ck, lp.ffn)); }, wrt);
      check("fractal_ir_layer_" + kind_name, kLayerGradTol,
            [=] {
              Tensor64 y = fractal_ir_layer(x, ck, lp, 0);
              return sum_all(mul(y, y));
            },
            wrt);
    }
  }

  return results;
}

}  // namespace fir
