#include <cmath>

#include "doctest.h"
#include "fir/analysis.hpp"

using namespace fir;

namespace {

FifmConfig probe_config(std::int64_t channels = 4, std::int64_t p = 2, std::int64_t s = 2) {
  FifmConfig cfg;
  cfg.p = p;
  cfg.s = s;
  cfg.channels = channels;
  cfg.heads = 2;
  cfg.ffn_ratio = 2;
  cfg.conv_kind = ConvKind::conv1;
  cfg.variant = LayerVariant::v3;
  return cfg;
}

}  // namespace

TEST_CASE("analytic: enlarging the window from 8 to 32 costs 16x in the attention term") {
  ComplexityDims d8{1, 64, 64, 16, 2, 8, 1, 2};
  ComplexityDims d32{1, 64, 64, 16, 2, 32, 1, 2};
  const auto r8 = analytic_complexity(AttnMethod::window_p, d8);
  const auto r32 = analytic_complexity(AttnMethod::window_p, d32);
  CHECK(r32.time_attention == 16 * r8.time_attention);
}

TEST_CASE("analytic: fractal receptive-field bound is 16P") {
  ComplexityDims d{1, 16, 16, 8, 2, 2, 2, 2};
  const auto r = analytic_complexity(AttnMethod::fractal, d);
  CHECK(r.rf_bound == 64);  // 16 * (2*2)
  const auto w = analytic_complexity(AttnMethod::window_8p, d);
  CHECK(w.rf_bound == 64);
  const auto wp = analytic_complexity(AttnMethod::window_p, d);
  CHECK(wp.rf_bound == 4);
}

TEST_CASE("analytic: global and window space coincide when the window covers the image") {
  // HW = p^2 means a single window.
  ComplexityDims d{1, 4, 4, 8, 2, 4, 1, 2};
  const auto g = analytic_complexity(AttnMethod::global_attn, d);
  const auto w = analytic_complexity(AttnMethod::window_p, d);
  CHECK(g.space_values == w.space_values);
}

TEST_CASE("analytic: fractal space counts input, q, k, v and the larger score map") {
  ComplexityDims d{2, 8, 8, 16, 4, 2, 3, 2};
  const auto r = analytic_complexity(AttnMethod::fractal, d);
  CHECK(r.space_values == 3 * 2 * 64 * 16 + 2 * 64 * 4 * 9);
  CHECK(r.omitted_small_term == 2 * 9 * 2 * 2 * 64 * 16);
}

TEST_CASE("analytic: unknown method name is a configuration error") {
  CHECK_THROWS_AS(attn_method_from_string("banana"), ConfigError);
  CHECK(attn_method_from_string("fractal") == AttnMethod::fractal);
  CHECK(attn_method_name(AttnMethod::window_8p) == "window_8P");
}

TEST_CASE("flop counter: matmul follows the 2mkn contract") {
  RandomStream rng(60);
  Tensor32 a = Tensor32::randn({3, 4}, rng);
  Tensor32 b = Tensor32::randn({4, 5}, rng);
  const FlopCount c = flop_count_empirical([&] { matmul(a, b); });
  CHECK(c.matmul == 2 * 3 * 4 * 5);
  CHECK(c.conv == 0);
}

TEST_CASE("flop counter: conv2d counts full kernel taps") {
  RandomStream rng(61);
  Tensor32 x = Tensor32::randn({1, 4, 4, 2}, rng);
  Tensor32 w = Tensor32::randn({3, 3, 2, 5}, rng);
  Tensor32 b = Tensor32::randn({5}, rng);
  const FlopCount c = flop_count_empirical([&] { conv2d(x, w, b); });
  CHECK(c.conv == 2 * 16 * 9 * 2 * 5);
  CHECK(c.elementwise == 16 * 5);  // bias adds
}

TEST_CASE("fifm_att FLOPs equal the analytic attention+projection terms exactly") {
  struct Case {
    std::int64_t B, H, W, C, heads, p, s;
  };
  for (const Case& tc : {Case{1, 8, 8, 8, 2, 2, 2}, Case{1, 16, 16, 16, 4, 2, 2},
                         Case{2, 8, 16, 8, 2, 2, 2}, Case{1, 12, 12, 6, 3, 2, 3}}) {
    FifmConfig cfg;
    cfg.p = tc.p;
    cfg.s = tc.s;
    cfg.channels = tc.C;
    cfg.heads = tc.heads;
    cfg.ffn_ratio = 2;
    cfg.variant = LayerVariant::v3;
    cfg.conv_kind = ConvKind::linear;
    const FlopCount measured = measure_fifm_att_flops(cfg, tc.B, tc.H, tc.W);

    ComplexityDims d{tc.B, tc.H, tc.W, tc.C, tc.heads, tc.p, tc.s, 2};
    const ComplexityReport r = analytic_complexity(AttnMethod::fractal, d);
    INFO("B=", tc.B, " H=", tc.H, " W=", tc.W, " C=", tc.C);
    CHECK(measured.matmul == r.time_attention + r.time_projection_qkvo);
    CHECK(measured.conv == 0);
  }
}

TEST_CASE("fifm_att FLOPs scale linearly in the spatial extent") {
  FifmConfig cfg = probe_config(8);
  const FlopCount base = measure_fifm_att_flops(cfg, 1, 8, 8);
  const FlopCount doubled = measure_fifm_att_flops(cfg, 1, 16, 8);
  CHECK(doubled.matmul == 2 * base.matmul);
  CHECK(doubled.total() == 2 * base.total());
}

TEST_CASE("full layer adds the FFN conv terms on top of the attention terms") {
  FifmConfig cfg = probe_config(8);
  cfg.conv_kind = ConvKind::linear;
  const FlopCount att = measure_fifm_att_flops(cfg, 1, 8, 8);
  const FlopCount layer = measure_layer_flops(cfg, 1, 8, 8);
  // Pointwise FFN of ratio gamma: expand + spatial 1x1 + project.
  const std::int64_t E = cfg.ffn_width();
  const std::int64_t ffn_conv = 2 * 64 * (8 * E + E * E + E * 8);
  CHECK(layer.matmul == att.matmul);
  CHECK(layer.conv == ffn_conv);
}

TEST_CASE("rf probe: window-only attention stays in its window at any depth") {
  FifmConfig cfg = probe_config();
  for (int depth : {1, 2, 3}) {
    const RfProbeResult r =
        receptive_field_probe(ProbeStack::l1_attention, depth, cfg, 8, 8, 5, 6);
    // Pixel (5,6) lives in the p=2 window spanning rows 4..5, cols 6..7.
    CHECK(r.count == 4);
    CHECK(r.y0 == 4);
    CHECK(r.y1 == 5);
    CHECK(r.x0 == 6);
    CHECK(r.x1 == 7);
  }
}

TEST_CASE("rf probe: one fractal attention block covers exactly its region") {
  FifmConfig cfg = probe_config();
  const RfProbeResult r = receptive_field_probe(ProbeStack::fifm_att, 1, cfg, 8, 8, 5, 6);
  // P = 4; pixel (5,6) sits in the region rows 4..7, cols 4..7.
  CHECK(r.count == 16);
  CHECK(r.y0 == 4);
  CHECK(r.y1 == 7);
  CHECK(r.x0 == 4);
  CHECK(r.x1 == 7);
}

TEST_CASE("rf probe: support grows with depth and halos, within the analytic bound") {
  FifmConfig cfg = probe_config();
  const std::int64_t P = cfg.p * cfg.s;
  const RfProbeResult one_att = receptive_field_probe(ProbeStack::fifm_att, 1, cfg, 16, 16, 7, 7);
  const RfProbeResult one_full =
      receptive_field_probe(ProbeStack::full_layers, 1, cfg, 16, 16, 7, 7);
  const RfProbeResult two_full =
      receptive_field_probe(ProbeStack::full_layers, 2, cfg, 16, 16, 7, 7);

  // Nested supports.
  for (std::int64_t i = 0; i < 16 * 16; ++i) {
    if (one_att.support[i]) CHECK(one_full.support[i]);
    if (one_full.support[i]) CHECK(two_full.support[i]);
  }
  CHECK(one_att.bbox_side() <= one_full.bbox_side());
  CHECK(one_full.bbox_side() <= two_full.bbox_side());
  CHECK(two_full.bbox_side() <= 16 * P);
  CHECK(two_full.bbox_side() > 2 * cfg.p);
}

TEST_CASE("complexity report serializes with the declared keys") {
  ComplexityDims d{1, 8, 8, 8, 2, 2, 2, 2};
  const std::string json = analytic_complexity(AttnMethod::fractal, d).to_json();
  for (const char* key : {"\"method\"", "\"dims\"", "\"time_flops\"", "\"space_values\"",
                          "\"rf_bound\"", "\"omitted_small_term_flops\""}) {
    CHECK(json.find(key) != std::string::npos);
  }
}
