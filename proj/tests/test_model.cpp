#include <cmath>
#include <set>

#include "doctest.h"
#include "fir/checkpoint.hpp"
#include "fir/model.hpp"

using namespace fir;

namespace {

ModelConfig toy_columnar() {
  ModelConfig cfg;
  cfg.arch = ModelArch::columnar;
  cfg.stages = 2;
  cfg.layers_per_stage = 2;
  cfg.channels = 16;
  cfg.image_channels = 1;
  cfg.heads = 2;
  cfg.ffn_ratio = 2;
  cfg.conv_kind = ConvKind::conv3;
  cfg.variant = LayerVariant::v3;
  cfg.task = TaskHead::denoise;
  cfg.geometry = {StageGeometry{2, 2}};
  return cfg;
}

ModelConfig toy_ushape() {
  ModelConfig cfg;
  cfg.arch = ModelArch::ushape;
  cfg.layers_per_stage = 1;
  cfg.channels = 16;
  cfg.image_channels = 1;
  cfg.heads = 2;
  cfg.ffn_ratio = 2;
  cfg.conv_kind = ConvKind::conv3;
  cfg.variant = LayerVariant::v3;
  cfg.task = TaskHead::denoise;
  cfg.geometry = {StageGeometry{2, 2}, StageGeometry{2, 2}, StageGeometry{2, 2},
                  StageGeometry{1, 2}};
  return cfg;
}

void zero_all(ModelParams<float>& m, const ModelConfig& cfg) {
  visit_model_params(m, cfg, [](const std::string&, Tensor32& t) {
    std::fill(t.values().begin(), t.values().end(), 0.0f);
  });
}

}  // namespace

TEST_CASE("parameter count matches the closed-form sum over declared shapes") {
  ModelConfig cfg = toy_columnar();
  ModelParams<float> m = build<float>(cfg, 0);

  // Independent hand sum. Widths: C=16, qk=8 (v3), E=2*16=32, bottleneck 8.
  const std::int64_t shallow = 3 * 3 * 1 * 16 + 16;
  const std::int64_t ln = 4 * 16;
  const std::int64_t l1_attn = (16 * 8 + 8) * 2 + (16 * 16 + 16);        // q,k at half width; v
  const std::int64_t l2_attn = (16 * 8 + 8) * 2 + (16 * 16 + 16) * 2;    // + output proj
  const std::int64_t ffn = (16 * 32 + 32) + (32 * 8 + 8) + (3 * 3 * 8 * 8 + 8) +
                           (8 * 32 + 32) + (32 * 16 + 16);
  const std::int64_t per_layer = ln + l1_attn + l2_attn + ffn;
  const std::int64_t head = 1 * 1 * 16 * 1 + 1;
  const std::int64_t want = shallow + 4 * per_layer + head;

  CHECK(parameter_count(m, cfg) == want);
}

TEST_CASE("zero_layernorm initializes every layer-norm tensor to zero") {
  ModelConfig cfg = toy_columnar();
  cfg.init_scheme = InitScheme::zero_layernorm;
  ModelParams<float> m = build<float>(cfg, 3);
  int ln_tensors = 0;
  visit_model_params(m, cfg, [&](const std::string& name, Tensor32& t) {
    if (name.find(".ln") != std::string::npos) {
      ++ln_tensors;
      for (float v : t.values()) CHECK(v == 0.0f);
    }
  });
  CHECK(ln_tensors == 4 * 4);
}

TEST_CASE("residual_rescale wires a 0.01 branch factor into the layer config") {
  ModelConfig cfg = toy_columnar();
  CHECK(cfg.layer_config(0).residual_scale == 1.0);
  cfg.init_scheme = InitScheme::residual_rescale;
  CHECK(cfg.layer_config(0).residual_scale == 0.01);
}

TEST_CASE("weight_rescale multiplies residual-branch weights by 0.1 at init") {
  ModelConfig cfg = toy_columnar();
  ModelParams<float> base = build<float>(cfg, 11);
  cfg.init_scheme = InitScheme::weight_rescale;
  ModelParams<float> rescaled = build<float>(cfg, 11);

  std::map<std::string, Tensor32> base_map;
  visit_model_params(base, toy_columnar(),
                     [&](const std::string& n, Tensor32& t) { base_map.emplace(n, t); });
  visit_model_params(rescaled, cfg, [&](const std::string& name, Tensor32& t) {
    const Tensor32& b = base_map.at(name);
    const bool is_layer_weight =
        name.find(".l") != std::string::npos && t.shape().size() >= 2;
    for (std::size_t i = 0; i < t.values().size(); ++i) {
      if (is_layer_weight) {
        CHECK(t.values()[i] == doctest::Approx(0.1f * b.values()[i]).epsilon(1e-6));
      } else {
        CHECK(t.values()[i] == b.values()[i]);
      }
    }
  });
}

TEST_CASE("trunc_normal: weights truncated at 2 sigma with the truncated-law std") {
  ModelConfig cfg = toy_columnar();
  cfg.init_scheme = InitScheme::trunc_normal;
  double ss = 0.0;
  std::int64_t n = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelParams<float> m = build<float>(cfg, seed);
    visit_model_params(m, cfg, [&](const std::string&, Tensor32& t) {
      if (t.shape().size() < 2) return;
      for (float v : t.values()) {
        CHECK(std::abs(v) <= 0.04f);  // hard truncation bound
        ss += static_cast<double>(v) * v;
        ++n;
      }
    });
  }
  const double std_dev = std::sqrt(ss / static_cast<double>(n));
  CHECK(std_dev >= 0.0155);
  CHECK(std_dev <= 0.0185);
}

TEST_CASE("zero-initialized body with the global residual is the identity (denoise)") {
  for (ModelConfig cfg : {toy_columnar(), toy_ushape()}) {
    ModelParams<float> m = build<float>(cfg, 0);
    zero_all(m, cfg);
    RandomStream rng(50);
    Tensor32 x = Tensor32::rand_uniform({1, 16, 16, 1}, rng, 0.0f, 1.0f);
    Tensor32 y = model_forward(cfg, m, x);
    CHECK(y.values() == x.values());
  }
}

TEST_CASE("sr2x head doubles the spatial extent") {
  ModelConfig cfg = toy_columnar();
  cfg.task = TaskHead::sr2x;
  ModelParams<float> m = build<float>(cfg, 1);
  RandomStream rng(51);
  Tensor32 x = Tensor32::rand_uniform({1, 8, 8, 1}, rng, 0.0f, 1.0f);
  Tensor32 y = model_forward(cfg, m, x);
  CHECK(y.shape() == Shape{1, 16, 16, 1});
}

TEST_CASE("forward is deterministic") {
  ModelConfig cfg = toy_ushape();
  ModelParams<float> m = build<float>(cfg, 2);
  RandomStream rng(52);
  Tensor32 x = Tensor32::rand_uniform({1, 16, 16, 1}, rng, 0.0f, 1.0f);
  Tensor32 a = model_forward(cfg, m, x);
  Tensor32 b = model_forward(cfg, m, x);
  CHECK(a.values() == b.values());
}

TEST_CASE("build is deterministic per seed and differs across seeds") {
  ModelConfig cfg = toy_columnar();
  ModelParams<float> a = build<float>(cfg, 7);
  ModelParams<float> b = build<float>(cfg, 7);
  ModelParams<float> c = build<float>(cfg, 8);
  CHECK(a.shallow_w.values() == b.shallow_w.values());
  CHECK(a.head_w.values() == b.head_w.values());
  CHECK(a.shallow_w.values() != c.shallow_w.values());
}

TEST_CASE("init_stats: fan-in arithmetic for dense and bottleneck convolutions") {
  // Operating width 64: C=32 with expansion ratio 2.
  ModelConfig cfg = toy_columnar();
  cfg.stages = 1;
  cfg.layers_per_stage = 1;
  cfg.channels = 32;
  cfg.conv_kind = ConvKind::conv1;
  ModelParams<float> dense = build<float>(cfg, 0);
  const auto dense_stats = init_stats(dense, cfg);

  bool found_dense = false;
  for (const auto& s : dense_stats) {
    if (s.name == "body.s0.l0.ffn.s1.w") {
      found_dense = true;
      CHECK(s.fan_in == 64 * 9);  // 576
      CHECK(s.kaiming_target == doctest::Approx(std::sqrt(2.0 / 576.0)).epsilon(1e-12));
    }
  }
  CHECK(found_dense);

  cfg.conv_kind = ConvKind::conv3;
  ModelParams<float> bottleneck = build<float>(cfg, 0);
  bool found_bottleneck = false;
  for (const auto& s : init_stats(bottleneck, cfg)) {
    if (s.name == "body.s0.l0.ffn.s1.w") {
      found_bottleneck = true;
      CHECK(s.fan_in == 64);
      // Analytic std ratio between the dense 3x3 and the first 1x1: 3.
      CHECK(std::sqrt(2.0 / 64.0) / std::sqrt(2.0 / 576.0) == doctest::Approx(3.0));
    }
  }
  CHECK(found_bottleneck);
}

TEST_CASE("kaiming init: empirical std within 5% of sqrt(2/fan_in), 10-seed pool") {
  ModelConfig cfg = toy_columnar();
  std::map<std::string, std::pair<double, std::int64_t>> pooled;  // sum of squares, count
  std::map<std::string, double> target;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelParams<float> m = build<float>(cfg, seed);
    for (const auto& s : init_stats(m, cfg)) {
      if (!s.is_weight) continue;
      target[s.name] = s.kaiming_target;
      auto& acc = pooled[s.name];
      // Reconstruct the sum of squares from stddev and mean.
      acc.first += (s.stddev * s.stddev + s.mean * s.mean) * static_cast<double>(s.numel);
      acc.second += s.numel;
    }
  }
  for (const auto& [name, acc] : pooled) {
    const double emp = std::sqrt(acc.first / static_cast<double>(acc.second));
    INFO(name, " empirical=", emp, " target=", target[name]);
    CHECK(std::abs(emp - target[name]) <= 0.05 * target[name]);
  }
}

TEST_CASE("substitute_conv_kind: identity substitution returns the tree unchanged") {
  ModelConfig cfg = toy_columnar();
  ModelParams<float> m = build<float>(cfg, 5);
  ModelParams<float> same = substitute_conv_kind(m, cfg, ConvKind::conv3, 99);
  CHECK(same.stages[0][0].ffn.s1_w.values() == m.stages[0][0].ffn.s1_w.values());
  CHECK(same.stages[0][0].ffn.s2_w.values() == m.stages[0][0].ffn.s2_w.values());
}

TEST_CASE("substitute_conv_kind: block parameter counts at width 64") {
  CHECK(conv_block_param_count(ConvKind::conv1, 64) == 36928);
  CHECK(conv_block_param_count(ConvKind::linear, 64) == 64 * 64 + 64);
  // Bottleneck: 1x1 down (1,040) + 3x3 core (2,320) + 1x1 up (1,088).
  CHECK(conv_block_param_count(ConvKind::conv3, 64) == 1040 + 2320 + 1088);
  CHECK(conv_block_param_count(ConvKind::conv3, 64) < conv_block_param_count(ConvKind::conv1, 64));
}

TEST_CASE("substitute_conv_kind: rebuilds only the spatial blocks, preserves the rest") {
  ModelConfig cfg = toy_columnar();
  cfg.channels = 32;  // FFN width 64
  cfg.stages = 1;
  cfg.layers_per_stage = 1;
  cfg.conv_kind = ConvKind::conv1;
  ModelParams<float> m = build<float>(cfg, 5);

  auto block_count = [](const FfnParams<float>& f) {
    std::int64_t n = f.s1_w.numel() + f.s1_b.numel();
    if (f.s2_w.defined()) n += f.s2_w.numel() + f.s2_b.numel() + f.s3_w.numel() + f.s3_b.numel();
    return n;
  };
  CHECK(block_count(m.stages[0][0].ffn) == 36928);

  ModelParams<float> swapped = substitute_conv_kind(m, cfg, ConvKind::conv3, 17);
  CHECK(block_count(swapped.stages[0][0].ffn) == 4448);
  CHECK(swapped.stages[0][0].ffn.kind == ConvKind::conv3);
  // Everything outside the spatial block is carried over bit-exact.
  CHECK(swapped.shallow_w.values() == m.shallow_w.values());
  CHECK(swapped.stages[0][0].ffn.expand_w.values() == m.stages[0][0].ffn.expand_w.values());
  CHECK(swapped.stages[0][0].ffn.project_w.values() == m.stages[0][0].ffn.project_w.values());
  CHECK(swapped.stages[0][0].l2_attn->wo.values() == m.stages[0][0].l2_attn->wo.values());

  ModelParams<float> linear = substitute_conv_kind(m, cfg, ConvKind::linear, 17);
  CHECK(block_count(linear.stages[0][0].ffn) == 64 * 64 + 64);
}

TEST_CASE("ushape: disabling a skip connection changes the output") {
  ModelConfig cfg = toy_ushape();
  ModelParams<float> m = build<float>(cfg, 4);
  RandomStream rng(53);
  Tensor32 x = Tensor32::rand_uniform({1, 16, 16, 1}, rng, 0.0f, 1.0f);
  Tensor32 base = model_forward(cfg, m, x);
  for (int level = 0; level < 3; ++level) {
    ForwardOptions opts;
    opts.zero_skips.assign(3, false);
    opts.zero_skips[level] = true;
    Tensor32 cut = model_forward(cfg, m, x, &opts);
    CHECK(cut.values() != base.values());
  }
}

TEST_CASE("checkpoint key set is stable across rebuilds of the same config") {
  for (ModelConfig cfg : {toy_columnar(), toy_ushape()}) {
    ModelParams<float> a = build<float>(cfg, 1);
    ModelParams<float> b = build<float>(cfg, 99);
    std::set<std::string> ka, kb;
    visit_model_params(a, cfg, [&](const std::string& n, Tensor32&) { ka.insert(n); });
    visit_model_params(b, cfg, [&](const std::string& n, Tensor32&) { kb.insert(n); });
    CHECK(ka == kb);
    CHECK(ka.size() > 10);
    CHECK(ka.count("shallow.w") == 1);
    CHECK(ka.count("head.w") == 1);
  }
}

TEST_CASE("model validation rejects bad geometry and head splits") {
  ModelConfig cfg = toy_columnar();
  cfg.geometry = {StageGeometry{2, 2}, StageGeometry{2, 2}, StageGeometry{2, 2}};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);  // 3 entries for 2 stages
  cfg = toy_columnar();
  cfg.heads = 3;  // qk width 8 not divisible
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_columnar();
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.required_divisor() == 4);
  CHECK(toy_ushape().required_divisor() == 16);
}

TEST_CASE("forward rejects inputs that do not tile the geometry") {
  ModelConfig cfg = toy_columnar();
  ModelParams<float> m = build<float>(cfg, 0);
  Tensor32 x = Tensor32::zeros({1, 10, 10, 1});
  CHECK_THROWS_AS(model_forward(cfg, m, x), ShapeError);
}
