#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fir/checkpoint.hpp"
#include "fir/config.hpp"
#include "fir/data.hpp"
#include "fir/metrics.hpp"
#include "fir/schedule.hpp"
#include "fir/train.hpp"
#include "oracles.hpp"

using namespace fir;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
}

std::string toy_denoise_config_json(const std::string& suffix, std::int64_t total_iters,
                                    std::int64_t warmup = 5) {
  return std::string(R"({
    "task": "denoise",
    "noise_sigma": 0.098039215686,
    "dataset": {"n_train": 8, "n_val": 2, "image_size": 8, "seed": 3},
    "model": {"arch": "columnar", "stages": 1, "layers_per_stage": 1, "channels": 8,
              "heads": 2, "geometry": [{"p": 2, "s": 2}], "seed": 1},
    "optimizer": {"lr": 1e-3},
    "schedule": {"warmup_iters": )") +
         std::to_string(warmup) + ", \"total_iters\": " + std::to_string(total_iters) +
         R"(, "eval_interval": 5},
    "batch_size": 2,
    "checkpoint_path": ")" +
         tmp_path("ck_" + suffix + ".fir") + R"(",
    "metrics_path": ")" +
         tmp_path("m_" + suffix + ".csv") + R"("
  })";
}

}  // namespace

TEST_CASE("synth_dataset: zero noise makes input equal target") {
  DatasetSpec spec;
  spec.n_train = 2;
  spec.n_val = 1;
  spec.image_size = 8;
  SynthDataset ds = synth_dataset(spec, TaskHead::denoise, 0.0);
  CHECK(ds.train_inputs[0].values() == ds.train_targets[0].values());
  for (float v : ds.train_targets[0].values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("synth_dataset: noisy-input quality sits near the analytic level") {
  DatasetSpec spec;
  spec.n_train = 63;
  spec.n_val = 1;
  spec.image_size = 16;
  spec.seed = 5;
  const double sigma = 25.0 / 255.0;
  SynthDataset ds = synth_dataset(spec, TaskHead::denoise, sigma);
  double mean_psnr = 0.0;
  for (std::size_t i = 0; i < ds.train_inputs.size(); ++i) {
    mean_psnr += psnr(ds.train_inputs[i], ds.train_targets[i]);
  }
  mean_psnr += psnr(ds.val_inputs[0], ds.val_targets[0]);
  mean_psnr /= 64.0;
  const double analytic = 10.0 * std::log10(1.0 / (sigma * sigma));  // 20.17 dB
  CHECK(std::abs(mean_psnr - analytic) <= 0.5);
}

TEST_CASE("synth_dataset: bit-identical across runs with the same seed") {
  DatasetSpec spec;
  spec.n_train = 4;
  spec.n_val = 2;
  spec.image_size = 8;
  spec.seed = 11;
  SynthDataset a = synth_dataset(spec, TaskHead::denoise, 0.1);
  SynthDataset b = synth_dataset(spec, TaskHead::denoise, 0.1);
  for (std::size_t i = 0; i < a.train_inputs.size(); ++i) {
    CHECK(a.train_inputs[i].values() == b.train_inputs[i].values());
  }
  CHECK(a.val_targets[1].values() == b.val_targets[1].values());
}

TEST_CASE("synth_dataset: sr2x inputs are the 2x2 box means of the targets") {
  DatasetSpec spec;
  spec.n_train = 2;
  spec.n_val = 1;
  spec.image_size = 8;
  SynthDataset ds = synth_dataset(spec, TaskHead::sr2x, 0.0);
  CHECK(ds.train_inputs[0].shape() == Shape{4, 4, 1});
  CHECK(ds.train_inputs[0].values() == box_downsample2(ds.train_targets[0]).values());
}

TEST_CASE("warmup_lr: ramp endpoints, monotonicity and halvings") {
  ScheduleConfig s;
  s.warmup_iters = 100;
  s.total_iters = 400;
  const double base = 1e-3;
  CHECK(warmup_lr(0, base, s) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(warmup_lr(99, base, s) == base);  // exact at the boundary
  double prev = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double lr = warmup_lr(i, base, s);
    CHECK(lr > prev);
    prev = lr;
  }
  s.half_at = {200, 300};
  CHECK(warmup_lr(150, base, s) == base);
  CHECK(warmup_lr(200, base, s) == base * 0.5);
  CHECK(warmup_lr(350, base, s) == base * 0.25);
}

TEST_CASE("schedule validation") {
  ScheduleConfig s;
  s.warmup_iters = 10;
  s.total_iters = 5;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("psnr: formula cases and the +100 dB cap") {
  Tensor64 a = Tensor64::full({4, 4, 1}, 0.5);
  CHECK(psnr(a, a) == 100.0);
  Tensor64 b = Tensor64::full({4, 4, 1}, 0.6);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));  // MSE 0.01
  CHECK(ssim(a, b) < 1.0);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("psnr and ssim match the scalar-loop oracles on random 8x8 images") {
  RandomStream rng(70);
  Tensor64 a = Tensor64::rand_uniform({8, 8, 1}, rng, 0.0, 1.0);
  Tensor64 b = Tensor64::rand_uniform({8, 8, 1}, rng, 0.0, 1.0);
  std::vector<double> av(a.values().begin(), a.values().end());
  std::vector<double> bv(b.values().begin(), b.values().end());
  CHECK(std::abs(psnr(a, b) - oracle::psnr(av, bv)) <= 1e-9);
  CHECK(std::abs(ssim(a, b) - oracle::ssim_plane(av, bv, 8, 8)) <= 1e-9);
}

TEST_CASE("checkpoint: save-load-save produces byte-identical files") {
  ModelConfig cfg;
  cfg.stages = 1;
  cfg.layers_per_stage = 1;
  cfg.channels = 8;
  cfg.heads = 2;
  ModelParams<float> m = build<float>(cfg, 9);
  const std::string p1 = tmp_path("ck_round1.fir");
  const std::string p2 = tmp_path("ck_round2.fir");
  save_model_checkpoint(m, cfg, p1);
  ModelParams<float> loaded = load_model_checkpoint<float>(cfg, p1);
  save_model_checkpoint(loaded, cfg, p2);
  CHECK(read_bytes(p1) == read_bytes(p2));

  // Values survive bit-exact.
  CHECK(loaded.shallow_w.values() == m.shallow_w.values());
  CHECK(loaded.stages[0][0].l2_attn->wo.values() == m.stages[0][0].l2_attn->wo.values());
}

TEST_CASE("checkpoint: empty tree is exactly the 12-byte header") {
  const auto buf = checkpoint_serialize<float>({});
  CHECK(buf.size() == 12);
  CHECK(buf[0] == 'F');
  CHECK(buf[1] == 'I');
  CHECK(buf[2] == 'R');
  CHECK(buf[3] == '1');
  const auto parsed = checkpoint_parse<float>(buf);
  CHECK(parsed.empty());
}

TEST_CASE("checkpoint: corrupted magic and truncation carry byte offsets") {
  std::vector<std::pair<std::string, Tensor32>> entries{
      {"a.w", Tensor32::full({2, 2}, 1.5f)}};
  auto buf = checkpoint_serialize(entries);

  auto bad_magic = buf;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(checkpoint_parse<float>(bad_magic), FormatError);

  auto truncated = buf;
  truncated.resize(buf.size() - 5);
  try {
    checkpoint_parse<float>(truncated);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() > 12);
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }

  auto trailing = buf;
  trailing.push_back(0);
  CHECK_THROWS_AS(checkpoint_parse<float>(trailing), FormatError);

  // The f64 loader refuses f32 payloads.
  CHECK_THROWS_AS(checkpoint_parse<double>(buf), FormatError);
}

TEST_CASE("checkpoint: entries are sorted by name bytes") {
  std::vector<std::pair<std::string, Tensor32>> entries{
      {"z.w", Tensor32::full({1}, 1.0f)},
      {"a.b", Tensor32::full({1}, 2.0f)},
      {"a.a", Tensor32::full({1}, 3.0f)}};
  const auto buf = checkpoint_serialize(entries);
  const auto reversed = checkpoint_serialize<float>(
      {entries.rbegin(), entries.rend()});
  CHECK(buf == reversed);  // canonical order regardless of insertion order
}

TEST_CASE("pad_reflect_to_multiple mirrors rows without repeating the edge") {
  Tensor64 x = Tensor64::arange({1, 5, 4, 1});
  Tensor64 padded = pad_reflect_to_multiple(x, 4);
  CHECK(padded.shape() == Shape{1, 8, 4, 1});
  // Rows 5..7 mirror rows 3..1.
  for (int col = 0; col < 4; ++col) {
    CHECK(padded.value_at({0, 5, col, 0}) == x.value_at({0, 3, col, 0}));
    CHECK(padded.value_at({0, 6, col, 0}) == x.value_at({0, 2, col, 0}));
    CHECK(padded.value_at({0, 7, col, 0}) == x.value_at({0, 1, col, 0}));
  }
  CHECK(crop_spatial(padded, 5, 4).values() == x.values());

  Tensor64 already = Tensor64::arange({1, 8, 8, 2});
  CHECK(pad_reflect_to_multiple(already, 4).values() == already.values());
}

TEST_CASE("config: full parse, defaults and unknown-key rejection") {
  const RunConfig cfg = parse_run_config(toy_denoise_config_json("parse", 10));
  CHECK(cfg.task == TaskHead::denoise);
  CHECK(cfg.model.channels == 8);
  CHECK(cfg.schedule.total_iters == 10);
  CHECK(cfg.batch_size == 2);

  CHECK_THROWS_WITH_AS(parse_run_config(R"({"task": "denoise", "bogus": 1})"),
                       doctest::Contains("bogus"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"model": {"archh": "columnar"}})"),
                       doctest::Contains("archh"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{nonsense"), FormatError);
  CHECK_THROWS_AS(parse_run_config(R"({"schedule": {"warmup_iters": 9, "total_iters": 3}})"),
                  ConfigError);
}

TEST_CASE("train: zero iterations writes a header-only CSV and the initial params") {
  const RunConfig cfg = parse_run_config(toy_denoise_config_json("zero", 0, 0));
  const TrainResult r = train(cfg);
  std::ifstream csv(cfg.metrics_path, std::ios::binary);
  std::string contents((std::istreambuf_iterator<char>(csv)), std::istreambuf_iterator<char>());
  CHECK(contents == metrics_csv_header());
  CHECK(r.final_row.iter == 0);

  ModelConfig mcfg = cfg.model;
  mcfg.task = cfg.task;
  mcfg.image_channels = cfg.dataset.channels;
  ModelParams<float> init = build<float>(mcfg, cfg.model_seed);
  ModelParams<float> saved = load_model_checkpoint<float>(mcfg, cfg.checkpoint_path);
  CHECK(saved.shallow_w.values() == init.shallow_w.values());
  CHECK(saved.head_w.values() == init.head_w.values());
}

TEST_CASE("train: identical seeds give byte-identical metrics and checkpoints") {
  const RunConfig c1 = parse_run_config(toy_denoise_config_json("det1", 12));
  const RunConfig c2 = parse_run_config(toy_denoise_config_json("det2", 12));
  train(c1);
  train(c2);
  CHECK(read_bytes(c1.metrics_path) == read_bytes(c2.metrics_path));
  CHECK(read_bytes(c1.checkpoint_path) == read_bytes(c2.checkpoint_path));
  const auto metrics = read_bytes(c1.metrics_path);
  const std::string text(metrics.begin(), metrics.end());
  CHECK(text.find("iter,train_loss,val_psnr,val_ssim,grad_norm,lr") == 0);
  CHECK(text.find("\r") == std::string::npos);  // LF line endings
}

TEST_CASE("train: a non-finite loss raises a divergence error with the iteration") {
  std::string json = toy_denoise_config_json("diverge", 30);
  const std::size_t pos = json.find("\"lr\": 1e-3");
  REQUIRE(pos != std::string::npos);
  json.replace(pos, 10, "\"lr\": 1e18");
  const RunConfig cfg = parse_run_config(json);
  try {
    train(cfg);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() >= 1);
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("forward_padded crops back to the input extent") {
  const RunConfig cfg = parse_run_config(toy_denoise_config_json("pad", 0, 0));
  ModelConfig mcfg = cfg.model;
  mcfg.task = cfg.task;
  mcfg.image_channels = 1;
  ModelParams<float> m = build<float>(mcfg, 1);
  RandomStream rng(71);
  Tensor32 x = Tensor32::rand_uniform({1, 7, 5, 1}, rng, 0.0f, 1.0f);
  Tensor32 y = forward_padded(mcfg, m, x);
  CHECK(y.shape() == Shape{1, 7, 5, 1});
}
