// Command-line driver: training, evaluation, complexity analysis, gradient
// verification, receptive-field probing and the similarity-gradient
// experiment, all over JSON run configs.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fir/analysis.hpp"
#include "fir/checkpoint.hpp"
#include "fir/config.hpp"
#include "fir/gradcheck_suite.hpp"
#include "fir/train.hpp"

namespace {

fir::ComplexityDims dims_from_config(const fir::RunConfig& cfg) {
  const fir::StageGeometry g = cfg.model.stage_geometry(0);
  fir::ComplexityDims d;
  d.B = 1;
  d.H = cfg.task == fir::TaskHead::sr2x ? cfg.dataset.image_size / 2 : cfg.dataset.image_size;
  d.W = d.H;
  d.C = cfg.model.channels;
  d.heads = cfg.model.heads;
  d.p = g.p;
  d.s = g.s;
  d.gamma = cfg.model.ffn_ratio;
  return d;
}

int cmd_train(const std::string& config_path) {
  const fir::RunConfig cfg = fir::load_run_config(config_path);
  const fir::TrainResult r = fir::train(cfg);
  std::printf("baseline_psnr=%.4f final_val_psnr=%.4f final_val_ssim=%.5f iters=%lld\n",
              r.baseline_psnr, r.final_row.val_psnr, r.final_row.val_ssim,
              static_cast<long long>(r.final_row.iter));
  std::printf("metrics=%s checkpoint=%s\n", r.metrics_path.c_str(), r.checkpoint_path.c_str());
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& config_path) {
  const fir::RunConfig cfg = fir::load_run_config(config_path);
  fir::ModelConfig mcfg = cfg.model;
  mcfg.task = cfg.task;
  mcfg.image_channels = cfg.dataset.channels;
  fir::ModelParams<float> params = fir::load_model_checkpoint<float>(mcfg, ckpt_path);
  const fir::EvalResult r = fir::evaluate_model(cfg, params);
  std::printf("{\"val_psnr\":%.6f,\"val_ssim\":%.6f,\"n_images\":%lld}\n", r.psnr, r.ssim,
              static_cast<long long>(r.n_images));
  return 0;
}

int cmd_analyze(const std::string& config_path) {
  const fir::RunConfig cfg = fir::load_run_config(config_path);
  const fir::ComplexityDims dims = dims_from_config(cfg);
  std::printf("[");
  bool first = true;
  for (fir::AttnMethod m : {fir::AttnMethod::global_attn, fir::AttnMethod::window_p,
                            fir::AttnMethod::window_8p, fir::AttnMethod::fractal}) {
    const fir::ComplexityReport r = fir::analytic_complexity(m, dims);
    std::printf("%s%s", first ? "" : ",", r.to_json().c_str());
    first = false;
  }
  std::printf("]\n");
  return 0;
}

int cmd_gradcheck() {
  const auto results = fir::run_gradcheck_suite();
  int failures = 0;
  for (const auto& c : results) {
    std::printf("%-28s max_rel_err=%.3e tol=%.0e %s\n", c.name.c_str(), c.max_rel_err,
                c.tolerance, c.pass ? "ok" : "FAIL");
    if (!c.pass) ++failures;
  }
  std::printf("%zu checks, %d failures\n", results.size(), failures);
  return failures == 0 ? 0 : 1;
}

int cmd_rf_probe(const std::string& config_path) {
  const fir::RunConfig cfg = fir::load_run_config(config_path);
  fir::FifmConfig lc = cfg.model.layer_config(0);
  const std::int64_t P = lc.p * lc.s;
  const std::int64_t side = 4 * P;
  const std::int64_t pixel = side / 2 - 1;

  auto report = [&](const char* name, fir::ProbeStack stack, int layers) {
    const fir::RfProbeResult r =
        fir::receptive_field_probe(stack, layers, lc, side, side, pixel, pixel);
    const std::int64_t bound = 16 * P;
    std::printf(
        "{\"probe\":\"%s\",\"layers\":%d,\"input\":[%lld,%lld],\"pixel\":[%lld,%lld],"
        "\"rf_bound\":%lld,\"rf_measured\":%lld,\"support_pixels\":%lld,"
        "\"bbox\":[%lld,%lld,%lld,%lld]}\n",
        name, layers, static_cast<long long>(side), static_cast<long long>(side),
        static_cast<long long>(pixel), static_cast<long long>(pixel),
        static_cast<long long>(bound), static_cast<long long>(r.bbox_side()),
        static_cast<long long>(r.count), static_cast<long long>(r.y0),
        static_cast<long long>(r.x0), static_cast<long long>(r.y1),
        static_cast<long long>(r.x1));
  };
  report("l1_attention", fir::ProbeStack::l1_attention, 2);
  report("fifm_att", fir::ProbeStack::fifm_att, 1);
  report("full_layers", fir::ProbeStack::full_layers, 2);
  return 0;
}

int cmd_grad_experiment(std::int64_t samples, double min_norm, double max_norm, int dim,
                        bool orthogonal, std::uint64_t seed) {
  fir::GradExperimentConfig cfg;
  cfg.n_samples = samples;
  cfg.norm_lo = min_norm;
  cfg.norm_hi = max_norm;
  cfg.dim = dim;
  cfg.orthogonal = orthogonal;
  cfg.seed = seed;
  const fir::GradExperimentResult r = fir::gradient_magnitude_experiment(cfg);
  std::printf("idx,kind,q_norm,k_norm,grad_norm\n");
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const auto& s = r.samples[i];
    std::printf("%zu,dot,%.9g,%.9g,%.9g\n", i, s.q_norm, s.k_norm, s.dot_grad_norm);
    std::printf("%zu,cosine,%.9g,%.9g,%.9g\n", i, s.q_norm, s.k_norm, s.cos_grad_norm);
  }
  std::fprintf(stderr,
               "dot:    max=%.6g mean=%.6g q50=%.6g q90=%.6g q99=%.6g\n"
               "cosine: max=%.6g mean=%.6g q50=%.6g q90=%.6g q99=%.6g\n",
               r.dot.max, r.dot.mean, r.dot.q50, r.dot.q90, r.dot.q99, r.cosine.max,
               r.cosine.mean, r.cosine.q50, r.cosine.q90, r.cosine.q99);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fractal information-flow image restoration toolkit"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path;

  CLI::App* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("config", config_path, "Run config JSON")->required();

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the config's val split");
  eval->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  eval->add_option("config", config_path, "Run config JSON")->required();

  CLI::App* analyze =
      app.add_subcommand("analyze", "Print analytic complexity reports as JSON");
  analyze->add_option("config", config_path, "Run config JSON")->required();

  app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");

  CLI::App* rf = app.add_subcommand("rf-probe", "Measure receptive fields by gradient support");
  rf->add_option("config", config_path, "Run config JSON")->required();

  std::int64_t samples = 1000;
  double min_norm = 1e-3, max_norm = 1.0;
  int dim = 16;
  bool orthogonal = false;
  std::uint64_t seed = 0;
  CLI::App* ge = app.add_subcommand(
      "grad-experiment", "Compare similarity-gradient magnitudes (CSV to stdout)");
  ge->add_option("--samples", samples, "Number of sampled query/key pairs");
  ge->add_option("--min-norm", min_norm, "Lower bound of the sampled vector norms");
  ge->add_option("--max-norm", max_norm, "Upper bound of the sampled vector norms");
  ge->add_option("--dim", dim, "Vector dimensionality");
  ge->add_flag("--orthogonal", orthogonal, "Force key directions orthogonal to queries");
  ge->add_option("--seed", seed, "Sampling seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path);
    if (eval->parsed()) return cmd_eval(ckpt_path, config_path);
    if (analyze->parsed()) return cmd_analyze(config_path);
    if (app.get_subcommand("gradcheck")->parsed()) return cmd_gradcheck();
    if (rf->parsed()) return cmd_rf_probe(config_path);
    if (ge->parsed()) return cmd_grad_experiment(samples, min_norm, max_norm, dim, orthogonal, seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
