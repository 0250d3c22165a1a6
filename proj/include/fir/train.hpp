#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fir/config.hpp"
#include "fir/model.hpp"

namespace fir {

/// One metrics CSV row. Written as
/// `iter,train_loss,val_psnr,val_ssim,grad_norm,lr` with LF line endings.
struct MetricsRow {
  std::int64_t iter = 0;
  double train_loss = 0.0;
  double val_psnr = 0.0;
  double val_ssim = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRow& row);

struct TrainResult {
  MetricsRow final_row;
  // Degraded-input quality on the val set: PSNR of the noisy input for
  // denoising, of the box-upsampled input for 2x SR.
  double baseline_psnr = 0.0;
  double baseline_ssim = 0.0;
  std::string checkpoint_path;
  std::string metrics_path;
};

/// Runs the configured training: synthesizes data, builds the model, steps
/// the optimizer under the warmup schedule, appends a metrics row every
/// eval_interval iterations, writes the final checkpoint. Throws
/// DivergenceError (with the iteration index) the moment the loss stops
/// being finite. Deterministic: a fixed config yields byte-identical
/// metrics and checkpoint files.
TrainResult train(const RunConfig& cfg);

struct EvalResult {
  double psnr = 0.0;
  double ssim = 0.0;
  std::int64_t n_images = 0;
};

/// Mean PSNR/SSIM of the model over the config's validation split.
EvalResult evaluate_model(const RunConfig& cfg, ModelParams<float>& params);

/// Forward pass for arbitrary input sizes: reflect-pads up to the model
/// divisor, runs the model, crops the result back to the input's extent
/// (scaled by 2 for the SR head).
Tensor32 forward_padded(const ModelConfig& cfg, ModelParams<float>& params, const Tensor32& x);

}  // namespace fir
