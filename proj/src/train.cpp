#include "fir/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "fir/checkpoint.hpp"
#include "fir/metrics.hpp"
#include "fir/optimizer.hpp"

namespace fir {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

Tensor32 stack_batch(const std::vector<Tensor32>& images, const std::vector<std::int64_t>& idx) {
  const Shape& s = images[idx[0]].shape();  // [H,W,C]
  const std::int64_t per = shape_numel(s);
  std::vector<float> data(static_cast<std::size_t>(per) * idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& v = images[idx[i]].values();
    std::copy(v.begin(), v.end(), data.begin() + static_cast<std::int64_t>(i) * per);
  }
  return Tensor32::from_data({static_cast<std::int64_t>(idx.size()), s[0], s[1], s[2]},
                             std::move(data));
}

ModelConfig effective_model_config(const RunConfig& cfg) {
  ModelConfig m = cfg.model;
  m.task = cfg.task;
  m.image_channels = cfg.dataset.channels;
  return m;
}

EvalResult evaluate_split(const ModelConfig& mcfg, ModelParams<float>& params,
                          const std::vector<Tensor32>& inputs,
                          const std::vector<Tensor32>& targets) {
  NoGradGuard no_grad;
  EvalResult r;
  r.n_images = static_cast<std::int64_t>(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Shape& s = inputs[i].shape();
    Tensor32 x = Tensor32::from_data({1, s[0], s[1], s[2]}, inputs[i].values());
    Tensor32 y = model_forward(mcfg, params, x);
    const Shape& ts = targets[i].shape();
    Tensor32 t = Tensor32::from_data({1, ts[0], ts[1], ts[2]}, targets[i].values());
    r.psnr += psnr(y, t);
    r.ssim += ssim(y, t);
  }
  if (r.n_images > 0) {
    r.psnr /= static_cast<double>(r.n_images);
    r.ssim /= static_cast<double>(r.n_images);
  }
  return r;
}

}  // namespace

std::string metrics_csv_header() { return "iter,train_loss,val_psnr,val_ssim,grad_norm,lr\n"; }

std::string metrics_csv_line(const MetricsRow& row) {
  return std::to_string(row.iter) + "," + format_double(row.train_loss) + "," +
         format_double(row.val_psnr) + "," + format_double(row.val_ssim) + "," +
         format_double(row.grad_norm) + "," + format_double(row.lr) + "\n";
}

Tensor32 forward_padded(const ModelConfig& cfg, ModelParams<float>& params, const Tensor32& x) {
  NoGradGuard no_grad;
  const std::int64_t H = x.dim(1), W = x.dim(2);
  Tensor32 padded = pad_reflect_to_multiple(x, cfg.required_divisor());
  Tensor32 y = model_forward(cfg, params, padded);
  const std::int64_t scale_factor = cfg.task == TaskHead::sr2x ? 2 : 1;
  return crop_spatial(y, H * scale_factor, W * scale_factor);
}

EvalResult evaluate_model(const RunConfig& cfg, ModelParams<float>& params) {
  cfg.validate();
  const ModelConfig mcfg = effective_model_config(cfg);
  SynthDataset ds = synth_dataset(cfg.dataset, cfg.task, cfg.noise_sigma);
  return evaluate_split(mcfg, params, ds.val_inputs, ds.val_targets);
}

TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  const ModelConfig mcfg = effective_model_config(cfg);
  SynthDataset ds = synth_dataset(cfg.dataset, cfg.task, cfg.noise_sigma);

  ModelParams<float> params = build<float>(mcfg, cfg.model_seed);
  set_params_requires_grad(params, mcfg, true);
  std::vector<Tensor32> param_list;
  visit_model_params(params, mcfg,
                     [&](const std::string&, Tensor32& t) { param_list.push_back(t); });
  AdamW<float> opt(param_list, cfg.optimizer);

  // Degraded-input quality on the val split, the no-model baseline.
  TrainResult result;
  {
    NoGradGuard no_grad;
    double p = 0.0, s = 0.0;
    for (std::size_t i = 0; i < ds.val_inputs.size(); ++i) {
      Tensor32 degraded = cfg.task == TaskHead::sr2x ? box_upsample2(ds.val_inputs[i])
                                                     : ds.val_inputs[i];
      p += psnr(degraded, ds.val_targets[i]);
      s += ssim(degraded, ds.val_targets[i]);
    }
    result.baseline_psnr = p / static_cast<double>(ds.val_inputs.size());
    result.baseline_ssim = s / static_cast<double>(ds.val_inputs.size());
  }

  std::ofstream csv(cfg.metrics_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw FormatError("cannot open metrics file for writing: " + cfg.metrics_path);
  csv << metrics_csv_header();

  RandomStream batch_rng(cfg.dataset.seed ^ 0x7261696eull);
  const std::int64_t n_train = static_cast<std::int64_t>(ds.train_inputs.size());
  MetricsRow row;
  for (std::int64_t iter = 0; iter < cfg.schedule.total_iters; ++iter) {
    const double lr = warmup_lr(iter, cfg.optimizer.lr, cfg.schedule);

    std::vector<std::int64_t> idx(cfg.batch_size);
    for (auto& v : idx) v = static_cast<std::int64_t>(batch_rng.uniform_int(n_train));
    Tensor32 x = stack_batch(ds.train_inputs, idx);
    Tensor32 t = stack_batch(ds.train_targets, idx);

    Tensor32 y = model_forward(mcfg, params, x);
    Tensor32 loss = mean_all(fir::abs(sub(y, t)));
    const double loss_value = static_cast<double>(loss.values()[0]);
    if (!std::isfinite(loss_value)) {
      throw DivergenceError("training loss is not finite", iter);
    }
    backward(loss);
    const double grad_norm = gradient_norm(param_list);
    opt.step(lr);

    const bool log_now =
        (iter + 1) % cfg.schedule.eval_interval == 0 || iter + 1 == cfg.schedule.total_iters;
    if (log_now) {
      const EvalResult ev = evaluate_split(mcfg, params, ds.val_inputs, ds.val_targets);
      row.iter = iter + 1;
      row.train_loss = loss_value;
      row.val_psnr = ev.psnr;
      row.val_ssim = ev.ssim;
      row.grad_norm = grad_norm;
      row.lr = lr;
      csv << metrics_csv_line(row);
    }
  }
  csv.close();

  save_model_checkpoint(params, mcfg, cfg.checkpoint_path);
  result.final_row = row;
  result.checkpoint_path = cfg.checkpoint_path;
  result.metrics_path = cfg.metrics_path;
  return result;
}

}  // namespace fir
