#pragma once

#include <cstdint>
#include <vector>

#include "fir/model.hpp"
#include "fir/random.hpp"
#include "fir/tensor.hpp"

namespace fir {

struct DatasetSpec {
  std::int64_t n_train = 64;
  std::int64_t n_val = 8;
  std::int64_t image_size = 16;  // side of the clean image
  std::int64_t channels = 1;
  std::uint64_t seed = 0;
};

/// In-memory synthetic dataset; every image is [H,W,C] in [0,1].
struct SynthDataset {
  std::vector<Tensor32> train_inputs, train_targets;
  std::vector<Tensor32> val_inputs, val_targets;
};

/// Synthesizes clean images (mixtures of linear gradients, rectangles and
/// band-limited noise) and the task's degraded inputs: additive white
/// Gaussian noise clipped to [0,1] for denoising, a 2x2 box-mean downsample
/// for 2x super-resolution. Bit-identical for a fixed spec.
SynthDataset synth_dataset(const DatasetSpec& spec, TaskHead task, double noise_sigma);

/// Reflect-pads H and W (mirror without edge repetition) up to the next
/// multiple of `multiple`. Identity when already divisible.
template <typename T>
Tensor<T> pad_reflect_to_multiple(const Tensor<T>& x, std::int64_t multiple) {
  if (x.ndim() != 4) {
    throw ShapeError("pad_reflect_to_multiple: expected [B,H,W,C], got " +
                     shape_to_string(x.shape()));
  }
  const std::int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::int64_t Hp = (H + multiple - 1) / multiple * multiple;
  const std::int64_t Wp = (W + multiple - 1) / multiple * multiple;
  if (Hp == H && Wp == W) return x;
  if (Hp - H > H - 1 || Wp - W > W - 1) {
    throw ShapeError("pad_reflect_to_multiple: padding exceeds mirrorable extent of " +
                     shape_to_string(x.shape()));
  }
  std::vector<T> out(B * Hp * Wp * C);
  const auto& xv = x.values();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t y = 0; y < Hp; ++y) {
      const std::int64_t sy = y < H ? y : 2 * H - 2 - y;
      for (std::int64_t xw = 0; xw < Wp; ++xw) {
        const std::int64_t sx = xw < W ? xw : 2 * W - 2 - xw;
        for (std::int64_t c = 0; c < C; ++c) {
          out[((b * Hp + y) * Wp + xw) * C + c] = xv[((b * H + sy) * W + sx) * C + c];
        }
      }
    }
  }
  return Tensor<T>::from_data({B, Hp, Wp, C}, std::move(out));
}

/// Crops back to the original spatial extent; exact inverse of the padding
/// on the original region.
template <typename T>
Tensor<T> crop_spatial(const Tensor<T>& x, std::int64_t H, std::int64_t W) {
  if (x.ndim() != 4 || x.dim(1) < H || x.dim(2) < W) {
    throw ShapeError("crop_spatial: cannot crop " + shape_to_string(x.shape()) + " to " +
                     std::to_string(H) + "x" + std::to_string(W));
  }
  if (x.dim(1) == H && x.dim(2) == W) return x;
  const std::int64_t B = x.dim(0), Hp = x.dim(1), Wp = x.dim(2), C = x.dim(3);
  (void)Hp;
  std::vector<T> out(B * H * W * C);
  const auto& xv = x.values();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t xw = 0; xw < W; ++xw) {
        for (std::int64_t c = 0; c < C; ++c) {
          out[((b * H + y) * W + xw) * C + c] = xv[((b * x.dim(1) + y) * Wp + xw) * C + c];
        }
      }
    }
  }
  return Tensor<T>::from_data({B, H, W, C}, std::move(out));
}

/// 2x2 box-mean downsample, the degradation used for the 2x SR task.
Tensor32 box_downsample2(const Tensor32& x);

/// Nearest-neighbor 2x upsample; the no-model baseline for the SR task.
Tensor32 box_upsample2(const Tensor32& x);

}  // namespace fir
