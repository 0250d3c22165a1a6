#include "fir/data.hpp"

#include <algorithm>
#include <cmath>

namespace fir {

namespace {

// One 3x3 box-blur pass over one channel plane (reflect edges); turns white
// noise into the band-limited texture component.
std::vector<float> box_blur(const std::vector<float>& img, std::int64_t H, std::int64_t W) {
  auto reflect = [](std::int64_t i, std::int64_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  std::vector<float> b(img.size());
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      float acc = 0.0f;
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          acc += img[reflect(y + dy, H) * W + reflect(x + dx, W)];
        }
      }
      b[y * W + x] = acc / 9.0f;
    }
  }
  return b;
}

// One clean channel plane in [0,1]: oriented gradient, a couple of
// rectangles, band-limited noise.
std::vector<float> clean_plane(std::int64_t H, std::int64_t W, RandomStream& rng) {
  std::vector<float> img(H * W);
  const double ga = rng.uniform(-1.0, 1.0);
  const double gb = rng.uniform(-1.0, 1.0);
  const double bias = rng.uniform(0.35, 0.65);
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      const double xn = W > 1 ? static_cast<double>(x) / (W - 1) - 0.5 : 0.0;
      const double yn = H > 1 ? static_cast<double>(y) / (H - 1) - 0.5 : 0.0;
      img[y * W + x] = static_cast<float>(bias + 0.3 * (ga * xn + gb * yn));
    }
  }
  const int n_rect = 3 + static_cast<int>(rng.uniform_int(3));
  for (int r = 0; r < n_rect; ++r) {
    const std::int64_t y0 = rng.uniform_int(H);
    const std::int64_t x0 = rng.uniform_int(W);
    const std::int64_t h = 2 + rng.uniform_int(std::max<std::int64_t>(H / 2, 1));
    const std::int64_t w = 2 + rng.uniform_int(std::max<std::int64_t>(W / 2, 1));
    const float delta = static_cast<float>(rng.uniform(0.15, 0.35)) *
                        (rng.uniform_int(2) == 0 ? -1.0f : 1.0f);
    for (std::int64_t y = y0; y < std::min(H, y0 + h); ++y) {
      for (std::int64_t x = x0; x < std::min(W, x0 + w); ++x) {
        img[y * W + x] += delta;
      }
    }
  }
  std::vector<float> noise(H * W);
  for (auto& v : noise) v = static_cast<float>(rng.normal(0.0, 0.06));
  noise = box_blur(noise, H, W);
  for (std::int64_t i = 0; i < H * W; ++i) {
    img[i] = std::clamp(img[i] + noise[i], 0.0f, 1.0f);
  }
  return img;
}

Tensor32 clean_image(std::int64_t H, std::int64_t W, std::int64_t C, RandomStream& rng) {
  std::vector<float> data(H * W * C);
  for (std::int64_t c = 0; c < C; ++c) {
    const std::vector<float> plane = clean_plane(H, W, rng);
    for (std::int64_t i = 0; i < H * W; ++i) data[i * C + c] = plane[i];
  }
  return Tensor32::from_data({H, W, C}, std::move(data));
}

Tensor32 add_noise(const Tensor32& clean, double sigma, RandomStream& rng) {
  std::vector<float> data = clean.values();
  for (auto& v : data) {
    v = std::clamp(v + static_cast<float>(rng.normal(0.0, sigma)), 0.0f, 1.0f);
  }
  return Tensor32::from_data(clean.shape(), std::move(data));
}

}  // namespace

Tensor32 box_downsample2(const Tensor32& x) {
  const bool batched = x.ndim() == 4;
  const std::int64_t B = batched ? x.dim(0) : 1;
  const std::int64_t H = x.dim(batched ? 1 : 0);
  const std::int64_t W = x.dim(batched ? 2 : 1);
  const std::int64_t C = x.dim(batched ? 3 : 2);
  if (H % 2 != 0 || W % 2 != 0) {
    throw ShapeError("box_downsample2: spatial dims of " + shape_to_string(x.shape()) +
                     " must be even");
  }
  std::vector<float> out(B * (H / 2) * (W / 2) * C);
  const auto& xv = x.values();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t y = 0; y < H / 2; ++y) {
      for (std::int64_t xw = 0; xw < W / 2; ++xw) {
        for (std::int64_t c = 0; c < C; ++c) {
          float acc = 0.0f;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              acc += xv[((b * H + 2 * y + dy) * W + 2 * xw + dx) * C + c];
            }
          }
          out[((b * (H / 2) + y) * (W / 2) + xw) * C + c] = acc * 0.25f;
        }
      }
    }
  }
  Shape shape = batched ? Shape{B, H / 2, W / 2, C} : Shape{H / 2, W / 2, C};
  return Tensor32::from_data(std::move(shape), std::move(out));
}

Tensor32 box_upsample2(const Tensor32& x) {
  const bool batched = x.ndim() == 4;
  const std::int64_t B = batched ? x.dim(0) : 1;
  const std::int64_t H = x.dim(batched ? 1 : 0);
  const std::int64_t W = x.dim(batched ? 2 : 1);
  const std::int64_t C = x.dim(batched ? 3 : 2);
  std::vector<float> out(B * (2 * H) * (2 * W) * C);
  const auto& xv = x.values();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t y = 0; y < 2 * H; ++y) {
      for (std::int64_t xw = 0; xw < 2 * W; ++xw) {
        for (std::int64_t c = 0; c < C; ++c) {
          out[((b * 2 * H + y) * 2 * W + xw) * C + c] =
              xv[((b * H + y / 2) * W + xw / 2) * C + c];
        }
      }
    }
  }
  Shape shape = batched ? Shape{B, 2 * H, 2 * W, C} : Shape{2 * H, 2 * W, C};
  return Tensor32::from_data(std::move(shape), std::move(out));
}

SynthDataset synth_dataset(const DatasetSpec& spec, TaskHead task, double noise_sigma) {
  if (spec.n_train < 1 || spec.n_val < 1 || spec.image_size < 2 || spec.channels < 1) {
    throw ConfigError("synth_dataset: n_train, n_val >= 1 and image_size >= 2 required");
  }
  if (noise_sigma < 0.0) throw ConfigError("synth_dataset: noise sigma must be >= 0");
  if (task == TaskHead::sr2x && spec.image_size % 2 != 0) {
    throw ConfigError("synth_dataset: sr2x needs an even clean image size");
  }
  RandomStream root(spec.seed);
  SynthDataset ds;
  const std::int64_t total = spec.n_train + spec.n_val;
  for (std::int64_t i = 0; i < total; ++i) {
    RandomStream img_rng = root.fork(static_cast<std::uint64_t>(i));
    Tensor32 clean = clean_image(spec.image_size, spec.image_size, spec.channels, img_rng);
    Tensor32 input;
    if (task == TaskHead::denoise) {
      input = add_noise(clean, noise_sigma, img_rng);
    } else {
      input = box_downsample2(clean);
    }
    const bool is_train = i < spec.n_train;
    (is_train ? ds.train_inputs : ds.val_inputs).push_back(std::move(input));
    (is_train ? ds.train_targets : ds.val_targets).push_back(std::move(clean));
  }
  return ds;
}

}  // namespace fir
