#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fir/tensor.hpp"

namespace fir {

inline constexpr double kPsnrCap = 100.0;  // reported for zero MSE

/// Peak signal-to-noise ratio in dB over all elements, capped at +100.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double max_val = 1.0) {
  detail::check_same_shape(a, b, "psnr");
  const auto& av = a.values();
  const auto& bv = b.values();
  double mse = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(av.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

namespace detail {

inline std::vector<double> gaussian_window_1d(int side, double sigma) {
  std::vector<double> w(side);
  const int half = side / 2;
  double sum = 0.0;
  for (int i = 0; i < side; ++i) {
    const double d = static_cast<double>(i - half);
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  // Mirror without repeating the edge sample: -1 -> 1, n -> n-2.
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

/// Separable Gaussian filtering of one channel plane with reflect padding.
inline std::vector<double> gaussian_filter_plane(const std::vector<double>& img,
                                                 std::int64_t H, std::int64_t W,
                                                 const std::vector<double>& win) {
  const int side = static_cast<int>(win.size());
  const int half = side / 2;
  std::vector<double> tmp(H * W), out(H * W);
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int t = 0; t < side; ++t) {
        acc += win[t] * img[y * W + reflect_index(x + t - half, W)];
      }
      tmp[y * W + x] = acc;
    }
  }
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int t = 0; t < side; ++t) {
        acc += win[t] * tmp[reflect_index(y + t - half, H) * W + x];
      }
      out[y * W + x] = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, averaged over all positions and channels. Local
/// statistics use reflect padding so small evaluation tiles are handled.
/// Accepts [H,W,C] or [B,H,W,C].
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double max_val = 1.0) {
  detail::check_same_shape(a, b, "ssim");
  std::int64_t B = 1, H, W, C;
  if (a.ndim() == 4) {
    B = a.dim(0);
    H = a.dim(1);
    W = a.dim(2);
    C = a.dim(3);
  } else if (a.ndim() == 3) {
    H = a.dim(0);
    W = a.dim(1);
    C = a.dim(2);
  } else {
    throw ShapeError("ssim: expected [H,W,C] or [B,H,W,C], got " + shape_to_string(a.shape()));
  }
  const double c1 = (0.01 * max_val) * (0.01 * max_val);
  const double c2 = (0.03 * max_val) * (0.03 * max_val);
  const std::vector<double> win = detail::gaussian_window_1d(11, 1.5);

  const auto& av = a.values();
  const auto& bv = b.values();
  double total = 0.0;
  std::int64_t planes = 0;
  std::vector<double> x(H * W), y(H * W), xx(H * W), yy(H * W), xy(H * W);
  for (std::int64_t bi = 0; bi < B; ++bi) {
    for (std::int64_t c = 0; c < C; ++c) {
      for (std::int64_t i = 0; i < H * W; ++i) {
        const std::int64_t off = (bi * H * W + i) * C + c;
        x[i] = static_cast<double>(av[off]);
        y[i] = static_cast<double>(bv[off]);
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
      }
      const auto mx = detail::gaussian_filter_plane(x, H, W, win);
      const auto my = detail::gaussian_filter_plane(y, H, W, win);
      const auto mxx = detail::gaussian_filter_plane(xx, H, W, win);
      const auto myy = detail::gaussian_filter_plane(yy, H, W, win);
      const auto mxy = detail::gaussian_filter_plane(xy, H, W, win);
      double acc = 0.0;
      for (std::int64_t i = 0; i < H * W; ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cov = mxy[i] - mx[i] * my[i];
        const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
        const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
        acc += num / den;
      }
      total += acc / static_cast<double>(H * W);
      ++planes;
    }
  }
  return total / static_cast<double>(planes);
}

}  // namespace fir
