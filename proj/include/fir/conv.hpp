#pragma once

#include <cstdint>
#include <vector>

#include "fir/tensor.hpp"

namespace fir {

enum class Padding { same, none };

/// 2D cross-correlation over channel-last features.
///   x: [B, H, W, Cin], w: [k, k, Cin, Cout], bias: [Cout] or undefined.
/// Supported: k in {1, 3}, stride in {1, 2}. "same" uses zero padding of
/// (k-1)/2; with stride 2 the output side is the input side / stride
/// (rounded up).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int stride = 1, Padding pad = Padding::same) {
  if (x.ndim() != 4 || w.ndim() != 4) {
    throw ShapeError("conv2d: expected x[B,H,W,Cin] and w[k,k,Cin,Cout], got " +
                     shape_to_string(x.shape()) + " and " + shape_to_string(w.shape()));
  }
  const std::int64_t k = w.dim(0);
  if (k != w.dim(1) || (k != 1 && k != 3)) {
    throw ConfigError("conv2d: kernel must be square with side 1 or 3, got " +
                      shape_to_string(w.shape()));
  }
  if (stride != 1 && stride != 2) {
    throw ConfigError("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
  }
  const std::int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  if (w.dim(2) != Cin) {
    throw ShapeError("conv2d: input channels " + std::to_string(Cin) +
                     " do not match kernel " + shape_to_string(w.shape()));
  }
  const std::int64_t Cout = w.dim(3);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != Cout)) {
    throw ShapeError("conv2d: bias " + shape_to_string(bias.shape()) + " does not match Cout " +
                     std::to_string(Cout));
  }
  const std::int64_t off = (pad == Padding::same) ? (k - 1) / 2 : 0;
  const std::int64_t Ho = (pad == Padding::same) ? (H + stride - 1) / stride
                                                 : (H - k) / stride + 1;
  const std::int64_t Wo = (pad == Padding::same) ? (W + stride - 1) / stride
                                                 : (W - k) / stride + 1;
  if (Ho < 1 || Wo < 1) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " does not fit input " +
                     shape_to_string(x.shape()) + " without padding");
  }

  const auto& xv = x.values();
  const auto& wv = w.values();
  std::vector<T> out(B * Ho * Wo * Cout, T(0));
  if (has_bias) {
    const auto& bv = bias.values();
    for (std::int64_t i = 0; i < B * Ho * Wo; ++i) {
      std::copy(bv.begin(), bv.end(), out.begin() + i * Cout);
    }
  }
  parallel_for(B * Ho, [&](std::int64_t bo) {
    const std::int64_t b = bo / Ho;
    const std::int64_t oy = bo % Ho;
    for (std::int64_t ox = 0; ox < Wo; ++ox) {
      T* acc = out.data() + ((b * Ho + oy) * Wo + ox) * Cout;
      for (std::int64_t ky = 0; ky < k; ++ky) {
        const std::int64_t iy = oy * stride + ky - off;
        if (iy < 0 || iy >= H) continue;
        for (std::int64_t kx = 0; kx < k; ++kx) {
          const std::int64_t ix = ox * stride + kx - off;
          if (ix < 0 || ix >= W) continue;
          const T* xin = xv.data() + ((b * H + iy) * W + ix) * Cin;
          const T* wrow = wv.data() + (ky * k + kx) * Cin * Cout;
          for (std::int64_t ci = 0; ci < Cin; ++ci) {
            const T a = xin[ci];
            const T* wc = wrow + ci * Cout;
            for (std::int64_t co = 0; co < Cout; ++co) acc[co] += a * wc[co];
          }
        }
      }
    }
  });
  count_conv_flops(flop_cost::kMac * B * Ho * Wo * k * k * Cin * Cout);
  if (has_bias) count_elementwise_flops(B * Ho * Wo * Cout);

  auto xn = x.node();
  auto wn = w.node();
  auto bn = has_bias ? bias.node() : nullptr;
  auto backward_fn = [xn, wn, bn, B, H, W, Cin, Cout, Ho, Wo, k, stride,
                      off](TensorNode<T>& self) {
    std::vector<T> gx(xn->requires_grad ? xn->value.size() : 0, T(0));
    std::vector<T> gw(wn->requires_grad ? wn->value.size() : 0, T(0));
    std::vector<T> gb(bn && bn->requires_grad ? static_cast<std::size_t>(Cout) : 0, T(0));
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t oy = 0; oy < Ho; ++oy) {
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          const T* gout = self.grad.data() + ((b * Ho + oy) * Wo + ox) * Cout;
          if (!gb.empty()) {
            for (std::int64_t co = 0; co < Cout; ++co) gb[co] += gout[co];
          }
          for (std::int64_t ky = 0; ky < k; ++ky) {
            const std::int64_t iy = oy * stride + ky - off;
            if (iy < 0 || iy >= H) continue;
            for (std::int64_t kx = 0; kx < k; ++kx) {
              const std::int64_t ix = ox * stride + kx - off;
              if (ix < 0 || ix >= W) continue;
              const std::int64_t xoff = ((b * H + iy) * W + ix) * Cin;
              const std::int64_t woff = (ky * k + kx) * Cin * Cout;
              for (std::int64_t ci = 0; ci < Cin; ++ci) {
                T gsum = T(0);
                const T* wc = wn->value.data() + woff + ci * Cout;
                const T a = xn->value[xoff + ci];
                for (std::int64_t co = 0; co < Cout; ++co) {
                  gsum += wc[co] * gout[co];
                  if (!gw.empty()) gw[woff + ci * Cout + co] += a * gout[co];
                }
                if (!gx.empty()) gx[xoff + ci] += gsum;
              }
            }
          }
        }
      }
    }
    if (!gx.empty()) detail::accumulate(*xn, gx);
    if (!gw.empty()) detail::accumulate(*wn, gw);
    if (bn && !gb.empty()) detail::accumulate(*bn, gb);
  };
  if (has_bias) {
    return detail::make_op_result<T>({B, Ho, Wo, Cout}, std::move(out), {x, w, bias},
                                     std::move(backward_fn));
  }
  return detail::make_op_result<T>({B, Ho, Wo, Cout}, std::move(out), {x, w},
                                   std::move(backward_fn));
}

/// Rearranges channel blocks to upscale space: [B,H,W,C*r^2] -> [B,rH,rW,C].
/// The r^2 block of output channel c is laid out row-major over the
/// (sub-row, sub-col) offsets: source channel = c*r^2 + dy*r + dx.
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  if (x.ndim() != 4) {
    throw ShapeError("pixel_shuffle: expected [B,H,W,C*r^2], got " + shape_to_string(x.shape()));
  }
  const std::int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Cr2 = x.dim(3);
  const std::int64_t r2 = static_cast<std::int64_t>(r) * r;
  if (r < 1 || Cr2 % r2 != 0) {
    throw ShapeError("pixel_shuffle: channels " + std::to_string(Cr2) +
                     " not divisible by r^2 = " + std::to_string(r2));
  }
  const std::int64_t C = Cr2 / r2;
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t xw = 0; xw < W; ++xw) {
        const T* src = xv.data() + ((b * H + y) * W + xw) * Cr2;
        for (std::int64_t c = 0; c < C; ++c) {
          for (std::int64_t dy = 0; dy < r; ++dy) {
            for (std::int64_t dx = 0; dx < r; ++dx) {
              out[((b * H * r + (y * r + dy)) * (W * r) + (xw * r + dx)) * C + c] =
                  src[c * r2 + dy * r + dx];
            }
          }
        }
      }
    }
  }
  auto xn = x.node();
  return detail::make_op_result<T>(
      {B, H * r, W * r, C}, std::move(out), {x},
      [xn, B, H, W, C, r, r2, Cr2](TensorNode<T>& self) {
        if (!xn->requires_grad) return;
        std::vector<T> gx(xn->value.size());
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t y = 0; y < H; ++y) {
            for (std::int64_t xw = 0; xw < W; ++xw) {
              T* dst = gx.data() + ((b * H + y) * W + xw) * Cr2;
              for (std::int64_t c = 0; c < C; ++c) {
                for (std::int64_t dy = 0; dy < r; ++dy) {
                  for (std::int64_t dx = 0; dx < r; ++dx) {
                    dst[c * r2 + dy * r + dx] =
                        self.grad[((b * H * r + (y * r + dy)) * (W * r) + (xw * r + dx)) * C + c];
                  }
                }
              }
            }
          }
        }
        detail::accumulate(*xn, gx);
      });
}

/// Exact inverse of pixel_shuffle: [B,rH,rW,C] -> [B,H,W,C*r^2].
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  if (x.ndim() != 4) {
    throw ShapeError("pixel_unshuffle: expected [B,rH,rW,C], got " + shape_to_string(x.shape()));
  }
  const std::int64_t B = x.dim(0), Hr = x.dim(1), Wr = x.dim(2), C = x.dim(3);
  if (r < 1 || Hr % r != 0 || Wr % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial dims of " + shape_to_string(x.shape()) +
                     " not divisible by r = " + std::to_string(r));
  }
  const std::int64_t H = Hr / r, W = Wr / r;
  const std::int64_t r2 = static_cast<std::int64_t>(r) * r;
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t xw = 0; xw < W; ++xw) {
        T* dst = out.data() + ((b * H + y) * W + xw) * C * r2;
        for (std::int64_t c = 0; c < C; ++c) {
          for (std::int64_t dy = 0; dy < r; ++dy) {
            for (std::int64_t dx = 0; dx < r; ++dx) {
              dst[c * r2 + dy * r + dx] =
                  xv[((b * Hr + (y * r + dy)) * Wr + (xw * r + dx)) * C + c];
            }
          }
        }
      }
    }
  }
  auto xn = x.node();
  return detail::make_op_result<T>(
      {B, H, W, C * r2}, std::move(out), {x},
      [xn, B, H, W, C, Hr, Wr, r, r2](TensorNode<T>& self) {
        if (!xn->requires_grad) return;
        std::vector<T> gx(xn->value.size());
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t y = 0; y < H; ++y) {
            for (std::int64_t xw = 0; xw < W; ++xw) {
              const T* src = self.grad.data() + ((b * H + y) * W + xw) * C * r2;
              for (std::int64_t c = 0; c < C; ++c) {
                for (std::int64_t dy = 0; dy < r; ++dy) {
                  for (std::int64_t dx = 0; dx < r; ++dx) {
                    gx[((b * Hr + (y * r + dy)) * Wr + (xw * r + dx)) * C + c] =
                        src[c * r2 + dy * r + dx];
                  }
                }
              }
            }
          }
        }
        detail::accumulate(*xn, gx);
      });
}

}  // namespace fir
