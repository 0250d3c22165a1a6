// Independent brute-force reference implementations used to pin expected
// values. These are deliberately written as plain nested loops over raw
// vectors, sharing no code with the library paths they check.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// C[m,n] = A[m,k] * B[k,n], triple loop.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  std::int64_t m, std::int64_t k, std::int64_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      c[i * n + j] = acc;
    }
  }
  return c;
}

// Direct six-loop convolution, channel-last, zero "same" padding.
inline std::vector<double> conv2d_same(const std::vector<double>& x,
                                       const std::vector<double>& w,
                                       const std::vector<double>& bias, std::int64_t B,
                                       std::int64_t H, std::int64_t W, std::int64_t Cin,
                                       std::int64_t k, std::int64_t Cout) {
  std::vector<double> out(B * H * W * Cout, 0.0);
  const std::int64_t off = (k - 1) / 2;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t xw = 0; xw < W; ++xw)
        for (std::int64_t co = 0; co < Cout; ++co) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::int64_t ky = 0; ky < k; ++ky)
            for (std::int64_t kx = 0; kx < k; ++kx)
              for (std::int64_t ci = 0; ci < Cin; ++ci) {
                const std::int64_t iy = y + ky - off;
                const std::int64_t ix = xw + kx - off;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((b * H + iy) * W + ix) * Cin + ci] *
                       w[((ky * k + kx) * Cin + ci) * Cout + co];
              }
          out[((b * H + y) * W + xw) * Cout + co] = acc;
        }
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

// Single-head attention with projections and biases over one group of n
// tokens of width C, scalar loops only.
struct AttentionOracleParams {
  std::vector<double> wq, bq, wk, bk, wv, bv, wo, bo;
  std::int64_t C = 0;
  std::int64_t qk = 0;
};

inline std::vector<double> single_head_attention(const std::vector<double>& x, std::int64_t n,
                                                 const AttentionOracleParams& p) {
  const std::int64_t C = p.C, qk = p.qk;
  auto project = [&](const std::vector<double>& w, const std::vector<double>& b,
                     std::int64_t d_out) {
    std::vector<double> y(n * d_out, 0.0);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < d_out; ++j) {
        double acc = b[j];
        for (std::int64_t t = 0; t < C; ++t) acc += x[i * C + t] * w[t * d_out + j];
        y[i * d_out + j] = acc;
      }
    return y;
  };
  const std::vector<double> q = project(p.wq, p.bq, qk);
  const std::vector<double> k = project(p.wk, p.bk, qk);
  const std::vector<double> v = project(p.wv, p.bv, C);

  std::vector<double> ctx(n * C, 0.0);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(qk));
  for (std::int64_t i = 0; i < n; ++i) {
    std::vector<double> row(n);
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t t = 0; t < qk; ++t) acc += q[i * qk + t] * k[j * qk + t];
      row[j] = acc * inv_sqrt_d;
    }
    const std::vector<double> attn = softmax(row);
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t t = 0; t < C; ++t) ctx[i * C + t] += attn[j] * v[j * C + t];
  }

  std::vector<double> out(n * C, 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < C; ++j) {
      double acc = p.bo[j];
      for (std::int64_t t = 0; t < C; ++t) acc += ctx[i * C + t] * p.wo[t * C + j];
      out[i * C + j] = acc;
    }
  return out;
}

inline double psnr(const std::vector<double>& a, const std::vector<double>& b,
                   double max_val = 1.0) {
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(max_val * max_val / mse));
}

// Full-window (non-separable) SSIM with reflect padding; one channel plane.
inline double ssim_plane(const std::vector<double>& a, const std::vector<double>& b,
                         std::int64_t H, std::int64_t W, double max_val = 1.0) {
  const int side = 11;
  const int half = side / 2;
  const double sigma = 1.5;
  std::vector<double> win(side * side);
  double wsum = 0.0;
  for (int wy = 0; wy < side; ++wy)
    for (int wx = 0; wx < side; ++wx) {
      const double dy = wy - half, dx = wx - half;
      win[wy * side + wx] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      wsum += win[wy * side + wx];
    }
  for (auto& v : win) v /= wsum;

  auto reflect = [](std::int64_t i, std::int64_t n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
  };
  const double c1 = (0.01 * max_val) * (0.01 * max_val);
  const double c2 = (0.03 * max_val) * (0.03 * max_val);
  double total = 0.0;
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (int ty = 0; ty < side; ++ty) {
        for (int tx = 0; tx < side; ++tx) {
          const std::int64_t iy = reflect(y + ty - half, H);
          const std::int64_t ix = reflect(x + tx - half, W);
          const double wv = win[ty * side + tx];
          const double av = a[iy * W + ix];
          const double bv = b[iy * W + ix];
          mx += wv * av;
          my += wv * bv;
          mxx += wv * av * av;
          myy += wv * bv * bv;
          mxy += wv * av * bv;
        }
      }
      const double vx = mxx - mx * mx;
      const double vy = myy - my * my;
      const double cov = mxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cov + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  }
  return total / static_cast<double>(H * W);
}

}  // namespace oracle
