#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fir/tensor.hpp"

namespace fir {

/// Fractal tiling of an H x W feature map: non-overlapping p x p windows,
/// grouped s x s at a time into P x P regions with P = s * p. The core index
/// operations require exact tiling; padding odd sizes up to a multiple of P
/// is the harness's job.
struct FractalGeometry {
  std::int64_t H = 0;
  std::int64_t W = 0;
  std::int64_t p = 1;  // window side, pixels
  std::int64_t s = 1;  // windows per region side

  std::int64_t P() const { return s * p; }

  void validate() const {
    if (H < 1 || W < 1 || p < 1 || s < 1) {
      throw GeometryError("geometry: all extents must be positive (H=" + std::to_string(H) +
                          ", W=" + std::to_string(W) + ", p=" + std::to_string(p) +
                          ", s=" + std::to_string(s) + ")");
    }
    if (H % P() != 0 || W % P() != 0) {
      throw GeometryError("geometry: " + std::to_string(H) + "x" + std::to_string(W) +
                          " is not tiled by P = s*p = " + std::to_string(P()));
    }
  }
};

/// Stages of the index-map oracle: the window partition itself, or the
/// window partition followed by the region regrouping.
enum class FractalStage { L1, L2 };

/// Bijection on flat spatial positions 0..H*W-1. map[src] = dst, where dst
/// is the flat position in the stage's group-major output layout.
struct IndexMap {
  std::int64_t H = 0;
  std::int64_t W = 0;
  std::vector<std::int64_t> map;

  bool is_bijection() const {
    std::vector<bool> hit(map.size(), false);
    for (auto d : map) {
      if (d < 0 || d >= static_cast<std::int64_t>(map.size()) || hit[d]) return false;
      hit[d] = true;
    }
    return true;
  }
};

/// Splits [B,H,W,C] into non-overlapping p x p windows:
/// output [B * (H/p) * (W/p), p^2, C], window-major (row-major over the
/// window grid), row-major within each window.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, std::int64_t p) {
  if (x.ndim() != 4) {
    throw GeometryError("window_partition: expected [B,H,W,C], got " +
                        shape_to_string(x.shape()));
  }
  const std::int64_t H = x.dim(1), W = x.dim(2);
  if (p < 1 || H % p != 0 || W % p != 0) {
    throw GeometryError("window_partition: " + std::to_string(H) + "x" + std::to_string(W) +
                        " is not tiled by window side p = " + std::to_string(p));
  }
  const std::int64_t B = x.dim(0), C = x.dim(3);
  // [B, H/p, p, W/p, p, C] -> [B, H/p, W/p, p, p, C]
  Tensor<T> t = reshape(x, {B, H / p, p, W / p, p, C});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {B * (H / p) * (W / p), p * p, C});
}

/// Exact inverse of window_partition.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::int64_t p, std::int64_t H,
                         std::int64_t W) {
  if (windows.ndim() != 3 || windows.dim(1) != p * p) {
    throw GeometryError("window_reverse: expected [G, p^2, C] with p = " + std::to_string(p) +
                        ", got " + shape_to_string(windows.shape()));
  }
  if (p < 1 || H % p != 0 || W % p != 0 || windows.dim(0) % ((H / p) * (W / p)) != 0) {
    throw GeometryError("window_reverse: group count " + std::to_string(windows.dim(0)) +
                        " inconsistent with " + std::to_string(H) + "x" + std::to_string(W) +
                        ", p = " + std::to_string(p));
  }
  const std::int64_t B = windows.dim(0) / ((H / p) * (W / p));
  const std::int64_t C = windows.dim(2);
  Tensor<T> t = reshape(windows, {B, H / p, W / p, p, p, C});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {B, H, W, C});
}

/// Regroups an L1-shaped tensor [B*(H/p)*(W/p), p^2, C] into region groups:
/// output [B * (H/P) * (W/P) * p^2, s^2, C]. Each output group fixes one
/// in-window offset and collects that offset's pixel from each of the s x s
/// windows inside one P x P region, row-major over the window grid.
template <typename T>
Tensor<T> fractal_regroup(const Tensor<T>& y1, const FractalGeometry& g) {
  g.validate();
  const std::int64_t H = g.H, W = g.W, p = g.p, s = g.s;
  if (y1.ndim() != 3 || y1.dim(1) != p * p || y1.dim(0) % ((H / p) * (W / p)) != 0) {
    throw GeometryError("fractal_regroup: input " + shape_to_string(y1.shape()) +
                        " is not the window partition of " + std::to_string(H) + "x" +
                        std::to_string(W) + " with p = " + std::to_string(p));
  }
  const std::int64_t B = y1.dim(0) / ((H / p) * (W / p));
  const std::int64_t C = y1.dim(2);
  Tensor<T> img = window_reverse(y1, p, H, W);
  // [B, H/P, s, p, W/P, s, p, C] -> [B, H/P, W/P, p, p, s, s, C]
  Tensor<T> t = reshape(img, {B, H / g.P(), s, p, W / g.P(), s, p, C});
  t = permute(t, {0, 1, 4, 3, 6, 2, 5, 7});
  return reshape(t, {B * (H / g.P()) * (W / g.P()) * p * p, s * s, C});
}

/// Exact inverse of fractal_regroup; returns the L1-shaped tensor.
template <typename T>
Tensor<T> fractal_regroup_reverse(const Tensor<T>& y2, const FractalGeometry& g) {
  g.validate();
  const std::int64_t H = g.H, W = g.W, p = g.p, s = g.s;
  const std::int64_t groups_per_image = (H / g.P()) * (W / g.P()) * p * p;
  if (y2.ndim() != 3 || y2.dim(1) != s * s || y2.dim(0) % groups_per_image != 0) {
    throw GeometryError("fractal_regroup_reverse: input " + shape_to_string(y2.shape()) +
                        " is not a regrouping of " + std::to_string(H) + "x" +
                        std::to_string(W) + " with p = " + std::to_string(p) +
                        ", s = " + std::to_string(s));
  }
  const std::int64_t B = y2.dim(0) / groups_per_image;
  const std::int64_t C = y2.dim(2);
  Tensor<T> t = reshape(y2, {B, H / g.P(), W / g.P(), p, p, s, s, C});
  t = permute(t, {0, 1, 5, 3, 2, 6, 4, 7});
  Tensor<T> img = reshape(t, {B, H, W, C});
  return window_partition(img, p);
}

/// Ground-truth permutation for the partition/regroup pipeline, computed by
/// direct nested-loop enumeration over (region, window, offset) coordinates.
/// Deliberately independent of the tensor code paths above.
inline IndexMap index_map_oracle(const FractalGeometry& g, FractalStage stage) {
  g.validate();
  const std::int64_t H = g.H, W = g.W, p = g.p, s = g.s, P = g.P();
  IndexMap m;
  m.H = H;
  m.W = W;
  m.map.assign(H * W, -1);
  if (stage == FractalStage::L1) {
    // Destination layout: [window][in-window offset], both row-major.
    const std::int64_t wcols = W / p;
    for (std::int64_t wr = 0; wr < H / p; ++wr) {
      for (std::int64_t wc = 0; wc < wcols; ++wc) {
        for (std::int64_t ir = 0; ir < p; ++ir) {
          for (std::int64_t ic = 0; ic < p; ++ic) {
            const std::int64_t src = (wr * p + ir) * W + (wc * p + ic);
            const std::int64_t window = wr * wcols + wc;
            const std::int64_t offset = ir * p + ic;
            m.map[src] = window * p * p + offset;
          }
        }
      }
    }
  } else {
    // Destination layout: [region][in-window offset][window-within-region],
    // regions and windows row-major over their grids.
    const std::int64_t rcols = W / P;
    for (std::int64_t rr = 0; rr < H / P; ++rr) {
      for (std::int64_t rc = 0; rc < rcols; ++rc) {
        for (std::int64_t u = 0; u < s; ++u) {      // window row within region
          for (std::int64_t v = 0; v < s; ++v) {    // window col within region
            for (std::int64_t ir = 0; ir < p; ++ir) {
              for (std::int64_t ic = 0; ic < p; ++ic) {
                const std::int64_t y = rr * P + u * p + ir;
                const std::int64_t x = rc * P + v * p + ic;
                const std::int64_t region = rr * rcols + rc;
                const std::int64_t offset = ir * p + ic;
                const std::int64_t slot = u * s + v;
                m.map[y * W + x] = (region * p * p + offset) * s * s + slot;
              }
            }
          }
        }
      }
    }
  }
  return m;
}

/// Applies an index map to the spatial positions of [B,H,W,C] data, giving
/// the flat group-major layout the corresponding tensor op would produce.
/// Pure data movement used to cross-check the op pipeline.
template <typename T>
std::vector<T> apply_index_map(const IndexMap& m, const Tensor<T>& x) {
  const std::int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (H != m.H || W != m.W) {
    throw GeometryError("apply_index_map: map is for " + std::to_string(m.H) + "x" +
                        std::to_string(m.W) + ", tensor is " + shape_to_string(x.shape()));
  }
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  const std::int64_t hw = H * W;
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < hw; ++i) {
      const std::int64_t d = m.map[i];
      for (std::int64_t c = 0; c < C; ++c) {
        out[(b * hw + d) * C + c] = xv[(b * hw + i) * C + c];
      }
    }
  }
  return out;
}

}  // namespace fir
