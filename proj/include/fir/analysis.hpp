#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "fir/fifm.hpp"
#include "fir/flops.hpp"
#include "fir/model.hpp"

namespace fir {

enum class AttnMethod { global_attn, window_p, window_8p, fractal };

AttnMethod attn_method_from_string(const std::string& s);
std::string attn_method_name(AttnMethod m);

/// Symbolic dimensions of one transformer layer's cost model.
struct ComplexityDims {
  std::int64_t B = 1;
  std::int64_t H = 0;
  std::int64_t W = 0;
  std::int64_t C = 0;
  std::int64_t heads = 1;
  std::int64_t p = 1;      // window side
  std::int64_t s = 1;      // windows per region side
  std::int64_t gamma = 2;  // FFN expansion ratio

  std::int64_t P() const { return s * p; }

  void validate() const {
    if (B < 1 || H < 1 || W < 1 || C < 1 || heads < 1 || p < 1 || s < 1 || gamma < 1) {
      throw ConfigError("complexity dims: all quantities must be >= 1");
    }
  }
};

/// Exact integer evaluation of one layer's tabulated cost formulas, with
/// the published constants kept and the asymptotic O dropped. Time entries
/// are in FLOPs under the counting contract (1 multiply-accumulate =
/// 2 FLOPs); space is a count of simultaneously live tensor values (input,
/// queries, keys, values, attention map).
struct ComplexityReport {
  AttnMethod method = AttnMethod::fractal;
  ComplexityDims dims;
  std::int64_t time_attention = 0;        // score + weighted-sum term
  std::int64_t time_projection_qkvo = 0;  // q/k/v/output projections
  std::int64_t time_ffn = 0;              // pointwise FFN term
  std::int64_t omitted_small_term = 0;    // listed separately, not in total
  std::int64_t space_values = 0;
  std::int64_t rf_bound = 0;  // max receptive-field side, two layers

  std::int64_t time_total() const { return time_attention + time_projection_qkvo + time_ffn; }
  std::string to_json() const;
};

ComplexityReport analytic_complexity(AttnMethod method, const ComplexityDims& dims);

// ---------------------------------------------------------------------------
// Empirical FLOP measurement
// ---------------------------------------------------------------------------

/// Runs one fractal attention block with random parameters under the FLOP
/// counter (forward only, gradients off) and returns the tallies.
FlopCount measure_fifm_att_flops(const FifmConfig& cfg, std::int64_t B, std::int64_t H,
                                 std::int64_t W, std::uint64_t seed = 0);

/// Same for one full layer (attention + FFN + norms + residuals).
FlopCount measure_layer_flops(const FifmConfig& cfg, std::int64_t B, std::int64_t H,
                              std::int64_t W, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Receptive-field probes
// ---------------------------------------------------------------------------

/// What to stack when probing gradient support.
enum class ProbeStack {
  l1_attention,  // window attention only, repeated
  fifm_att,      // one or more fractal attention blocks (both levels)
  full_layers,   // complete layers with FFN of the configured conv kind
};

struct RfProbeResult {
  std::int64_t H = 0, W = 0;
  std::vector<std::uint8_t> support;  // H*W, 1 where |d out / d in| > threshold
  std::int64_t count = 0;
  std::int64_t y0 = 0, x0 = 0, y1 = -1, x1 = -1;  // support bounding box

  std::int64_t bbox_height() const { return y1 - y0 + 1; }
  std::int64_t bbox_width() const { return x1 - x0 + 1; }
  std::int64_t bbox_side() const { return std::max(bbox_height(), bbox_width()); }
  bool contains(std::int64_t y, std::int64_t x) const { return support[y * W + x] != 0; }
};

inline constexpr double kRfSupportThreshold = 1e-12;

/// Gradient support of one output pixel w.r.t. the input plane, computed in
/// 64-bit with randomized nonzero weights: builds the requested stack,
/// differentiates the channel-summed output at (py, px) and thresholds
/// |gradient| at 1e-12.
RfProbeResult receptive_field_probe(ProbeStack stack, int n_layers, const FifmConfig& cfg,
                                    std::int64_t H, std::int64_t W, std::int64_t py,
                                    std::int64_t px, std::uint64_t seed = 0);

}  // namespace fir
