#pragma once

#include <cstdint>

namespace fir {

/// Elementwise FLOP contract used by the instrumented operations.
/// One multiply-accumulate is 2 FLOPs; exp, div and sqrt count 1 each.
/// Data movement (reshape, permute, shuffle, concat) is free.
namespace flop_cost {
inline constexpr std::int64_t kMac = 2;
// max-scan + subtract + exp + sum-accumulate + divide, per element
inline constexpr std::int64_t kSoftmaxPerElem = 5;
// mean acc + (sub, mul, acc) variance + (sub, div) normalize + (mul, add)
// affine, per element; sqrt and eps-add are per slice
inline constexpr std::int64_t kLayerNormPerElem = 8;
inline constexpr std::int64_t kLayerNormPerSlice = 2;
// x^2, x^3, *a, +x, *c, tanh, +1, *x, *0.5
inline constexpr std::int64_t kGeluPerElem = 9;
// square + accumulate per element; sqrt + divide are per row but folded
// into the per-element figure at the row level by the caller
inline constexpr std::int64_t kNormalizePerElem = 3;
}  // namespace flop_cost

/// Per-category FLOP tallies accumulated by the tensor ops while a counter
/// is active. The matmul and conv buckets hold only the multiply-accumulate
/// work of those kernels (bias adds land in `elementwise`), so they can be
/// compared directly against analytic projection/attention terms.
struct FlopCount {
  std::int64_t matmul = 0;
  std::int64_t conv = 0;
  std::int64_t softmax = 0;
  std::int64_t layer_norm = 0;
  std::int64_t activation = 0;
  std::int64_t elementwise = 0;

  std::int64_t total() const {
    return matmul + conv + softmax + layer_norm + activation + elementwise;
  }

  FlopCount& operator+=(const FlopCount& o) {
    matmul += o.matmul;
    conv += o.conv;
    softmax += o.softmax;
    layer_norm += o.layer_norm;
    activation += o.activation;
    elementwise += o.elementwise;
    return *this;
  }
};

namespace detail {
inline FlopCount*& active_flop_counter() {
  thread_local FlopCount* counter = nullptr;
  return counter;
}
}  // namespace detail

inline void count_matmul_flops(std::int64_t f) {
  if (auto* c = detail::active_flop_counter()) c->matmul += f;
}
inline void count_conv_flops(std::int64_t f) {
  if (auto* c = detail::active_flop_counter()) c->conv += f;
}
inline void count_softmax_flops(std::int64_t f) {
  if (auto* c = detail::active_flop_counter()) c->softmax += f;
}
inline void count_layer_norm_flops(std::int64_t f) {
  if (auto* c = detail::active_flop_counter()) c->layer_norm += f;
}
inline void count_activation_flops(std::int64_t f) {
  if (auto* c = detail::active_flop_counter()) c->activation += f;
}
inline void count_elementwise_flops(std::int64_t f) {
  if (auto* c = detail::active_flop_counter()) c->elementwise += f;
}

/// RAII scope that routes op-level FLOP tallies into `count`.
class FlopCounterScope {
 public:
  explicit FlopCounterScope(FlopCount& count) : prev_(detail::active_flop_counter()) {
    detail::active_flop_counter() = &count;
  }
  ~FlopCounterScope() { detail::active_flop_counter() = prev_; }

  FlopCounterScope(const FlopCounterScope&) = delete;
  FlopCounterScope& operator=(const FlopCounterScope&) = delete;

 private:
  FlopCount* prev_;
};

/// Runs `fn` with FLOP instrumentation enabled and returns the tallies.
template <typename Fn>
FlopCount flop_count_empirical(Fn&& fn) {
  FlopCount count;
  {
    FlopCounterScope scope(count);
    fn();
  }
  return count;
}

}  // namespace fir
