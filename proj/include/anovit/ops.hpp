#pragma once

// Differentiable primitives. Each op computes its forward value eagerly and,
// when a tape is active and any input requires a gradient, registers the
// closure that maps the output gradient to input gradients.
//
// Image tensors are NHWC: [B, H, W, C], or [H, W, C] for a single image.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "anovit/autograd.hpp"

namespace anovit::ops {

// y = x W (+ b) over the last axis of x. x: [..., Din], W: [Din, Dout], b: [Dout].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias = std::nullopt);

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  return linear(x, weight, std::optional<Var<T>>(bias));
}

// [.., M, K] x [.., K, N] -> [.., M, N] with matching leading (batch) extents.
// With transpose_b the second operand is [.., N, K].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_b = false);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

// x + y where y's shape equals the trailing axes of x (bias, positional table).
template <typename T>
Var<T> add_trailing(const Var<T>& x, const Var<T>& y);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

// Max-subtracted softmax along `axis`.
template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis);

// Normalizes the last axis, then applies gamma * xhat + beta.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-6));

template <typename T>
Var<T> relu(const Var<T>& x);

// While alive, relu on this thread folds the sign pattern of its inputs into
// a fingerprint. Finite-difference checks use it to detect probes that cross
// a kink, where central differences are meaningless.
class ActivationFingerprint {
 public:
  ActivationFingerprint();
  ~ActivationFingerprint();
  ActivationFingerprint(const ActivationFingerprint&) = delete;
  ActivationFingerprint& operator=(const ActivationFingerprint&) = delete;

  static ActivationFingerprint* active() noexcept { return active_; }
  void fold(std::uint64_t word) noexcept { hash_ = (hash_ ^ word) * 0x100000001b3ull; }
  std::uint64_t value() const noexcept { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
  ActivationFingerprint* previous_;
  static thread_local ActivationFingerprint* active_;
};

// tanh approximation.
template <typename T>
Var<T> gelu(const Var<T>& x);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length);

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

// Inserts `row` ([D]) as row 0 of every [N, D] matrix in x ([B, N, D]).
template <typename T>
Var<T> prepend_row(const Var<T>& row, const Var<T>& x);

// Output extent of a strided convolution; throws GeometryError if < 1.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);
// (in - 1) * stride - 2 * padding + kernel; throws GeometryError if < 1 or if
// kernel < stride or padding >= kernel.
std::size_t transposed_conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                       std::size_t padding);

// Cross-correlation. weight: [K, K, Cin, Cout].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, std::size_t stride, std::size_t padding);

// Adjoint of conv2d with the same geometry. weight: [K, K, Cin, Cout] where
// Cin is this op's input channel count.
template <typename T>
Var<T> transposed_conv2d(const Var<T>& x, const Var<T>& weight, std::size_t stride, std::size_t padding);

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t target_h, std::size_t target_w);

// factor * sum((x - target)^2), accumulated in double. Returns shape [1].
template <typename T>
Var<T> sum_squared_error(const Var<T>& x, const NdArray<T>& target, double factor = 1.0);

// sum(x * weights); weights is a constant of x's shape. Returns shape [1].
template <typename T>
Var<T> sum_product(const Var<T>& x, const NdArray<T>& weights);

}  // namespace anovit::ops
