#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mcn/tensor.hpp"

namespace mcn {

/// Default negative slope of the leaky ReLU used throughout the network.
inline constexpr double kLreluSlope = 0.2;

// ---------------------------------------------------------------------------
// Differentiable operators. Every function records a backward rule when grad
// mode is enabled and any input requires a gradient.
// ---------------------------------------------------------------------------

/// 2-D cross-correlation with zero padding.
/// input (N, Cin, H, W), weight (Cout, Cin, kH, kW), bias (Cout) or undefined.
/// Output (N, Cout, (H + 2p - kH) / s + 1, (W + 2p - kW) / s + 1).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0);

/// Transposed convolution without padding.
/// input (N, Cin, H, W), weight (Cin, Cout, k, k), bias (Cout) or undefined.
/// Output (N, Cout, (H - 1) * s + k, (W - 1) * s + k).
template <typename T>
Tensor<T> tconv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                  std::size_t stride = 2);

template <typename T>
Tensor<T> lrelu(const Tensor<T>& input, double slope = kLreluSlope);

/// 2x2 non-overlapping max pooling. On ties the first element of the window
/// in row-major order wins and receives the gradient.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& input);

/// Concatenates rank-4 tensors along the channel axis, preserving order.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);

/// (N, C, H, W) -> (N, C / f^2, f H, f W). Channel c * f^2 + dy * f + dx
/// lands at sub-pixel (dy, dx) of output channel c.
template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& input, std::size_t factor);

/// Exact inverse of depth_to_space.
template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& input, std::size_t factor);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double factor);

/// sum_i weights[i] * parts[i]; all parts share one shape.
template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>> parts, std::span<const double> weights);

template <typename T>
Tensor<T> abs(const Tensor<T>& a);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// mean |a - b| over all elements.
template <typename T>
Tensor<T> l1_mean(const Tensor<T>& a, const Tensor<T>& b);

/// Anisotropic total variation of a rank-4 tensor:
/// mean |x[.., y, x+1] - x[.., y, x]| + mean |x[.., y+1, x] - x[.., y, x]|.
/// The last column (row) has no forward neighbour and is excluded.
template <typename T>
Tensor<T> total_variation(const Tensor<T>& input);

// ---------------------------------------------------------------------------
// Non-differentiable helpers (operate on values only; results are leaves).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> clamp(const Tensor<T>& input, T lo, T hi);

/// Stacks rank-4 tensors with N = 1 into one batch.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items);

/// Copies batch element `n` of a rank-4 tensor as an (1, C, H, W) tensor.
template <typename T>
Tensor<T> batch_item(const Tensor<T>& input, std::size_t n);

}  // namespace mcn
