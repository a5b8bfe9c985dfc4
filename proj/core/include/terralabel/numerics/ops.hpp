#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "terralabel/numerics/tensor.hpp"

// Differentiable operations. Each op records a tape node when any input
// requires grad; otherwise it is a plain forward computation. All ops are
// instantiated for float (training/inference) and double (gradient checks).
namespace terralabel::numerics {

// --- elementwise -----------------------------------------------------------

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s);
template <typename T> BasicTensor<T> mul_scalar(const BasicTensor<T>& a, T s);
/// s - a
template <typename T> BasicTensor<T> rsub_scalar(T s, const BasicTensor<T>& a);

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope = T(0.2));
template <typename T> BasicTensor<T> elu(const BasicTensor<T>& x, T alpha = T(1));
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> exp(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> log(const BasicTensor<T>& x);
/// Clamps into [lo, hi]; the gradient is zero where clamping is active.
template <typename T> BasicTensor<T> clamp(const BasicTensor<T>& x, T lo, T hi);

/// x + b broadcast along `axis` (b has shape [x.shape[axis]]).
template <typename T>
BasicTensor<T> add_broadcast(const BasicTensor<T>& x, const BasicTensor<T>& b, std::size_t axis);

/// Row i of x[R, F] multiplied by w[i] (w has shape [R]).
template <typename T>
BasicTensor<T> scale_rows(const BasicTensor<T>& x, const BasicTensor<T>& w);

// --- reductions / layout ---------------------------------------------------

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x, std::size_t axis);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x, std::size_t axis);

template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);
template <typename T> BasicTensor<T> log_softmax(const BasicTensor<T>& x, std::size_t axis);

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

// --- linear algebra --------------------------------------------------------

/// [m, k] x [k, n] -> [m, n]
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// --- image ops (NCHW) ------------------------------------------------------

/// Stride-1 convolution (cross-correlation) with symmetric zero padding.
/// input [N, Cin, H, W], weight [Cout, Cin, kh, kw] -> [N, Cout, H + 2p - kh + 1, W + 2p - kw + 1]
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, std::size_t padding);

/// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
template <typename T> BasicTensor<T> max_pool2x2(const BasicTensor<T>& x);

/// Nearest-neighbour 2x upsampling.
template <typename T> BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x);

/// Running statistics owned by a batch-norm layer (not differentiated).
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// Per-channel normalisation over (N, H, W). In training mode batch
/// statistics are used and the running estimates are updated; in eval mode
/// the running estimates are used.
template <typename T>
BasicTensor<T> batch_norm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                            const BasicTensor<T>& beta, BatchNormState<T>& state, bool training);

// --- graph ops -------------------------------------------------------------

/// out[e] = x[index[e]] for x [S, F] -> [E, F]
template <typename T>
BasicTensor<T> index_rows(const BasicTensor<T>& x, std::span<const std::uint32_t> index);

/// out[index[e]] += x[e] for x [E, F] -> [rows, F]
template <typename T>
BasicTensor<T> scatter_add_rows(const BasicTensor<T>& x, std::span<const std::uint32_t> index,
                                std::size_t rows);

/// Softmax of scores [E] within groups sharing the same segment id.
template <typename T>
BasicTensor<T> segment_softmax(const BasicTensor<T>& scores, std::span<const std::uint32_t> segment,
                               std::size_t segments);

}  // namespace terralabel::numerics
