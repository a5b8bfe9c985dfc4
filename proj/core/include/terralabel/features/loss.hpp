#pragma once

#include <span>

#include "terralabel/numerics/tensor.hpp"

namespace terralabel::features {

inline constexpr double kBceClamp = 1e-7;

/// d = 2 * sum(x * y) / (sum(x) + sum(y)); 1 when both sums are zero.
double dice_per_class(std::span<const float> truth, std::span<const float> pred);

/// Mean over samples and classes of the per-(sample, class) Dice coefficient of
/// pred/truth [N, C, H, W]. A 1e-7 smoothing term in numerator and denominator
/// implements the empty-class convention without a branch.
template <typename T>
numerics::BasicTensor<T> dice_coefficient(const numerics::BasicTensor<T>& pred,
                                          const numerics::BasicTensor<T>& truth);

/// Binary cross-entropy averaged over classes and pixels; pred clamped to
/// [1e-7, 1 - 1e-7].
template <typename T>
numerics::BasicTensor<T> bce(const numerics::BasicTensor<T>& pred, const numerics::BasicTensor<T>& truth);

/// 0.5 * (1 - D) + 0.5 * BCE on sigmoid outputs.
template <typename T>
numerics::BasicTensor<T> combo_loss(const numerics::BasicTensor<T>& pred,
                                    const numerics::BasicTensor<T>& truth);

}  // namespace terralabel::features
