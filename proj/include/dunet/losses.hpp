#pragma once

#include "dunet/ops.hpp"

namespace dunet {

inline constexpr double kBceClamp = 1e-7;
inline constexpr double kDiceSmooth = 1.0;

/// Mean binary cross-entropy. pred is clamped to [1e-7, 1 - 1e-7]; the
/// gradient is evaluated at the clamped value so saturated outputs keep learning.
template <typename Scalar>
Tensor<Scalar> bce_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target);

/// 1 - (2 sum(p y) + s) / (sum(p) + sum(y) + s), summed over the whole batch.
template <typename Scalar>
Tensor<Scalar> dice_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, double smooth = kDiceSmooth);

enum class LossKind { bce, dice };

LossKind parse_loss(std::string_view name);
std::string_view to_string(LossKind kind);

template <typename Scalar>
Tensor<Scalar> segmentation_loss(LossKind kind, const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  return kind == LossKind::bce ? bce_loss(pred, target) : dice_loss(pred, target);
}

}  // namespace dunet
