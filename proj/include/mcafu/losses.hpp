#pragma once

// Training loss surface: soft Dice, cross-entropy/BCE, and the weighted
// combination. Multi-class vs binary mode follows the logit channel count.

#include "mcafu/loss_ops.hpp"

namespace mcafu {

template <typename T>
Var<T> dice_loss(const Var<T>& logits, const Tensor<int32_t>& target, double smooth = 1.0) {
  return ops::soft_dice(logits, target, smooth);
}

template <typename T>
Var<T> bce_loss(const Var<T>& logits, const Tensor<int32_t>& target) {
  return logits.shape()[1] == 1 ? ops::sigmoid_bce(logits, target)
                                : ops::softmax_cross_entropy(logits, target);
}

template <typename T>
Var<T> combined_loss(const Var<T>& logits, const Tensor<int32_t>& target, double alpha,
                     double smooth = 1.0) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("combined_loss: alpha must lie in [0,1], got " +
                                std::to_string(alpha));
  if (alpha == 1.0) return dice_loss(logits, target, smooth);
  if (alpha == 0.0) return bce_loss(logits, target);
  return ops::add(ops::scale(dice_loss(logits, target, smooth), alpha),
                  ops::scale(bce_loss(logits, target), 1.0 - alpha));
}

}  // namespace mcafu
