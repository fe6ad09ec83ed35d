#pragma once

#include <span>

#include "fedepth/nn/tensor.hpp"

namespace fedepth {

template <class T>
struct LossResult {
  T value;
  Tensor<T> grad;  // d(value)/d(logits)
};

/// -log softmax(logits)[label] for one sample, computed with log-sum-exp.
template <class T>
T cross_entropy(std::span<const T> logits, int label);

/// Batch mean of the per-sample cross-entropy and its gradient.
template <class T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Mean over samples of KL(softmax(target_i) || softmax(logits_i)) and its
/// gradient with respect to `logits` (the target side is held fixed).
template <class T>
LossResult<T> kl_logits(const Tensor<T>& target, const Tensor<T>& logits);

/// Per-sample KL(softmax(p) || softmax(q)).
template <class T>
T kl_divergence(std::span<const T> p_logits, std::span<const T> q_logits);

}  // namespace fedepth
