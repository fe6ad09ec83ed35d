#pragma once
// Forward and backward rules for single layers and whole blocks.
//
// Activations carry a leading batch extent. A block's parameters are stored as
// one flat list of tensors: the parameter tensors of its layers in order.

#include <optional>
#include <span>
#include <vector>

#include "fedepth/nn/graph.hpp"
#include "fedepth/nn/tensor.hpp"

namespace fedepth {

/// Throws StructuralError unless `source` can be zero-padded (channels or
/// features) and average-pooled (integer spatial factor) to `target`.
/// Both shapes are per sample.
void check_adapter(const TensorShape& source, const TensorShape& target);

/// Zero-pad / pool a batched activation to the per-sample target shape.
/// Leading channels hold the (pooled) source values; the rest are zero.
template <class T>
Tensor<T> zero_pad_adapter(const Tensor<T>& input, const TensorShape& target);

/// Gradient of zero_pad_adapter with respect to its input.
template <class T>
Tensor<T> zero_pad_adapter_backward(const Tensor<T>& grad_out, const TensorShape& source);

template <class T>
struct LayerCache {
  Tensor<T> input;
  Tensor<T> normalized;  // GroupNorm: x-hat
  std::vector<T> inv_std;  // GroupNorm: one per (sample, group)
};

template <class T>
Tensor<T> layer_forward(const LayerSpec& layer, std::span<const Tensor<T>> params, const Tensor<T>& input,
                        LayerCache<T>* cache);

/// Accumulates parameter gradients into `param_grads` (skipped when empty)
/// and returns the input gradient when `need_input_grad`.
template <class T>
std::optional<Tensor<T>> layer_backward(const LayerSpec& layer, std::span<const Tensor<T>> params,
                                        const LayerCache<T>& cache, const Tensor<T>& grad_out,
                                        std::span<Tensor<T>> param_grads, bool need_input_grad);

template <class T>
struct BlockCache {
  std::vector<LayerCache<T>> layers;
  std::vector<TensorShape> input_shapes;  // batched input shape of every layer
};

/// Number of parameter tensors owned by the block.
std::size_t block_tensor_count(const Block& block);

template <class T>
Tensor<T> block_forward(const Block& block, std::span<const Tensor<T>> params, const Tensor<T>& input,
                        BlockCache<T>* cache);

template <class T>
std::optional<Tensor<T>> block_backward(const Block& block, std::span<const Tensor<T>> params,
                                        const BlockCache<T>& cache, const Tensor<T>& grad_out,
                                        std::span<Tensor<T>> param_grads, bool need_input_grad);

}  // namespace fedepth
