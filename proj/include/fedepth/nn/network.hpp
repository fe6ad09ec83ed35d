#pragma once
// Forward evaluation and reverse-mode differentiation over a BlockGraph.
//
// Inference uses the free functions forward_blocks / forward. Training
// records every evaluated stage on a Tape; Tape::backward then walks the
// stages in reverse and returns gradients only for stages recorded as
// trainable. Stages before the first trainable one are never differentiated.

#include <map>
#include <optional>
#include <vector>

#include "fedepth/nn/graph.hpp"
#include "fedepth/nn/layers.hpp"
#include "fedepth/nn/weights.hpp"

namespace fedepth {

/// Runs blocks [first, last) on a batched input. Throws StructuralError if
/// the input does not match block `first`, NumericError naming the block on
/// non-finite output.
template <class T>
Tensor<T> forward_blocks(const BlockGraph& graph, const ModelWeights<T>& weights, const Tensor<T>& input,
                         std::size_t first, std::size_t last);

/// Runs the head on body features; returns logits [batch, classes].
template <class T>
Tensor<T> forward_head(const BlockGraph& graph, const ModelWeights<T>& weights, const Tensor<T>& features);

/// Full network: input -> logits.
template <class T>
Tensor<T> forward(const BlockGraph& graph, const ModelWeights<T>& weights, const Tensor<T>& input);

template <class T>
struct Gradients {
  std::map<std::size_t, std::vector<Tensor<T>>> body;  // only trainable blocks appear
  std::optional<std::vector<Tensor<T>>> head;
  std::optional<std::vector<Tensor<T>>> auxiliary;
};

template <class T>
class Tape {
 public:
  explicit Tape(const BlockGraph& graph) : graph_(&graph) {}

  /// Evaluates body block j. Parameters are read through `weights`, which
  /// must stay alive and unchanged until backward() returns.
  Tensor<T> block(const ModelWeights<T>& weights, std::size_t j, const Tensor<T>& input, bool trainable);

  /// Zero-pad / pool to a per-sample target shape (no parameters).
  Tensor<T> adapter(const Tensor<T>& input, const TensorShape& target);

  Tensor<T> head(const ModelWeights<T>& weights, const Tensor<T>& input, bool trainable);

  /// A trainable head that is not part of ModelWeights.
  Tensor<T> auxiliary(const Block& layers, const std::vector<Tensor<T>>& params, const Tensor<T>& input);

  /// Request d(loss)/d(input of the first stage) from the next backward().
  void keep_input_grad(bool keep) { keep_input_grad_ = keep; }

  /// Back-propagates d(loss)/d(last stage output). Throws UsageError if
  /// nothing was recorded. Clears the recording.
  Gradients<T> backward(const Tensor<T>& grad_output);

  const std::optional<Tensor<T>>& input_grad() const { return input_grad_; }
  bool empty() const { return stages_.empty(); }
  void clear() { stages_.clear(); }

 private:
  enum class StageKind { Body, Head, Adapter, Auxiliary };
  struct Stage {
    StageKind kind;
    std::size_t index = 0;
    const Block* layers = nullptr;
    std::span<const Tensor<T>> params;
    bool trainable = false;
    BlockCache<T> cache;
    TensorShape source;  // adapter input (per sample)
  };

  const BlockGraph* graph_;
  std::vector<Stage> stages_;
  bool keep_input_grad_ = false;
  std::optional<Tensor<T>> input_grad_;
};

}  // namespace fedepth
