#pragma once

#include <cstdint>
#include <vector>

#include "fedepth/nn/graph.hpp"
#include "fedepth/nn/tensor.hpp"

namespace fedepth {

/// Parameters of a BlockGraph: one tensor list per body block plus the head.
template <class T>
struct ModelWeights {
  std::vector<std::vector<Tensor<T>>> body;
  std::vector<Tensor<T>> head;

  std::size_t parameter_count() const;
  bool all_finite() const;

  /// Throws StructuralError unless every tensor shape matches the graph.
  void check_matches(const BlockGraph& graph) const;

  template <class U>
  ModelWeights<U> cast() const {
    ModelWeights<U> out;
    for (const auto& block : body) {
      auto& dst = out.body.emplace_back();
      for (const auto& t : block) dst.push_back(t.template cast<U>());
    }
    for (const auto& t : head) out.head.push_back(t.template cast<U>());
    return out;
  }

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// All-zero weights shaped for the graph.
template <class T>
ModelWeights<T> zero_weights(const BlockGraph& graph);

/// Zero tensors shaped like the given list.
template <class T>
std::vector<Tensor<T>> zeros_like(const std::vector<Tensor<T>>& tensors);

/// He-normal weights for dense/conv kernels, zero biases, unit norm scales.
/// Deterministic in `seed`.
template <class T>
ModelWeights<T> init_weights(const BlockGraph& graph, std::uint64_t seed);

/// Same initialisation rule for a standalone layer list (auxiliary heads).
template <class T>
std::vector<Tensor<T>> init_block(const Block& block, std::uint64_t seed);

}  // namespace fedepth
