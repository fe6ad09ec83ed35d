#include "fedepth/nn/network.hpp"

#include <string>

namespace fedepth {

namespace {

template <class T>
void check_input(const Tensor<T>& input, const TensorShape& expected, const std::string& where) {
  if (input.shape().rank() < 2 || !(input.shape().per_sample() == expected)) {
    throw StructuralError(where + ": expected per-sample shape " + expected.to_string() + ", got " +
                          input.shape().to_string());
  }
}

template <class T>
void check_finite(const Tensor<T>& t, std::size_t block, const std::string& where) {
  if (!t.all_finite()) throw NumericError("non-finite activation after " + where, block);
}

template <class T>
Tensor<T> run_block(const Block& block, std::span<const Tensor<T>> params, const Tensor<T>& input,
                    BlockCache<T>* cache, std::size_t index) {
  try {
    return block_forward<T>(block, params, input, cache);
  } catch (const NumericError& e) {
    if (e.block() != static_cast<std::size_t>(-1)) throw;
    throw NumericError(std::string(e.what()) + " in block " + std::to_string(index), index);
  }
}

}  // namespace

template <class T>
Tensor<T> forward_blocks(const BlockGraph& graph, const ModelWeights<T>& weights, const Tensor<T>& input,
                         std::size_t first, std::size_t last) {
  if (first > last || last > graph.num_blocks()) throw UsageError("block range out of bounds");
  check_input(input, graph.block_input_shape(first), "block " + std::to_string(first));
  Tensor<T> current = input;
  for (std::size_t j = first; j < last; ++j) {
    current = run_block<T>(graph.block(j), weights.body.at(j), current, nullptr, j);
    check_finite(current, j, "block " + std::to_string(j));
  }
  return current;
}

template <class T>
Tensor<T> forward_head(const BlockGraph& graph, const ModelWeights<T>& weights, const Tensor<T>& features) {
  check_input(features, graph.head_input_shape(), "head");
  Tensor<T> logits = run_block<T>(graph.head(), weights.head, features, nullptr, graph.num_blocks());
  check_finite(logits, graph.num_blocks(), "head");
  return logits;
}

template <class T>
Tensor<T> forward(const BlockGraph& graph, const ModelWeights<T>& weights, const Tensor<T>& input) {
  return forward_head(graph, weights, forward_blocks(graph, weights, input, 0, graph.num_blocks()));
}

template <class T>
Tensor<T> Tape<T>::block(const ModelWeights<T>& weights, std::size_t j, const Tensor<T>& input, bool trainable) {
  check_input(input, graph_->block_input_shape(j), "block " + std::to_string(j));
  Stage& s = stages_.emplace_back();
  s.kind = StageKind::Body;
  s.index = j;
  s.layers = &graph_->block(j);
  s.params = weights.body.at(j);
  s.trainable = trainable;
  Tensor<T> out = run_block<T>(*s.layers, s.params, input, &s.cache, j);
  check_finite(out, j, "block " + std::to_string(j));
  return out;
}

template <class T>
Tensor<T> Tape<T>::adapter(const Tensor<T>& input, const TensorShape& target) {
  Stage& s = stages_.emplace_back();
  s.kind = StageKind::Adapter;
  s.source = input.shape().per_sample();
  return zero_pad_adapter(input, target);
}

template <class T>
Tensor<T> Tape<T>::head(const ModelWeights<T>& weights, const Tensor<T>& input, bool trainable) {
  check_input(input, graph_->head_input_shape(), "head");
  Stage& s = stages_.emplace_back();
  s.kind = StageKind::Head;
  s.index = graph_->num_blocks();
  s.layers = &graph_->head();
  s.params = weights.head;
  s.trainable = trainable;
  Tensor<T> out = run_block<T>(*s.layers, s.params, input, &s.cache, s.index);
  check_finite(out, graph_->num_blocks(), "head");
  return out;
}

template <class T>
Tensor<T> Tape<T>::auxiliary(const Block& layers, const std::vector<Tensor<T>>& params, const Tensor<T>& input) {
  Stage& s = stages_.emplace_back();
  s.kind = StageKind::Auxiliary;
  s.layers = &layers;
  s.params = params;
  s.trainable = true;
  Tensor<T> out = run_block<T>(layers, s.params, input, &s.cache, graph_->num_blocks());
  check_finite(out, graph_->num_blocks(), "auxiliary head");
  return out;
}

template <class T>
Gradients<T> Tape<T>::backward(const Tensor<T>& grad_output) {
  if (stages_.empty()) throw UsageError("backward called without a recorded forward pass");
  input_grad_.reset();
  // Earliest stage whose input gradient is still needed.
  std::size_t first_needed = stages_.size();
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (stages_[i].trainable) {
      first_needed = i;
      break;
    }
  }
  if (keep_input_grad_) first_needed = 0;

  Gradients<T> grads;
  Tensor<T> grad = grad_output;
  for (std::size_t i = stages_.size(); i-- > first_needed;) {
    Stage& s = stages_[i];
    const bool need_input = i > first_needed || keep_input_grad_;
    if (s.kind == StageKind::Adapter) {
      if (!need_input) break;
      grad = zero_pad_adapter_backward(grad, s.source);
      continue;
    }
    std::vector<Tensor<T>> pg;
    if (s.trainable) {
      for (const auto& p : s.params) pg.emplace_back(p.shape());
    }
    auto g_in = block_backward<T>(*s.layers, s.params, s.cache, grad, pg, need_input);
    if (s.trainable) {
      switch (s.kind) {
        case StageKind::Body:
          grads.body[s.index] = std::move(pg);
          break;
        case StageKind::Head:
          grads.head = std::move(pg);
          break;
        default:
          grads.auxiliary = std::move(pg);
          break;
      }
    }
    if (!need_input) break;
    grad = std::move(*g_in);
  }
  if (keep_input_grad_) input_grad_ = std::move(grad);
  stages_.clear();
  return grads;
}

template Tensor<float> forward_blocks<float>(const BlockGraph&, const ModelWeights<float>&, const Tensor<float>&,
                                             std::size_t, std::size_t);
template Tensor<double> forward_blocks<double>(const BlockGraph&, const ModelWeights<double>&,
                                               const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> forward_head<float>(const BlockGraph&, const ModelWeights<float>&, const Tensor<float>&);
template Tensor<double> forward_head<double>(const BlockGraph&, const ModelWeights<double>&, const Tensor<double>&);
template Tensor<float> forward<float>(const BlockGraph&, const ModelWeights<float>&, const Tensor<float>&);
template Tensor<double> forward<double>(const BlockGraph&, const ModelWeights<double>&, const Tensor<double>&);
template class Tape<float>;
template class Tape<double>;

}  // namespace fedepth
