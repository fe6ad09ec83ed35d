#include "fedepth/nn/weights.hpp"

#include <cmath>
#include <random>
#include <string>

#include "fedepth/util/rng.hpp"

namespace fedepth {

template <class T>
std::size_t ModelWeights<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& block : body) {
    for (const auto& t : block) n += t.size();
  }
  for (const auto& t : head) n += t.size();
  return n;
}

template <class T>
bool ModelWeights<T>::all_finite() const {
  for (const auto& block : body) {
    for (const auto& t : block) {
      if (!t.all_finite()) return false;
    }
  }
  for (const auto& t : head) {
    if (!t.all_finite()) return false;
  }
  return true;
}

namespace {

void check_block(const std::vector<TensorShape>& expected, const auto& tensors, const std::string& where) {
  if (expected.size() != tensors.size()) {
    throw StructuralError(where + ": expected " + std::to_string(expected.size()) + " tensors, got " +
                          std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (!(expected[i] == tensors[i].shape())) {
      throw StructuralError(where + " tensor " + std::to_string(i) + ": expected " + expected[i].to_string() +
                            ", got " + tensors[i].shape().to_string());
    }
  }
}

std::vector<TensorShape> block_shapes(const Block& block) {
  std::vector<TensorShape> shapes;
  for (const auto& layer : block.layers) {
    for (auto& s : layer.parameter_shapes()) shapes.push_back(std::move(s));
  }
  return shapes;
}

template <class T>
std::vector<Tensor<T>> init_layers(const Block& block, std::mt19937_64& rng) {
  std::vector<Tensor<T>> out;
  for (const auto& layer : block.layers) {
    switch (layer.kind) {
      case LayerKind::Dense:
      case LayerKind::ClassifierHead:
      case LayerKind::Conv2d: {
        auto shapes = layer.parameter_shapes();
        const std::size_t fan_in = shapes[0].numel() / shapes[0][0];
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        Tensor<T> w(shapes[0]);
        for (auto& v : w.values()) v = static_cast<T>(normal(rng));
        out.push_back(std::move(w));
        out.emplace_back(shapes[1]);
        break;
      }
      case LayerKind::GroupNorm: {
        auto shapes = layer.parameter_shapes();
        out.emplace_back(shapes[0], T(1));
        out.emplace_back(shapes[1], T(0));
        break;
      }
      default:
        break;
    }
  }
  return out;
}

}  // namespace

template <class T>
void ModelWeights<T>::check_matches(const BlockGraph& graph) const {
  if (body.size() != graph.num_blocks()) {
    throw StructuralError("weights have " + std::to_string(body.size()) + " blocks, graph has " +
                          std::to_string(graph.num_blocks()));
  }
  for (std::size_t j = 0; j < body.size(); ++j) {
    check_block(block_shapes(graph.block(j)), body[j], "block " + std::to_string(j));
  }
  check_block(block_shapes(graph.head()), head, "head");
}

template <class T>
ModelWeights<T> zero_weights(const BlockGraph& graph) {
  ModelWeights<T> w;
  for (const auto& block : graph.blocks()) {
    auto& dst = w.body.emplace_back();
    for (const auto& s : block_shapes(block)) dst.emplace_back(s);
  }
  for (const auto& s : block_shapes(graph.head())) w.head.emplace_back(s);
  return w;
}

template <class T>
std::vector<Tensor<T>> zeros_like(const std::vector<Tensor<T>>& tensors) {
  std::vector<Tensor<T>> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.emplace_back(t.shape());
  return out;
}

template <class T>
ModelWeights<T> init_weights(const BlockGraph& graph, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelWeights<T> w;
  for (const auto& block : graph.blocks()) w.body.push_back(init_layers<T>(block, rng));
  w.head = init_layers<T>(graph.head(), rng);
  return w;
}

template <class T>
std::vector<Tensor<T>> init_block(const Block& block, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return init_layers<T>(block, rng);
}

template struct ModelWeights<float>;
template struct ModelWeights<double>;
template ModelWeights<float> zero_weights<float>(const BlockGraph&);
template ModelWeights<double> zero_weights<double>(const BlockGraph&);
template std::vector<Tensor<float>> zeros_like<float>(const std::vector<Tensor<float>>&);
template std::vector<Tensor<double>> zeros_like<double>(const std::vector<Tensor<double>>&);
template ModelWeights<float> init_weights<float>(const BlockGraph&, std::uint64_t);
template ModelWeights<double> init_weights<double>(const BlockGraph&, std::uint64_t);
template std::vector<Tensor<float>> init_block<float>(const Block&, std::uint64_t);
template std::vector<Tensor<double>> init_block<double>(const Block&, std::uint64_t);

}  // namespace fedepth
