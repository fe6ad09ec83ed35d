#pragma once
// Block-structured network description.
//
// A BlockGraph is an ordered list of finest trainable blocks followed by a
// classifier head. Every block is a list of layers applied in order. Shapes
// below are per sample (no batch extent): [features] or [channels, h, w].

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "fedepth/nn/tensor.hpp"

namespace fedepth {

enum class LayerKind {
  Dense,
  Conv2d,
  Relu,
  GroupNorm,
  AvgPool,
  Flatten,
  ResidualAdd,
  ZeroPadAdapter,
  ClassifierHead,
};

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  // Dense / ClassifierHead: in -> out features. Conv2d: in -> out channels.
  // GroupNorm: channels in `in`, group count in `groups`.
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  // AvgPool window (== stride); 0 pools the whole spatial extent to 1x1.
  std::size_t pool = 0;
  // ResidualAdd: the skip source is the input of layer `from` in this block.
  std::size_t from = 0;
  // ZeroPadAdapter: target per-sample shape.
  std::vector<std::size_t> target;

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                          std::size_t padding);
  static LayerSpec relu();
  static LayerSpec group_norm(std::size_t channels, std::size_t groups);
  static LayerSpec avg_pool(std::size_t window);
  static LayerSpec flatten();
  static LayerSpec residual_add(std::size_t from = 0);
  static LayerSpec zero_pad_adapter(std::vector<std::size_t> target);
  static LayerSpec classifier_head(std::size_t in, std::size_t classes);

  bool has_parameters() const;
  /// Shapes of this layer's parameter tensors, in storage order.
  std::vector<TensorShape> parameter_shapes() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Per-sample output shape of one layer. ResidualAdd is shape-preserving.
TensorShape layer_output_shape(const LayerSpec& layer, const TensorShape& input);

struct Block {
  std::vector<LayerSpec> layers;
  friend bool operator==(const Block&, const Block&) = default;
};

class BlockGraph {
 public:
  BlockGraph() = default;
  /// Validates that consecutive shapes compose; throws StructuralError.
  BlockGraph(TensorShape input, std::vector<Block> blocks, Block head);

  const TensorShape& input_shape() const { return input_; }
  std::size_t num_blocks() const { return blocks_.size(); }
  const Block& block(std::size_t j) const { return blocks_.at(j); }
  const std::vector<Block>& blocks() const { return blocks_; }
  const Block& head() const { return head_; }

  /// Per-sample input shape of block j (j == num_blocks() gives the head input).
  const TensorShape& block_input_shape(std::size_t j) const { return shapes_.at(j); }
  const TensorShape& block_output_shape(std::size_t j) const { return shapes_.at(j + 1); }
  const TensorShape& head_input_shape() const { return shapes_.back(); }
  std::size_t num_classes() const { return classes_; }

  /// Per-sample output shape of every layer of block j (head if j == num_blocks()).
  std::vector<TensorShape> layer_output_shapes(std::size_t j) const;

  std::size_t block_parameter_count(std::size_t j) const;
  std::size_t head_parameter_count() const;
  std::size_t parameter_count() const;

  friend bool operator==(const BlockGraph& a, const BlockGraph& b) {
    return a.input_ == b.input_ && a.blocks_ == b.blocks_ && a.head_ == b.head_;
  }

 private:
  TensorShape input_;
  std::vector<Block> blocks_;
  Block head_;
  std::vector<TensorShape> shapes_;  // shapes_[j] = input of block j; back() = head input
  std::size_t classes_ = 0;
};

/// Copy of the graph with every hidden channel count c replaced by
/// max(1, floor(r * c + 0.5)). The network input and the class count are kept.
BlockGraph width_scale(const BlockGraph& graph, double ratio);

/// Hidden widths of the graph, in layer order (outputs of parametric layers
/// other than the classifier).
std::vector<std::size_t> hidden_widths(const BlockGraph& graph);

/// How an intermediate block group is connected to a classifier while it
/// trains: through the zero-pad adapter into the shared head, or through a
/// temporary auxiliary head of its own.
enum class HeadStrategy { SkipConnection, Auxiliary };

std::string_view head_strategy_name(HeadStrategy s);
HeadStrategy parse_head_strategy(std::string_view name);

/// Classifier for the output of block j: a linear layer for feature vectors,
/// norm + relu + global pool + linear for feature maps.
Block auxiliary_head(const BlockGraph& graph, std::size_t j);

// Reference architectures.

/// MLP with one dense+relu block per hidden width and a linear classifier.
BlockGraph make_mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes);

/// Pre-activation ResNet-20 for 32x32 images: 9 residual blocks of two 3x3
/// convolutions at widths 16/32/64 (scaled by `width`), group normalisation,
/// and a global-pool + linear head. Block 1 also holds the stem convolution.
BlockGraph make_preresnet20(std::size_t in_channels, std::size_t classes, std::size_t image_size = 32,
                            std::size_t base_width = 16, std::size_t norm_groups = 4);

}  // namespace fedepth
