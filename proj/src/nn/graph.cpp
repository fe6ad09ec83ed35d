#include "fedepth/nn/graph.hpp"

#include <cmath>
#include <numeric>

#include "fedepth/nn/layers.hpp"

namespace fedepth {

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense:
      return "dense";
    case LayerKind::Conv2d:
      return "conv2d";
    case LayerKind::Relu:
      return "relu";
    case LayerKind::GroupNorm:
      return "group-norm";
    case LayerKind::AvgPool:
      return "avg-pool";
    case LayerKind::Flatten:
      return "flatten";
    case LayerKind::ResidualAdd:
      return "residual-add";
    case LayerKind::ZeroPadAdapter:
      return "zero-pad-adapter";
    case LayerKind::ClassifierHead:
      return "classifier-head";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (LayerKind k : {LayerKind::Dense, LayerKind::Conv2d, LayerKind::Relu, LayerKind::GroupNorm, LayerKind::AvgPool,
                      LayerKind::Flatten, LayerKind::ResidualAdd, LayerKind::ZeroPadAdapter,
                      LayerKind::ClassifierHead}) {
    if (layer_kind_name(k) == name) return k;
  }
  throw StructuralError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.in = in;
  s.out = out;
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.in = in;
  s.out = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::group_norm(std::size_t channels, std::size_t groups) {
  LayerSpec s;
  s.kind = LayerKind::GroupNorm;
  s.in = channels;
  s.out = channels;
  s.groups = groups;
  return s;
}

LayerSpec LayerSpec::avg_pool(std::size_t window) {
  LayerSpec s;
  s.kind = LayerKind::AvgPool;
  s.pool = window;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}

LayerSpec LayerSpec::residual_add(std::size_t from) {
  LayerSpec s;
  s.kind = LayerKind::ResidualAdd;
  s.from = from;
  return s;
}

LayerSpec LayerSpec::zero_pad_adapter(std::vector<std::size_t> target) {
  LayerSpec s;
  s.kind = LayerKind::ZeroPadAdapter;
  s.target = std::move(target);
  return s;
}

LayerSpec LayerSpec::classifier_head(std::size_t in, std::size_t classes) {
  LayerSpec s = dense(in, classes);
  s.kind = LayerKind::ClassifierHead;
  return s;
}

bool LayerSpec::has_parameters() const {
  return kind == LayerKind::Dense || kind == LayerKind::ClassifierHead || kind == LayerKind::Conv2d ||
         kind == LayerKind::GroupNorm;
}

std::vector<TensorShape> LayerSpec::parameter_shapes() const {
  switch (kind) {
    case LayerKind::Dense:
    case LayerKind::ClassifierHead:
      return {TensorShape{out, in}, TensorShape{out}};
    case LayerKind::Conv2d:
      return {TensorShape{out, in, kernel, kernel}, TensorShape{out}};
    case LayerKind::GroupNorm:
      return {TensorShape{in}, TensorShape{in}};
    default:
      return {};
  }
}

TensorShape layer_output_shape(const LayerSpec& layer, const TensorShape& input) {
  auto fail = [&](const std::string& why) {
    return StructuralError(std::string(layer_kind_name(layer.kind)) + " on input " + input.to_string() + ": " + why);
  };
  switch (layer.kind) {
    case LayerKind::Dense:
    case LayerKind::ClassifierHead:
      if (input.rank() != 1 || input[0] != layer.in) throw fail("expects [" + std::to_string(layer.in) + "]");
      if (layer.out == 0) throw fail("zero output features");
      return TensorShape{layer.out};
    case LayerKind::Conv2d: {
      if (input.rank() != 3 || input[0] != layer.in) throw fail("expects " + std::to_string(layer.in) + " channels");
      if (layer.kernel == 0 || layer.stride == 0 || layer.out == 0) throw fail("bad hyperparameters");
      const std::size_t h = input[1] + 2 * layer.padding;
      const std::size_t w = input[2] + 2 * layer.padding;
      if (h < layer.kernel || w < layer.kernel) throw fail("kernel larger than padded input");
      return TensorShape{layer.out, (h - layer.kernel) / layer.stride + 1, (w - layer.kernel) / layer.stride + 1};
    }
    case LayerKind::Relu:
    case LayerKind::ResidualAdd:
      return input;
    case LayerKind::GroupNorm:
      if (input.rank() != 1 && input.rank() != 3) throw fail("expects rank 1 or 3");
      if (input[0] != layer.in) throw fail("channel count mismatch");
      if (layer.groups == 0 || layer.in % layer.groups != 0) throw fail("groups must divide channels");
      return input;
    case LayerKind::AvgPool:
      if (input.rank() != 3) throw fail("expects [c,h,w]");
      if (layer.pool == 0) return TensorShape{input[0], 1, 1};
      if (input[1] % layer.pool != 0 || input[2] % layer.pool != 0) throw fail("window must divide extent");
      return TensorShape{input[0], input[1] / layer.pool, input[2] / layer.pool};
    case LayerKind::Flatten:
      return TensorShape{input.numel()};
    case LayerKind::ZeroPadAdapter: {
      TensorShape target(layer.target);
      check_adapter(input, target);
      return target;
    }
  }
  throw fail("unhandled layer kind");
}

namespace {

// Walks one block's layers and returns every layer's output shape.
std::vector<TensorShape> walk_block(const Block& block, const TensorShape& input, const std::string& where) {
  std::vector<TensorShape> inputs;
  std::vector<TensorShape> outputs;
  TensorShape current = input;
  for (std::size_t i = 0; i < block.layers.size(); ++i) {
    const LayerSpec& layer = block.layers[i];
    inputs.push_back(current);
    try {
      if (layer.kind == LayerKind::ResidualAdd) {
        if (layer.from >= i) throw StructuralError("residual source must precede the add");
        check_adapter(inputs[layer.from], current);
      }
      current = layer_output_shape(layer, current);
    } catch (const StructuralError& e) {
      throw StructuralError(where + " layer " + std::to_string(i) + ": " + e.what());
    }
    outputs.push_back(current);
  }
  return outputs;
}

}  // namespace

BlockGraph::BlockGraph(TensorShape input, std::vector<Block> blocks, Block head)
    : input_(std::move(input)), blocks_(std::move(blocks)), head_(std::move(head)) {
  if (blocks_.empty()) throw StructuralError("graph needs at least one block");
  if (input_.rank() == 0) throw StructuralError("graph input shape is empty");
  shapes_.push_back(input_);
  for (std::size_t j = 0; j < blocks_.size(); ++j) {
    if (blocks_[j].layers.empty()) throw StructuralError("block " + std::to_string(j) + " has no layers");
    auto outs = walk_block(blocks_[j], shapes_.back(), "block " + std::to_string(j));
    shapes_.push_back(outs.back());
  }
  if (head_.layers.empty() || head_.layers.back().kind != LayerKind::ClassifierHead) {
    throw StructuralError("head must end with a classifier-head layer");
  }
  auto outs = walk_block(head_, shapes_.back(), "head");
  classes_ = outs.back()[0];
}

std::vector<TensorShape> BlockGraph::layer_output_shapes(std::size_t j) const {
  if (j == blocks_.size()) return walk_block(head_, shapes_.back(), "head");
  return walk_block(blocks_.at(j), shapes_.at(j), "block " + std::to_string(j));
}

namespace {
std::size_t count_params(const Block& block) {
  std::size_t n = 0;
  for (const auto& layer : block.layers) {
    for (const auto& s : layer.parameter_shapes()) n += s.numel();
  }
  return n;
}
}  // namespace

std::size_t BlockGraph::block_parameter_count(std::size_t j) const { return count_params(blocks_.at(j)); }
std::size_t BlockGraph::head_parameter_count() const { return count_params(head_); }

std::size_t BlockGraph::parameter_count() const {
  std::size_t n = head_parameter_count();
  for (std::size_t j = 0; j < blocks_.size(); ++j) n += block_parameter_count(j);
  return n;
}

namespace {

std::size_t scale_channels(std::size_t c, double ratio) {
  const auto scaled = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(c) + 0.5));
  return std::max<std::size_t>(1, scaled);
}

Block scale_block(const Block& block, TensorShape& current, double ratio) {
  Block out;
  for (const LayerSpec& original : block.layers) {
    LayerSpec layer = original;
    switch (layer.kind) {
      case LayerKind::Dense:
      case LayerKind::Conv2d:
        layer.in = current[0];
        layer.out = scale_channels(layer.out, ratio);
        break;
      case LayerKind::ClassifierHead:
        layer.in = current[0];
        break;
      case LayerKind::GroupNorm:
        layer.in = layer.out = current[0];
        layer.groups = std::gcd(layer.groups, layer.in);
        break;
      case LayerKind::ZeroPadAdapter:
        if (!layer.target.empty()) layer.target[0] = scale_channels(layer.target[0], ratio);
        break;
      default:
        break;
    }
    current = layer_output_shape(layer, current);
    out.layers.push_back(std::move(layer));
  }
  return out;
}

}  // namespace

BlockGraph width_scale(const BlockGraph& graph, double ratio) {
  if (!(ratio > 0.0) || ratio > 1.0) throw UsageError("width ratio must lie in (0, 1]");
  if (ratio == 1.0) return graph;
  TensorShape current = graph.input_shape();
  std::vector<Block> blocks;
  for (const auto& b : graph.blocks()) blocks.push_back(scale_block(b, current, ratio));
  Block head = scale_block(graph.head(), current, ratio);
  return BlockGraph(graph.input_shape(), std::move(blocks), std::move(head));
}

std::vector<std::size_t> hidden_widths(const BlockGraph& graph) {
  std::vector<std::size_t> widths;
  for (const auto& b : graph.blocks()) {
    for (const auto& layer : b.layers) {
      if (layer.kind == LayerKind::Dense || layer.kind == LayerKind::Conv2d) widths.push_back(layer.out);
    }
  }
  for (const auto& layer : graph.head().layers) {
    if (layer.kind == LayerKind::Dense || layer.kind == LayerKind::Conv2d) widths.push_back(layer.out);
  }
  return widths;
}

BlockGraph make_mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes) {
  std::vector<Block> blocks;
  std::size_t prev = inputs;
  for (std::size_t h : hidden) {
    blocks.push_back(Block{{LayerSpec::dense(prev, h), LayerSpec::relu()}});
    prev = h;
  }
  Block head{{LayerSpec::classifier_head(prev, classes)}};
  return BlockGraph(TensorShape{inputs}, std::move(blocks), std::move(head));
}

std::string_view head_strategy_name(HeadStrategy s) {
  return s == HeadStrategy::SkipConnection ? "skip-connection" : "auxiliary";
}

HeadStrategy parse_head_strategy(std::string_view name) {
  if (name == "skip-connection" || name == "skip") return HeadStrategy::SkipConnection;
  if (name == "auxiliary" || name == "auxiliary-classifier") return HeadStrategy::Auxiliary;
  throw UsageError("unknown head strategy '" + std::string(name) + "'");
}

Block auxiliary_head(const BlockGraph& graph, std::size_t j) {
  const TensorShape& shape = graph.block_output_shape(j);
  const std::size_t classes = graph.num_classes();
  if (shape.rank() == 1) return Block{{LayerSpec::classifier_head(shape[0], classes)}};
  if (shape.rank() != 3) throw StructuralError("auxiliary head needs a [features] or [c, h, w] input");
  std::size_t groups = 1;
  for (const auto& l : graph.head().layers) {
    if (l.kind == LayerKind::GroupNorm) {
      groups = l.groups;
      break;
    }
  }
  const std::size_t c = shape[0];
  return Block{{LayerSpec::group_norm(c, std::gcd(groups, c)), LayerSpec::relu(), LayerSpec::avg_pool(0),
                LayerSpec::flatten(), LayerSpec::classifier_head(c, classes)}};
}

BlockGraph make_preresnet20(std::size_t in_channels, std::size_t classes, std::size_t image_size,
                            std::size_t base_width, std::size_t norm_groups) {
  std::vector<Block> blocks;
  const std::size_t widths[3] = {base_width, 2 * base_width, 4 * base_width};
  std::size_t channels = base_width;
  for (std::size_t stage = 0; stage < 3; ++stage) {
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t out = widths[stage];
      const std::size_t stride = (stage > 0 && i == 0) ? 2 : 1;
      Block b;
      std::size_t from = 0;
      if (stage == 0 && i == 0) {
        b.layers.push_back(LayerSpec::conv2d(in_channels, base_width, 3, 1, 1));
        from = 1;
      }
      b.layers.push_back(LayerSpec::group_norm(channels, std::gcd(norm_groups, channels)));
      b.layers.push_back(LayerSpec::relu());
      b.layers.push_back(LayerSpec::conv2d(channels, out, 3, stride, 1));
      b.layers.push_back(LayerSpec::group_norm(out, std::gcd(norm_groups, out)));
      b.layers.push_back(LayerSpec::relu());
      b.layers.push_back(LayerSpec::conv2d(out, out, 3, 1, 1));
      b.layers.push_back(LayerSpec::residual_add(from));
      blocks.push_back(std::move(b));
      channels = out;
    }
  }
  Block head{{LayerSpec::group_norm(channels, std::gcd(norm_groups, channels)), LayerSpec::relu(),
              LayerSpec::avg_pool(0), LayerSpec::flatten(), LayerSpec::classifier_head(channels, classes)}};
  return BlockGraph(TensorShape{in_channels, image_size, image_size}, std::move(blocks), std::move(head));
}

}  // namespace fedepth
