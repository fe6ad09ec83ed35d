#include "fedepth/nn/layers.hpp"

#include <cmath>
#include <string>

#include "fedepth/kernels/kernels.hpp"

namespace fedepth {

namespace {

constexpr double kNormEps = 1e-5;

std::size_t spatial_factor(const TensorShape& source, const TensorShape& target) {
  if (source.rank() != 3) return 1;
  return source[1] / target[1];
}

}  // namespace

void check_adapter(const TensorShape& source, const TensorShape& target) {
  auto fail = [&](const std::string& why) {
    return StructuralError("adapter " + source.to_string() + " -> " + target.to_string() + ": " + why);
  };
  if (source.rank() != target.rank()) throw fail("rank differs");
  if (source.rank() != 1 && source.rank() != 3) throw fail("expects rank 1 or 3");
  if (target[0] < source[0]) throw fail("target has fewer channels than source");
  if (source.rank() == 3) {
    if (target[1] > source[1] || target[2] > source[2]) throw fail("target is spatially larger than source");
    if (source[1] % target[1] != 0 || source[2] % target[2] != 0) throw fail("spatial extents must divide");
    if (source[1] / target[1] != source[2] / target[2]) throw fail("pooling factor must be square");
  }
}

template <class T>
Tensor<T> zero_pad_adapter(const Tensor<T>& input, const TensorShape& target) {
  const TensorShape source = input.shape().per_sample();
  check_adapter(source, target);
  const std::size_t batch = input.shape()[0];
  Tensor<T> out(target.batched(batch));
  const std::size_t in_row = source.numel();
  const std::size_t out_row = target.numel();
  if (source.rank() == 1) {
    for (std::size_t n = 0; n < batch; ++n) {
      std::copy_n(input.data() + n * in_row, in_row, out.data() + n * out_row);
    }
    return out;
  }
  const std::size_t s = spatial_factor(source, target);
  const std::size_t h = source[1], w = source[2], oh = target[1], ow = target[2];
  const T inv_area = T(1) / static_cast<T>(s * s);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < source[0]; ++c) {
      const T* src = input.data() + n * in_row + c * h * w;
      T* dst = out.data() + n * out_row + c * oh * ow;
      if (s == 1) {
        std::copy_n(src, h * w, dst);
        continue;
      }
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          T acc = 0;
          for (std::size_t dy = 0; dy < s; ++dy) {
            for (std::size_t dx = 0; dx < s; ++dx) acc += src[(y * s + dy) * w + x * s + dx];
          }
          dst[y * ow + x] = acc * inv_area;
        }
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> zero_pad_adapter_backward(const Tensor<T>& grad_out, const TensorShape& source) {
  const TensorShape target = grad_out.shape().per_sample();
  check_adapter(source, target);
  const std::size_t batch = grad_out.shape()[0];
  Tensor<T> grad_in(source.batched(batch));
  const std::size_t in_row = source.numel();
  const std::size_t out_row = target.numel();
  if (source.rank() == 1) {
    for (std::size_t n = 0; n < batch; ++n) {
      std::copy_n(grad_out.data() + n * out_row, in_row, grad_in.data() + n * in_row);
    }
    return grad_in;
  }
  const std::size_t s = spatial_factor(source, target);
  const std::size_t h = source[1], w = source[2], oh = target[1], ow = target[2];
  const T inv_area = T(1) / static_cast<T>(s * s);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < source[0]; ++c) {
      const T* g = grad_out.data() + n * out_row + c * oh * ow;
      T* dst = grad_in.data() + n * in_row + c * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) dst[y * w + x] = g[(y / s) * ow + x / s] * inv_area;
      }
    }
  }
  return grad_in;
}

namespace {

template <class T>
Tensor<T> dense_forward(const LayerSpec& layer, std::span<const Tensor<T>> params, const Tensor<T>& input) {
  const auto& k = kernels::active_kernels<T>();
  const std::size_t batch = input.shape()[0];
  const Tensor<T>& weight = params[0];
  const Tensor<T>& bias = params[1];
  Tensor<T> out(TensorShape{batch, layer.out});
  for (std::size_t n = 0; n < batch; ++n) {
    const T* x = input.data() + n * layer.in;
    T* y = out.data() + n * layer.out;
    for (std::size_t o = 0; o < layer.out; ++o) y[o] = k.dot(weight.data() + o * layer.in, x, layer.in) + bias[o];
  }
  return out;
}

template <class T>
std::optional<Tensor<T>> dense_backward(const LayerSpec& layer, std::span<const Tensor<T>> params,
                                        const Tensor<T>& input, const Tensor<T>& grad_out,
                                        std::span<Tensor<T>> param_grads, bool need_input_grad) {
  const auto& k = kernels::active_kernels<T>();
  const std::size_t batch = input.shape()[0];
  if (!param_grads.empty()) {
    Tensor<T>& gw = param_grads[0];
    Tensor<T>& gb = param_grads[1];
    for (std::size_t n = 0; n < batch; ++n) {
      const T* x = input.data() + n * layer.in;
      const T* g = grad_out.data() + n * layer.out;
      for (std::size_t o = 0; o < layer.out; ++o) {
        k.axpy(g[o], x, gw.data() + o * layer.in, layer.in);
        gb[o] += g[o];
      }
    }
  }
  if (!need_input_grad) return std::nullopt;
  Tensor<T> grad_in(input.shape());
  const Tensor<T>& weight = params[0];
  for (std::size_t n = 0; n < batch; ++n) {
    const T* g = grad_out.data() + n * layer.out;
    T* dx = grad_in.data() + n * layer.in;
    for (std::size_t o = 0; o < layer.out; ++o) k.axpy(g[o], weight.data() + o * layer.in, dx, layer.in);
  }
  return grad_in;
}

struct ConvGeometry {
  std::size_t c, h, w, k, stride, pad, oh, ow;
  std::size_t patch() const { return c * k * k; }
  std::size_t positions() const { return oh * ow; }
};

ConvGeometry conv_geometry(const LayerSpec& layer, const TensorShape& batched_input) {
  const std::size_t h = batched_input[2], w = batched_input[3];
  return {layer.in,
          h,
          w,
          layer.kernel,
          layer.stride,
          layer.padding,
          (h + 2 * layer.padding - layer.kernel) / layer.stride + 1,
          (w + 2 * layer.padding - layer.kernel) / layer.stride + 1};
}

// cols[q, p] with q = (channel, ky, kx) and p = output position.
template <class T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * positions;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.ow + ox] = inside ? image[(c * g.h + iy) * g.w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* image) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * positions;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            image[(c * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

template <class T>
Tensor<T> conv_forward(const LayerSpec& layer, std::span<const Tensor<T>> params, const Tensor<T>& input) {
  const auto& k = kernels::active_kernels<T>();
  const ConvGeometry g = conv_geometry(layer, input.shape());
  const std::size_t batch = input.shape()[0];
  const std::size_t patch = g.patch(), positions = g.positions();
  const Tensor<T>& weight = params[0];
  const Tensor<T>& bias = params[1];
  Tensor<T> out(TensorShape{batch, layer.out, g.oh, g.ow});
  std::vector<T> cols(patch * positions);
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(input.data() + n * g.c * g.h * g.w, g, cols.data());
    T* y = out.data() + n * layer.out * positions;
    for (std::size_t o = 0; o < layer.out; ++o) {
      T* yo = y + o * positions;
      std::fill_n(yo, positions, bias[o]);
      const T* wo = weight.data() + o * patch;
      for (std::size_t q = 0; q < patch; ++q) k.axpy(wo[q], cols.data() + q * positions, yo, positions);
    }
  }
  return out;
}

template <class T>
std::optional<Tensor<T>> conv_backward(const LayerSpec& layer, std::span<const Tensor<T>> params,
                                       const Tensor<T>& input, const Tensor<T>& grad_out,
                                       std::span<Tensor<T>> param_grads, bool need_input_grad) {
  const auto& k = kernels::active_kernels<T>();
  const ConvGeometry g = conv_geometry(layer, input.shape());
  const std::size_t batch = input.shape()[0];
  const std::size_t patch = g.patch(), positions = g.positions();
  const Tensor<T>& weight = params[0];
  std::optional<Tensor<T>> grad_in;
  if (need_input_grad) grad_in.emplace(input.shape());
  std::vector<T> cols(patch * positions);
  std::vector<T> dcols(patch * positions);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* gy = grad_out.data() + n * layer.out * positions;
    if (!param_grads.empty()) {
      im2col(input.data() + n * g.c * g.h * g.w, g, cols.data());
      Tensor<T>& gw = param_grads[0];
      Tensor<T>& gb = param_grads[1];
      for (std::size_t o = 0; o < layer.out; ++o) {
        const T* gyo = gy + o * positions;
        T* gwo = gw.data() + o * patch;
        for (std::size_t q = 0; q < patch; ++q) gwo[q] += k.dot(gyo, cols.data() + q * positions, positions);
        gb[o] += k.sum(gyo, positions);
      }
    }
    if (need_input_grad) {
      std::fill(dcols.begin(), dcols.end(), T(0));
      for (std::size_t o = 0; o < layer.out; ++o) {
        const T* gyo = gy + o * positions;
        const T* wo = weight.data() + o * patch;
        for (std::size_t q = 0; q < patch; ++q) k.axpy(wo[q], gyo, dcols.data() + q * positions, positions);
      }
      col2im(dcols.data(), g, grad_in->data() + n * g.c * g.h * g.w);
    }
  }
  return grad_in;
}

template <class T>
Tensor<T> group_norm_forward(const LayerSpec& layer, std::span<const Tensor<T>> params, const Tensor<T>& input,
                             LayerCache<T>* cache) {
  const std::size_t batch = input.shape()[0];
  const std::size_t channels = layer.in;
  const std::size_t spatial = input.size() / (batch * channels);
  const std::size_t per_group = channels / layer.groups;
  const std::size_t group_size = per_group * spatial;
  const Tensor<T>& gamma = params[0];
  const Tensor<T>& beta = params[1];
  Tensor<T> out(input.shape());
  Tensor<T> xhat(input.shape());
  std::vector<T> inv_std(batch * layer.groups);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t grp = 0; grp < layer.groups; ++grp) {
      const std::size_t offset = (n * channels + grp * per_group) * spatial;
      const T* x = input.data() + offset;
      T mean = 0;
      for (std::size_t i = 0; i < group_size; ++i) mean += x[i];
      mean /= static_cast<T>(group_size);
      T var = 0;
      for (std::size_t i = 0; i < group_size; ++i) var += (x[i] - mean) * (x[i] - mean);
      var /= static_cast<T>(group_size);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
      inv_std[n * layer.groups + grp] = inv;
      for (std::size_t cc = 0; cc < per_group; ++cc) {
        const std::size_t c = grp * per_group + cc;
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t idx = offset + cc * spatial + s;
          xhat[idx] = (input[idx] - mean) * inv;
          out[idx] = xhat[idx] * gamma[c] + beta[c];
        }
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <class T>
std::optional<Tensor<T>> group_norm_backward(const LayerSpec& layer, std::span<const Tensor<T>> params,
                                             const LayerCache<T>& cache, const Tensor<T>& grad_out,
                                             std::span<Tensor<T>> param_grads, bool need_input_grad) {
  const Tensor<T>& xhat = cache.normalized;
  const std::size_t batch = xhat.shape()[0];
  const std::size_t channels = layer.in;
  const std::size_t spatial = xhat.size() / (batch * channels);
  const std::size_t per_group = channels / layer.groups;
  const std::size_t group_size = per_group * spatial;
  const Tensor<T>& gamma = params[0];
  if (!param_grads.empty()) {
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t offset = (n * channels + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) {
          param_grads[0][c] += grad_out[offset + s] * xhat[offset + s];
          param_grads[1][c] += grad_out[offset + s];
        }
      }
    }
  }
  if (!need_input_grad) return std::nullopt;
  Tensor<T> grad_in(xhat.shape());
  std::vector<T> dxhat(group_size);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t grp = 0; grp < layer.groups; ++grp) {
      const std::size_t offset = (n * channels + grp * per_group) * spatial;
      T mean_d = 0, mean_dx = 0;
      for (std::size_t cc = 0; cc < per_group; ++cc) {
        const T gm = gamma[grp * per_group + cc];
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t i = cc * spatial + s;
          dxhat[i] = grad_out[offset + i] * gm;
          mean_d += dxhat[i];
          mean_dx += dxhat[i] * xhat[offset + i];
        }
      }
      mean_d /= static_cast<T>(group_size);
      mean_dx /= static_cast<T>(group_size);
      const T inv = cache.inv_std[n * layer.groups + grp];
      for (std::size_t i = 0; i < group_size; ++i) {
        grad_in[offset + i] = inv * (dxhat[i] - mean_d - xhat[offset + i] * mean_dx);
      }
    }
  }
  return grad_in;
}

template <class T>
Tensor<T> avg_pool_forward(const LayerSpec& layer, const Tensor<T>& input) {
  const TensorShape out_shape = layer_output_shape(layer, input.shape().per_sample()).batched(input.shape()[0]);
  Tensor<T> out(out_shape);
  const std::size_t planes = input.shape()[0] * input.shape()[1];
  const std::size_t h = input.shape()[2], w = input.shape()[3];
  const std::size_t oh = out_shape[2], ow = out_shape[3];
  const std::size_t sy = h / oh, sx = w / ow;
  const T inv_area = T(1) / static_cast<T>(sy * sx);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = input.data() + p * h * w;
    T* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        T acc = 0;
        for (std::size_t dy = 0; dy < sy; ++dy) {
          for (std::size_t dx = 0; dx < sx; ++dx) acc += src[(y * sy + dy) * w + x * sx + dx];
        }
        dst[y * ow + x] = acc * inv_area;
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> avg_pool_backward(const Tensor<T>& grad_out, const TensorShape& input_shape) {
  Tensor<T> grad_in(input_shape);
  const std::size_t planes = input_shape[0] * input_shape[1];
  const std::size_t h = input_shape[2], w = input_shape[3];
  const std::size_t oh = grad_out.shape()[2], ow = grad_out.shape()[3];
  const std::size_t sy = h / oh, sx = w / ow;
  const T inv_area = T(1) / static_cast<T>(sy * sx);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* g = grad_out.data() + p * oh * ow;
    T* dst = grad_in.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) dst[y * w + x] = g[(y / sy) * ow + x / sx] * inv_area;
    }
  }
  return grad_in;
}

}  // namespace

template <class T>
Tensor<T> layer_forward(const LayerSpec& layer, std::span<const Tensor<T>> params, const Tensor<T>& input,
                        LayerCache<T>* cache) {
  if (cache) cache->input = input;
  switch (layer.kind) {
    case LayerKind::Dense:
    case LayerKind::ClassifierHead:
      return dense_forward(layer, params, input);
    case LayerKind::Conv2d:
      return conv_forward(layer, params, input);
    case LayerKind::Relu: {
      Tensor<T> out(input.shape());
      kernels::active_kernels<T>().relu(input.data(), out.data(), input.size());
      return out;
    }
    case LayerKind::GroupNorm:
      return group_norm_forward(layer, params, input, cache);
    case LayerKind::AvgPool:
      return avg_pool_forward(layer, input);
    case LayerKind::Flatten: {
      Tensor<T> out = input;
      out.reshape(TensorShape{input.shape()[0], input.size() / input.shape()[0]});
      return out;
    }
    case LayerKind::ZeroPadAdapter:
      return zero_pad_adapter(input, TensorShape(layer.target));
    case LayerKind::ResidualAdd:
      throw UsageError("residual-add is evaluated by block_forward");
  }
  throw UsageError("unhandled layer kind");
}

template <class T>
std::optional<Tensor<T>> layer_backward(const LayerSpec& layer, std::span<const Tensor<T>> params,
                                        const LayerCache<T>& cache, const Tensor<T>& grad_out,
                                        std::span<Tensor<T>> param_grads, bool need_input_grad) {
  const Tensor<T>& input = cache.input;
  switch (layer.kind) {
    case LayerKind::Dense:
    case LayerKind::ClassifierHead:
      return dense_backward(layer, params, input, grad_out, param_grads, need_input_grad);
    case LayerKind::Conv2d:
      return conv_backward(layer, params, input, grad_out, param_grads, need_input_grad);
    case LayerKind::GroupNorm:
      return group_norm_backward(layer, params, cache, grad_out, param_grads, need_input_grad);
    default:
      break;
  }
  if (!need_input_grad) return std::nullopt;
  switch (layer.kind) {
    case LayerKind::Relu: {
      Tensor<T> grad_in(input.shape());
      kernels::active_kernels<T>().relu_backward(input.data(), grad_out.data(), grad_in.data(), input.size());
      return grad_in;
    }
    case LayerKind::AvgPool:
      return avg_pool_backward(grad_out, input.shape());
    case LayerKind::Flatten: {
      Tensor<T> grad_in = grad_out;
      grad_in.reshape(input.shape());
      return grad_in;
    }
    case LayerKind::ZeroPadAdapter:
      return zero_pad_adapter_backward(grad_out, input.shape().per_sample());
    default:
      throw UsageError("unhandled layer kind in backward");
  }
}

std::size_t block_tensor_count(const Block& block) {
  std::size_t n = 0;
  for (const auto& layer : block.layers) n += layer.parameter_shapes().size();
  return n;
}

template <class T>
Tensor<T> block_forward(const Block& block, std::span<const Tensor<T>> params, const Tensor<T>& input,
                        BlockCache<T>* cache) {
  const std::size_t n_layers = block.layers.size();
  if (cache) {
    cache->layers.assign(n_layers, {});
    cache->input_shapes.clear();
  }
  // Residual sources are kept whether or not a cache is requested.
  std::vector<std::optional<Tensor<T>>> sources(n_layers);
  for (const auto& layer : block.layers) {
    if (layer.kind == LayerKind::ResidualAdd) sources.at(layer.from).emplace();
  }
  Tensor<T> current = input;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const LayerSpec& layer = block.layers[i];
    if (cache) cache->input_shapes.push_back(current.shape());
    if (sources[i]) *sources[i] = current;
    const std::size_t n_params = layer.parameter_shapes().size();
    if (layer.kind == LayerKind::ResidualAdd) {
      Tensor<T> skip = zero_pad_adapter(*sources[layer.from], current.shape().per_sample());
      kernels::active_kernels<T>().add(skip.data(), current.data(), current.size());
    } else {
      current = layer_forward<T>(layer, params.subspan(offset, n_params), current, cache ? &cache->layers[i] : nullptr);
      // A later relu would hide NaN, so parameterised outputs are checked here.
      if (n_params > 0 && !current.all_finite()) {
        throw NumericError("non-finite output of " + std::string(layer_kind_name(layer.kind)) + " layer " +
                           std::to_string(i));
      }
    }
    offset += n_params;
  }
  return current;
}

template <class T>
std::optional<Tensor<T>> block_backward(const Block& block, std::span<const Tensor<T>> params,
                                        const BlockCache<T>& cache, const Tensor<T>& grad_out,
                                        std::span<Tensor<T>> param_grads, bool need_input_grad) {
  const std::size_t n_layers = block.layers.size();
  if (cache.input_shapes.size() != n_layers) throw UsageError("block backward without a recorded forward");
  std::vector<std::size_t> offsets(n_layers + 1, 0);
  for (std::size_t i = 0; i < n_layers; ++i) offsets[i + 1] = offsets[i] + block.layers[i].parameter_shapes().size();

  std::vector<std::optional<Tensor<T>>> skip_grads(n_layers);
  Tensor<T> grad = grad_out;
  for (std::size_t i = n_layers; i-- > 0;) {
    const LayerSpec& layer = block.layers[i];
    const bool want_input = need_input_grad || i > 0;
    const std::size_t n_params = offsets[i + 1] - offsets[i];
    if (layer.kind == LayerKind::ResidualAdd) {
      Tensor<T> g_skip = zero_pad_adapter_backward(grad, cache.input_shapes[layer.from].per_sample());
      auto& slot = skip_grads[layer.from];
      if (slot) {
        kernels::active_kernels<T>().add(g_skip.data(), slot->data(), slot->size());
      } else {
        slot = std::move(g_skip);
      }
    } else {
      auto pg = param_grads.empty() ? std::span<Tensor<T>>{} : param_grads.subspan(offsets[i], n_params);
      auto g_in = layer_backward<T>(layer, params.subspan(offsets[i], n_params), cache.layers[i], grad, pg, want_input);
      if (!want_input) return std::nullopt;
      grad = std::move(*g_in);
    }
    if (skip_grads[i]) kernels::active_kernels<T>().add(skip_grads[i]->data(), grad.data(), grad.size());
  }
  if (!need_input_grad) return std::nullopt;
  return grad;
}

#define FEDEPTH_INSTANTIATE_LAYERS(T)                                                                           \
  template Tensor<T> zero_pad_adapter<T>(const Tensor<T>&, const TensorShape&);                                 \
  template Tensor<T> zero_pad_adapter_backward<T>(const Tensor<T>&, const TensorShape&);                        \
  template Tensor<T> layer_forward<T>(const LayerSpec&, std::span<const Tensor<T>>, const Tensor<T>&,           \
                                      LayerCache<T>*);                                                          \
  template std::optional<Tensor<T>> layer_backward<T>(const LayerSpec&, std::span<const Tensor<T>>,             \
                                                      const LayerCache<T>&, const Tensor<T>&,                   \
                                                      std::span<Tensor<T>>, bool);                              \
  template Tensor<T> block_forward<T>(const Block&, std::span<const Tensor<T>>, const Tensor<T>&,               \
                                      BlockCache<T>*);                                                          \
  template std::optional<Tensor<T>> block_backward<T>(const Block&, std::span<const Tensor<T>>,                 \
                                                      const BlockCache<T>&, const Tensor<T>&,                   \
                                                      std::span<Tensor<T>>, bool);

FEDEPTH_INSTANTIATE_LAYERS(float)
FEDEPTH_INSTANTIATE_LAYERS(double)

#undef FEDEPTH_INSTANTIATE_LAYERS

}  // namespace fedepth
