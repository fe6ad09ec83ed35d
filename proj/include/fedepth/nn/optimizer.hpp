#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedepth/nn/tensor.hpp"

namespace fedepth {

/// base * (1 + cos(pi * t / total)) / 2, clamped to t <= total.
double cosine_lr(double base, std::size_t t, std::size_t total);

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
  bool cosine = false;          // decay lr over total_steps
  std::size_t total_steps = 1;  // T of the cosine schedule
};

/// Parameters and gradients of one named group. The name keys the momentum
/// buffer, so it must be stable across steps.
template <class T>
struct ParamGroup {
  std::string name;
  std::vector<Tensor<T>>* params;
  const std::vector<Tensor<T>>* grads;
};

/// SGD with heavy-ball momentum:
///   v <- momentum * v + (g + weight_decay * w);  w <- w - lr(t) * v.
template <class T>
class Sgd {
 public:
  explicit Sgd(SgdConfig config) : config_(config) {}

  double lr() const;
  std::size_t step_count() const { return step_; }
  const SgdConfig& config() const { return config_; }

  /// Updates every group once and advances t. Throws NumericError on a
  /// non-finite gradient (parameters are left untouched in that case).
  void step(std::span<const ParamGroup<T>> groups);

  /// Drops the momentum buffers of one group.
  void reset(const std::string& name) { momentum_.erase(name); }

 private:
  SgdConfig config_;
  std::size_t step_ = 0;
  std::map<std::string, std::vector<Tensor<T>>> momentum_;
};

}  // namespace fedepth
