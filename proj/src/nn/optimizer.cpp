#include "fedepth/nn/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fedepth/kernels/kernels.hpp"

namespace fedepth {

double cosine_lr(double base, std::size_t t, std::size_t total) {
  if (total == 0) return base;
  const double frac = static_cast<double>(std::min(t, total)) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

template <class T>
double Sgd<T>::lr() const {
  return config_.cosine ? cosine_lr(config_.lr, step_, config_.total_steps) : config_.lr;
}

template <class T>
void Sgd<T>::step(std::span<const ParamGroup<T>> groups) {
  for (const auto& g : groups) {
    if (g.params->size() != g.grads->size()) throw UsageError("group '" + g.name + "': gradient count mismatch");
    for (std::size_t i = 0; i < g.grads->size(); ++i) {
      if (!((*g.params)[i].shape() == (*g.grads)[i].shape())) {
        throw UsageError("group '" + g.name + "': gradient shape mismatch");
      }
      if (!(*g.grads)[i].all_finite()) throw NumericError("non-finite gradient in group '" + g.name + "'");
    }
  }
  const auto& k = kernels::active_kernels<T>();
  const T rate = static_cast<T>(lr());
  const T mu = static_cast<T>(config_.momentum);
  const T wd = static_cast<T>(config_.weight_decay);
  for (const auto& g : groups) {
    auto& params = *g.params;
    const auto& grads = *g.grads;
    if (config_.momentum == 0.0) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (wd != T(0)) {
          std::vector<T> d(grads[i].values().begin(), grads[i].values().end());
          k.axpy(wd, params[i].data(), d.data(), d.size());
          k.axpy(-rate, d.data(), params[i].data(), d.size());
        } else {
          k.axpy(-rate, grads[i].data(), params[i].data(), params[i].size());
        }
      }
      continue;
    }
    auto [it, fresh] = momentum_.try_emplace(g.name);
    if (fresh) {
      for (const auto& p : params) it->second.emplace_back(p.shape());
    }
    auto& velocity = it->second;
    for (std::size_t i = 0; i < params.size(); ++i) {
      T* v = velocity[i].data();
      k.scale(mu, v, velocity[i].size());
      k.add(grads[i].data(), v, velocity[i].size());
      if (wd != T(0)) k.axpy(wd, params[i].data(), v, velocity[i].size());
      k.axpy(-rate, v, params[i].data(), params[i].size());
    }
  }
  ++step_;
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace fedepth
