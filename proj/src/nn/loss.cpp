#include "fedepth/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace fedepth {

namespace {

template <class T>
T log_sum_exp(std::span<const T> x) {
  const T m = *std::max_element(x.begin(), x.end());
  T s = 0;
  for (T v : x) s += std::exp(v - m);
  return m + std::log(s);
}

template <class T>
void log_softmax(std::span<const T> x, std::vector<T>& out) {
  const T lse = log_sum_exp(x);
  out.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
}

template <class T>
void check_logits(const Tensor<T>& logits) {
  if (logits.shape().rank() != 2) throw UsageError("logits must be [batch, classes]");
  if (!logits.all_finite()) throw NumericError("non-finite logits");
}

}  // namespace

template <class T>
T cross_entropy(std::span<const T> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw UsageError("label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) +
                     " classes");
  }
  // log(sum exp(z - m)) = log1p(sum over the non-max terms), kept exact when
  // one logit dominates.
  const auto top = std::max_element(logits.begin(), logits.end());
  const T m = *top;
  T rest = 0;
  for (auto it = logits.begin(); it != logits.end(); ++it) {
    if (it != top) rest += std::exp(*it - m);
  }
  return std::log1p(rest) + (m - logits[static_cast<std::size_t>(label)]);
}

template <class T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  check_logits(logits);
  const std::size_t batch = logits.shape()[0];
  const std::size_t classes = logits.shape()[1];
  if (labels.size() != batch) throw UsageError("label count does not match batch");
  LossResult<T> r{T(0), Tensor<T>(logits.shape())};
  std::vector<T> logp;
  const T inv_batch = T(1) / static_cast<T>(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    std::span<const T> row(logits.data() + n * classes, classes);
    const int label = labels[n];
    r.value += cross_entropy<T>(row, label);
    log_softmax(row, logp);
    T* g = r.grad.data() + n * classes;
    for (std::size_t c = 0; c < classes; ++c) g[c] = std::exp(logp[c]) * inv_batch;
    g[static_cast<std::size_t>(label)] -= inv_batch;
  }
  r.value *= inv_batch;
  return r;
}

template <class T>
T kl_divergence(std::span<const T> p_logits, std::span<const T> q_logits) {
  std::vector<T> logp, logq;
  log_softmax(p_logits, logp);
  log_softmax(q_logits, logq);
  T kl = 0;
  for (std::size_t c = 0; c < logp.size(); ++c) kl += std::exp(logp[c]) * (logp[c] - logq[c]);
  return std::max(kl, T(0));
}

template <class T>
LossResult<T> kl_logits(const Tensor<T>& target, const Tensor<T>& logits) {
  check_logits(target);
  check_logits(logits);
  if (!(target.shape() == logits.shape())) {
    throw UsageError("kl_logits shape mismatch: " + target.shape().to_string() + " vs " + logits.shape().to_string());
  }
  const std::size_t batch = logits.shape()[0];
  const std::size_t classes = logits.shape()[1];
  LossResult<T> r{T(0), Tensor<T>(logits.shape())};
  std::vector<T> logp, logq;
  const T inv_batch = T(1) / static_cast<T>(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    std::span<const T> p_row(target.data() + n * classes, classes);
    std::span<const T> q_row(logits.data() + n * classes, classes);
    r.value += kl_divergence<T>(p_row, q_row);
    log_softmax(p_row, logp);
    log_softmax(q_row, logq);
    T* g = r.grad.data() + n * classes;
    for (std::size_t c = 0; c < classes; ++c) g[c] = (std::exp(logq[c]) - std::exp(logp[c])) * inv_batch;
  }
  r.value *= inv_batch;
  return r;
}

template float cross_entropy<float>(std::span<const float>, int);
template double cross_entropy<double>(std::span<const double>, int);
template LossResult<float> cross_entropy<float>(const Tensor<float>&, std::span<const int>);
template LossResult<double> cross_entropy<double>(const Tensor<double>&, std::span<const int>);
template LossResult<float> kl_logits<float>(const Tensor<float>&, const Tensor<float>&);
template LossResult<double> kl_logits<double>(const Tensor<double>&, const Tensor<double>&);
template float kl_divergence<float>(std::span<const float>, std::span<const float>);
template double kl_divergence<double>(std::span<const double>, std::span<const double>);

}  // namespace fedepth
