#include "fedepth/analysis/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "fedepth/nn/errors.hpp"

namespace fedepth {

template <class T>
std::size_t argmax(std::span<const T> row) {
  if (row.empty()) throw UsageError("argmax of an empty row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

namespace {

template <class T>
void check_batch(const Tensor<T>& logits, std::span<const int> labels) {
  if (labels.empty() || logits.size() == 0) throw UsageError("accuracy of an empty batch");
  if (logits.shape().rank() != 2 || logits.shape()[0] != labels.size()) throw UsageError("logits and labels disagree");
}

template <class T>
std::span<const T> row(const Tensor<T>& logits, std::size_t i) {
  const std::size_t c = logits.shape()[1];
  return {logits.data() + i * c, c};
}

}  // namespace

template <class T>
double top1_accuracy(const Tensor<T>& logits, std::span<const int> labels) {
  check_batch(logits, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (static_cast<int>(argmax(row(logits, i))) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

template <class T>
ClassAccuracy per_class_accuracy(const Tensor<T>& logits, std::span<const int> labels, std::size_t classes) {
  check_batch(logits, labels);
  ClassAccuracy out{std::vector<double>(classes, 0.0), std::vector<std::size_t>(classes, 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    if (c >= classes) throw UsageError("label out of range");
    ++out.count[c];
    if (argmax(row(logits, i)) == c) out.accuracy[c] += 1.0;
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (out.count[c]) out.accuracy[c] /= static_cast<double>(out.count[c]);
  }
  return out;
}

double client_weighted_accuracy(const ClassAccuracy& global, std::span<const std::size_t> histogram) {
  if (histogram.size() != global.accuracy.size()) throw UsageError("histogram class count mismatch");
  double total = 0, acc = 0;
  for (std::size_t c = 0; c < histogram.size(); ++c) {
    total += static_cast<double>(histogram[c]);
    acc += static_cast<double>(histogram[c]) * global.accuracy[c];
  }
  if (total == 0) throw UsageError("client holds no samples");
  return acc / total;
}

double fairness_std(std::span<const double> a) {
  if (a.size() < 2) throw UsageError("fairness needs at least two clients");
  double mean = 0;
  for (double v : a) mean += v;
  mean /= static_cast<double>(a.size());
  double var = 0;
  for (double v : a) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(a.size()));
}

template <class T>
static Eigen::MatrixXd to_matrix(const Tensor<T>& t) {
  const std::size_t n = t.shape()[0];
  const std::size_t d = t.size() / n;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t[i * d + j];
  }
  return m;
}

Eigen::MatrixXd representation_matrix(const Tensor<float>& a) { return to_matrix(a); }
Eigen::MatrixXd representation_matrix(const Tensor<double>& a) { return to_matrix(a); }

namespace {

Eigen::MatrixXd centred(const Eigen::MatrixXd& m) { return m.rowwise() - m.colwise().mean(); }

void check_pair(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) throw UsageError("representations need the same number of samples");
  if (x.rows() < 2) throw UsageError("similarity needs at least two samples");
}

}  // namespace

double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  check_pair(x, y);
  const Eigen::MatrixXd xc = centred(x), yc = centred(y);
  const double xx = (xc.transpose() * xc).norm();
  const double yy = (yc.transpose() * yc).norm();
  if (xx == 0.0 || yy == 0.0) throw NumericError("CKA undefined for zero-variance representations");
  const double cross = (yc.transpose() * xc).squaredNorm();
  return std::clamp(cross / (xx * yy), 0.0, 1.0);
}

double mean_cca(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double epsilon) {
  check_pair(x, y);
  if (x.rows() <= std::max(x.cols(), y.cols())) throw UsageError("CCA needs more samples than dimensions");
  const Eigen::MatrixXd xc = centred(x), yc = centred(y);
  const double denom = static_cast<double>(x.rows() - 1);
  Eigen::MatrixXd sxx = xc.transpose() * xc / denom;
  Eigen::MatrixXd syy = yc.transpose() * yc / denom;
  const Eigen::MatrixXd sxy = xc.transpose() * yc / denom;
  if (sxx.trace() == 0.0 || syy.trace() == 0.0) throw NumericError("CCA undefined for zero-variance representations");
  sxx.diagonal().array() += epsilon;
  syy.diagonal().array() += epsilon;

  auto inv_sqrt = [](const Eigen::MatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
    if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0) {
      throw NumericError("covariance is not positive definite after regularisation");
    }
    return Eigen::MatrixXd(eig.eigenvectors() * eig.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
                           eig.eigenvectors().transpose());
  };
  const Eigen::MatrixXd m = inv_sqrt(sxx) * sxy * inv_sqrt(syy);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto k = std::min(x.cols(), y.cols());
  return std::clamp(svd.singularValues().head(k).mean(), 0.0, 1.0);
}

template std::size_t argmax<float>(std::span<const float>);
template std::size_t argmax<double>(std::span<const double>);
template double top1_accuracy<float>(const Tensor<float>&, std::span<const int>);
template double top1_accuracy<double>(const Tensor<double>&, std::span<const int>);
template ClassAccuracy per_class_accuracy<float>(const Tensor<float>&, std::span<const int>, std::size_t);
template ClassAccuracy per_class_accuracy<double>(const Tensor<double>&, std::span<const int>, std::size_t);

}  // namespace fedepth
