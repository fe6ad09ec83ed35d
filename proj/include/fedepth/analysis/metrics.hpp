#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedepth/nn/tensor.hpp"

namespace fedepth {

/// Index of the largest entry; ties go to the lowest index.
template <class T>
std::size_t argmax(std::span<const T> row);

/// Fraction of rows whose argmax equals the label. Throws UsageError on an
/// empty batch or mismatched sizes.
template <class T>
double top1_accuracy(const Tensor<T>& logits, std::span<const int> labels);

/// Per-class accuracy; classes absent from `labels` report 0 with count 0.
struct ClassAccuracy {
  std::vector<double> accuracy;
  std::vector<std::size_t> count;
};
template <class T>
ClassAccuracy per_class_accuracy(const Tensor<T>& logits, std::span<const int> labels, std::size_t classes);

/// Accuracy of the global model weighted by a client's label distribution.
double client_weighted_accuracy(const ClassAccuracy& global, std::span<const std::size_t> client_histogram);

/// Population standard deviation; throws UsageError for fewer than 2 values.
double fairness_std(std::span<const double> accuracies);

struct EvalReport {
  std::size_t round = 0;
  double global_accuracy = 0;
  std::vector<double> client_accuracy;
  double fairness = 0;
};

/// Rows are samples. Tensors of any rank are flattened per sample.
Eigen::MatrixXd representation_matrix(const Tensor<float>& activations);
Eigen::MatrixXd representation_matrix(const Tensor<double>& activations);

/// Linear CKA of column-centred X and Y. Throws NumericError if either has
/// zero variance, UsageError on row-count mismatch or n < 2.
double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

inline constexpr double kCcaEpsilon = 1e-6;

/// Mean canonical correlation, with `epsilon` added to the covariance
/// diagonals. Requires n > max(d1, d2); throws NumericError on zero variance.
double mean_cca(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double epsilon = kCcaEpsilon);

}  // namespace fedepth
