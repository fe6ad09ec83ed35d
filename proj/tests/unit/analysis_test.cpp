#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedepth/analysis/metrics.hpp"
#include "fedepth/nn/errors.hpp"

namespace fedepth {
namespace {

Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = normal(rng);
  return m;
}

TEST(Accuracy, Counting) {
  Tensor<float> logits(TensorShape{4, 3}, std::vector<float>{3, 1, 0, 0, 2, 1, 0, 0, 5, 1, 0, 0});
  std::vector<int> right{0, 1, 2, 0}, wrong{1, 0, 0, 2}, three{0, 1, 2, 1};
  EXPECT_EQ(top1_accuracy(logits, right), 1.0);
  EXPECT_EQ(top1_accuracy(logits, wrong), 0.0);
  EXPECT_EQ(top1_accuracy(logits, three), 0.75);
}

TEST(Accuracy, TieGoesToLowestIndex) {
  Tensor<double> logits(TensorShape{1, 3}, std::vector<double>{0.5, 2.0, 2.0});
  std::vector<int> second{1}, third{2};
  EXPECT_EQ(top1_accuracy(logits, second), 1.0);
  EXPECT_EQ(top1_accuracy(logits, third), 0.0);
}

TEST(Accuracy, EmptyBatchIsUsageError) {
  Tensor<float> logits;
  std::vector<int> none;
  EXPECT_THROW(top1_accuracy(logits, none), UsageError);
}

TEST(Accuracy, ClientWeightedAccuracy) {
  Tensor<float> logits(TensorShape{4, 2}, std::vector<float>{1, 0, 1, 0, 1, 0, 0, 1});
  std::vector<int> labels{0, 0, 1, 1};
  auto pc = per_class_accuracy(logits, labels, 2);
  EXPECT_EQ(pc.accuracy, (std::vector<double>{1.0, 0.5}));
  const std::size_t hist[] = {1, 3};
  EXPECT_DOUBLE_EQ(client_weighted_accuracy(pc, hist), (1.0 + 3 * 0.5) / 4);
}

TEST(Fairness, Examples) {
  const double same[] = {0.3, 0.3, 0.3};
  EXPECT_EQ(fairness_std(same), 0.0);
  const double two[] = {0.0, 1.0};
  EXPECT_DOUBLE_EQ(fairness_std(two), 0.5);
  const double three[] = {0.2, 0.4, 0.6};
  // mean 0.4, squared deviations 0.04 + 0 + 0.04 over 3.
  EXPECT_NEAR(fairness_std(three), std::sqrt(0.08 / 3), 1e-15);
  EXPECT_NEAR(fairness_std(three), 0.1633, 1e-4);
  const double one[] = {0.5};
  EXPECT_THROW(fairness_std(one), UsageError);
}

TEST(Cka, SelfSimilarityAndInvariances) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd x = gaussian(50, 6, rng);
    EXPECT_NEAR(linear_cka(x, x), 1.0, 1e-10);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(6, 6, rng));
    Eigen::MatrixXd q = qr.householderQ();
    EXPECT_NEAR(linear_cka(x, x * q), 1.0, 1e-10);
    EXPECT_NEAR(linear_cka(x, -3.5 * x), 1.0, 1e-10);
    Eigen::MatrixXd y = gaussian(50, 4, rng);
    const double v = linear_cka(x, y);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(v, linear_cka(y, x), 1e-12);
  }
}

TEST(Cka, HandExamples) {
  Eigen::MatrixXd x(2, 2), y(2, 2);
  x << 1, 0, 0, 1;
  y << 1, 1, -1, -1;
  // Centred X = [[.5,-.5],[-.5,.5]], Y already centred.
  // |Y'X|^2 = 4, |X'X| = 1, |Y'Y| = 4.
  EXPECT_NEAR(linear_cka(x, y), 4.0 / (1.0 * 4.0), 1e-15);

  Eigen::MatrixXd a(3, 1), b(3, 1);
  a << 1, 2, 3;
  b << 1, 0, 2;
  // Centred a = [-1,0,1], b = [0,-1,1]: (a.b)^2 / (|a|^2 |b|^2) = 1 / 4.
  EXPECT_NEAR(linear_cka(a, b), 0.25, 1e-15);
}

TEST(Cka, ZeroVarianceIsError) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(5, 2), y = Eigen::MatrixXd::Random(5, 2);
  EXPECT_THROW(linear_cka(x, y), NumericError);
}

TEST(Cca, IdentityAndAffineInvariance) {
  std::mt19937_64 rng(2);
  Eigen::MatrixXd x = gaussian(400, 5, rng);
  EXPECT_NEAR(mean_cca(x, x), 1.0, 1e-4);
  Eigen::MatrixXd a = gaussian(5, 5, rng) + 3 * Eigen::MatrixXd::Identity(5, 5);
  EXPECT_NEAR(mean_cca(x, x * a), 1.0, 1e-4);
}

TEST(Cca, IndependentInputsNearZero) {
  // Band from 2000 simulated draws at n = 2000, d = 4: max 0.065.
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    EXPECT_LT(mean_cca(gaussian(2000, 4, rng), gaussian(2000, 4, rng)), 0.07);
  }
}

TEST(Cca, InsensitiveToRegularisation) {
  std::mt19937_64 rng(4);
  Eigen::MatrixXd x = gaussian(300, 4, rng);
  Eigen::MatrixXd y = x.leftCols(2) * gaussian(2, 3, rng) + 0.5 * gaussian(300, 3, rng);
  const double base = mean_cca(x, y);
  for (double eps : {1e-8, 1e-4}) EXPECT_NEAR(mean_cca(x, y, eps), base, 1e-3);
}

TEST(Cca, TooFewSamples) {
  std::mt19937_64 rng(5);
  EXPECT_THROW(mean_cca(gaussian(4, 4, rng), gaussian(4, 2, rng)), UsageError);
}

}  // namespace
}  // namespace fedepth
