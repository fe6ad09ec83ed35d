#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fedepth/kernels/kernels.hpp"

namespace fedepth::kernels {
namespace {

template <class T>
std::vector<T> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(normal(rng));
  return v;
}

std::vector<Isa> available_variants() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::Avx2, Isa::Neon}) {
    if (cpu_supports(isa)) out.push_back(isa);
  }
  return out;
}

template <class T>
void expect_equivalent(const KernelTable<T>& simd, std::size_t n, std::mt19937_64& rng) {
  const auto& ref = scalar::table<T>();
  auto x = random_vector<T>(n, rng);
  auto y = random_vector<T>(n, rng);
  if (n > 0) x[0] = T(0);  // exercise the relu boundary
  const T tol = std::is_same_v<T, float> ? T(1e-5) : T(1e-13);

  T scale_ref = 0;
  for (std::size_t i = 0; i < n; ++i) scale_ref += std::abs(x[i] * y[i]);
  EXPECT_NEAR(simd.dot(x.data(), y.data(), n), ref.dot(x.data(), y.data(), n), tol * (1 + scale_ref)) << n;
  T abs_sum = 0;
  for (T v : x) abs_sum += std::abs(v);
  EXPECT_NEAR(simd.sum(x.data(), n), ref.sum(x.data(), n), tol * (1 + abs_sum)) << n;

  // Elementwise kernels round identically.
  auto y1 = y, y2 = y;
  simd.axpy(T(0.37), x.data(), y1.data(), n);
  ref.axpy(T(0.37), x.data(), y2.data(), n);
  EXPECT_EQ(y1, y2);
  y1 = y, y2 = y;
  simd.add(x.data(), y1.data(), n);
  ref.add(x.data(), y2.data(), n);
  EXPECT_EQ(y1, y2);
  y1 = y, y2 = y;
  simd.scale(T(-1.5), y1.data(), n);
  ref.scale(T(-1.5), y2.data(), n);
  EXPECT_EQ(y1, y2);
  std::vector<T> r1(n), r2(n);
  simd.relu(x.data(), r1.data(), n);
  ref.relu(x.data(), r2.data(), n);
  EXPECT_EQ(r1, r2);
  simd.relu_backward(x.data(), y.data(), r1.data(), n);
  ref.relu_backward(x.data(), y.data(), r2.data(), n);
  EXPECT_EQ(r1, r2);
}

TEST(Kernels, ScalarReferenceValues) {
  const auto& k = scalar::table<double>();
  const double x[] = {1, 2, 3};
  const double y[] = {4, -5, 6};
  EXPECT_DOUBLE_EQ(k.dot(x, y, 3), 12.0);
  EXPECT_DOUBLE_EQ(k.sum(y, 3), 5.0);
  double out[3];
  const double v[] = {-1.0, 0.0, 2.0};
  k.relu(v, out, 3);
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 0.0);
  EXPECT_EQ(out[2], 2.0);
}

TEST(Kernels, SimdVariantsMatchScalarReference) {
  const auto variants = available_variants();
  if (variants.empty()) GTEST_SKIP() << "no SIMD variant on this CPU";
  std::mt19937_64 rng(7);
  for (Isa isa : variants) {
    SCOPED_TRACE(std::string(isa_name(isa)));
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 15u, 16u, 17u, 31u, 64u, 100u, 1023u}) {
      expect_equivalent(kernels_for<float>(isa), n, rng);
      expect_equivalent(kernels_for<double>(isa), n, rng);
    }
  }
}

TEST(Kernels, ReluMapsNanAndNegativeZeroToZero) {
  const float x[9] = {std::nanf(""), -0.0f, 1.0f, -1.0f, 0.0f, 2.0f, -3.0f, std::nanf(""), 5.0f};
  for (Isa isa : {Isa::Scalar, Isa::Avx2, Isa::Neon}) {
    if (!cpu_supports(isa)) continue;
    float y[9];
    kernels_for<float>(isa).relu(x, y, 9);
    EXPECT_EQ(y[0], 0.0f);
    EXPECT_FALSE(std::signbit(y[1]));
    EXPECT_EQ(y[2], 1.0f);
    EXPECT_EQ(y[7], 0.0f);
    EXPECT_EQ(y[8], 5.0f);
  }
}

TEST(Kernels, ActiveTableIsStable) {
  EXPECT_EQ(&active_kernels<float>(), &active_kernels<float>());
  EXPECT_TRUE(cpu_supports(active_kernels<double>().isa));
}

TEST(Kernels, UnavailableVariantThrows) {
  for (Isa isa : {Isa::Avx2, Isa::Neon}) {
    if (!cpu_supports(isa)) EXPECT_THROW(kernels_for<float>(isa), std::invalid_argument);
  }
}

}  // namespace
}  // namespace fedepth::kernels
