#pragma once
// In-memory labelled datasets and the two loaders.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedepth/nn/tensor.hpp"

namespace fedepth {

struct Dataset {
  Tensor<float> x;  // [n, per-sample shape...]
  std::vector<int> y;
  std::size_t classes = 0;

  std::size_t size() const { return y.size(); }
  TensorShape sample_shape() const { return x.shape().per_sample(); }
};

Dataset subset(const Dataset& data, std::span<const std::size_t> indices);

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// Gaussian mixture: each class owns `clusters_per_class` centres placed at
// distance separation/sqrt(2) from the origin in uniformly random
// directions, so two centres are about `separation` apart in high dimension.
// Samples add isotropic unit noise. Features are standardised with the
// training-set statistics.
struct GaussianMixtureOptions {
  std::size_t classes = 4;
  std::size_t dims = 16;
  std::size_t clusters_per_class = 1;
  double separation = 3.0;  // in units of the noise std
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 250;
  std::uint64_t seed = 0;
};

DatasetSplit make_gaussian_mixture(const GaussianMixtureOptions& options);

// CIFAR-10 binary layout: data_batch_{1..5}.bin and test_batch.bin, each
// record one label byte followed by 3072 channel-major pixel bytes.
// Pixels are scaled to [0,1] and standardised per channel with training
// statistics. `max_train`/`max_test` (0 = all) keep the leading records.
struct ImageSetOptions {
  std::filesystem::path directory;
  std::size_t max_train = 0;
  std::size_t max_test = 0;
};

/// Throws IoError naming the missing file and how to obtain it.
DatasetSplit load_image_set(const ImageSetOptions& options);

/// Dispatch by name: "synthetic-gaussian-mixture" or "small-image-set".
DatasetSplit load_dataset(const std::string& name, const GaussianMixtureOptions& mixture,
                          const ImageSetOptions& images);

}  // namespace fedepth
