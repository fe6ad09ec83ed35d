#include "fedepth/data/dataset.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "fedepth/nn/errors.hpp"
#include "fedepth/util/rng.hpp"

namespace fedepth {

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("empty subset");
  Dataset out;
  out.classes = data.classes;
  out.x = gather_rows(data.x, indices);
  out.y.reserve(indices.size());
  for (std::size_t i : indices) out.y.push_back(data.y.at(i));
  return out;
}

namespace {

// Per-feature (or per-channel when `group` > 1) standardisation using the
// statistics of `reference`.
void standardise(Tensor<float>& reference, Tensor<float>& other, std::size_t features, std::size_t group) {
  const std::size_t n = reference.shape()[0];
  std::vector<double> mean(features, 0.0), var(features, 0.0);
  const std::size_t row = features * group;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < features; ++f) {
      for (std::size_t g = 0; g < group; ++g) mean[f] += reference[i * row + f * group + g];
    }
  }
  const double count = static_cast<double>(n * group);
  for (auto& m : mean) m /= count;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < features; ++f) {
      for (std::size_t g = 0; g < group; ++g) {
        const double d = reference[i * row + f * group + g] - mean[f];
        var[f] += d * d;
      }
    }
  }
  std::vector<double> inv(features);
  for (std::size_t f = 0; f < features; ++f) inv[f] = 1.0 / std::sqrt(var[f] / count + 1e-12);
  for (Tensor<float>* t : {&reference, &other}) {
    const std::size_t rows = t->shape()[0];
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t f = 0; f < features; ++f) {
        for (std::size_t g = 0; g < group; ++g) {
          float& v = (*t)[i * row + f * group + g];
          v = static_cast<float>((v - mean[f]) * inv[f]);
        }
      }
    }
  }
}

}  // namespace

DatasetSplit make_gaussian_mixture(const GaussianMixtureOptions& o) {
  if (o.classes < 1 || o.dims < 1 || o.clusters_per_class < 1) throw UsageError("gaussian mixture needs classes, dims and clusters >= 1");
  if (o.train_per_class < 1 || o.test_per_class < 1) throw UsageError("gaussian mixture needs samples per class >= 1");
  std::mt19937_64 centre_rng(derive_seed(o.seed, {1}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double radius = o.separation / std::sqrt(2.0);
  std::vector<std::vector<double>> centres(o.classes * o.clusters_per_class, std::vector<double>(o.dims));
  for (auto& c : centres) {
    double norm = 0;
    for (auto& v : c) {
      v = normal(centre_rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : c) v *= radius / norm;
  }

  auto draw = [&](std::size_t per_class, std::uint64_t stream) {
    std::mt19937_64 rng(derive_seed(o.seed, {stream}));
    std::uniform_int_distribution<std::size_t> pick(0, o.clusters_per_class - 1);
    Dataset d;
    d.classes = o.classes;
    const std::size_t n = per_class * o.classes;
    d.x = Tensor<float>(TensorShape{n, o.dims});
    d.y.resize(n);
    // Interleave classes so that leading slices stay balanced.
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i % o.classes;
      const auto& centre = centres[c * o.clusters_per_class + pick(rng)];
      for (std::size_t f = 0; f < o.dims; ++f) d.x[i * o.dims + f] = static_cast<float>(centre[f] + normal(rng));
      d.y[i] = static_cast<int>(c);
    }
    return d;
  };
  DatasetSplit split{draw(o.train_per_class, 2), draw(o.test_per_class, 3)};
  standardise(split.train.x, split.test.x, o.dims, 1);
  return split;
}

namespace {

constexpr std::size_t kImageBytes = 3 * 32 * 32;

void read_image_file(const std::filesystem::path& path, std::size_t limit, std::vector<float>& pixels,
                     std::vector<int>& labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("missing image file " + path.string() +
                  "; download the CIFAR-10 binary version (cifar-10-binary.tar.gz), extract it, and point "
                  "dataset.path at the directory holding data_batch_1.bin .. data_batch_5.bin and test_batch.bin");
  }
  std::vector<unsigned char> record(1 + kImageBytes);
  while (limit == 0 || labels.size() < limit) {
    in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(record.size()));
    if (in.gcount() == 0) break;
    if (static_cast<std::size_t>(in.gcount()) != record.size()) throw IntegrityError("truncated record in " + path.string());
    if (record[0] > 9) throw IntegrityError("label out of range in " + path.string());
    labels.push_back(record[0]);
    for (std::size_t i = 0; i < kImageBytes; ++i) pixels.push_back(static_cast<float>(record[1 + i]) / 255.0f);
  }
}

Dataset image_dataset(std::vector<float> pixels, std::vector<int> labels) {
  Dataset d;
  d.classes = 10;
  if (labels.empty()) throw IntegrityError("image set contains no records");
  d.x = Tensor<float>(TensorShape{labels.size(), 3, 32, 32}, std::move(pixels));
  d.y = std::move(labels);
  return d;
}

}  // namespace

DatasetSplit load_image_set(const ImageSetOptions& o) {
  std::vector<float> px;
  std::vector<int> labels;
  for (int b = 1; b <= 5; ++b) {
    if (o.max_train != 0 && labels.size() >= o.max_train) break;
    const std::size_t remaining = o.max_train == 0 ? 0 : o.max_train - labels.size();
    std::vector<int> part;
    read_image_file(o.directory / ("data_batch_" + std::to_string(b) + ".bin"), remaining, px, part);
    labels.insert(labels.end(), part.begin(), part.end());
  }
  std::vector<float> test_px;
  std::vector<int> test_labels;
  read_image_file(o.directory / "test_batch.bin", o.max_test, test_px, test_labels);
  DatasetSplit split{image_dataset(std::move(px), std::move(labels)),
                     image_dataset(std::move(test_px), std::move(test_labels))};
  standardise(split.train.x, split.test.x, 3, 32 * 32);
  return split;
}

DatasetSplit load_dataset(const std::string& name, const GaussianMixtureOptions& mixture,
                          const ImageSetOptions& images) {
  if (name == "synthetic-gaussian-mixture") return make_gaussian_mixture(mixture);
  if (name == "small-image-set") return load_image_set(images);
  throw UsageError("unknown dataset '" + name + "'");
}

}  // namespace fedepth
