#pragma once
// Block-by-block representation similarity between two models of the same
// architecture on a shared probe set.

#include <optional>
#include <ostream>
#include <vector>

#include "fedepth/analysis/metrics.hpp"
#include "fedepth/trainer/trainer.hpp"

namespace fedepth {

struct BlockSimilarity {
  std::size_t block = 0;  // 0-based
  double cka = 0;
  std::optional<double> cca;  // absent when the probe has too few samples
};

/// Outputs of every body block on `probe`, flattened per sample.
std::vector<Eigen::MatrixXd> block_representations(const BlockGraph& graph, const Weights& w, const Tensor<float>& probe);

/// Linear CKA on the flattened outputs; mean CCA on outputs averaged over
/// spatial positions (feature maps) or as-is (vectors).
std::vector<BlockSimilarity> compare_blocks(const BlockGraph& graph, const Weights& a, const Weights& b,
                                            const Tensor<float>& probe);

/// CSV "block,cka,cca" with 1-based blocks; cca is empty when undefined.
void write_similarity_csv(std::ostream& out, const std::vector<BlockSimilarity>& rows);

}  // namespace fedepth
