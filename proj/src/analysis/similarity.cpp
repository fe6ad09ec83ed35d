#include "fedepth/analysis/similarity.hpp"

#include "fedepth/nn/network.hpp"

namespace fedepth {

namespace {

// Channel means over spatial positions for [n, c, h, w]; identity otherwise.
Eigen::MatrixXd pooled(const Tensor<float>& z) {
  if (z.shape().rank() != 4) return representation_matrix(z);
  const std::size_t n = z.shape()[0], c = z.shape()[1], hw = z.shape()[2] * z.shape()[3];
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0;
      const float* p = z.data() + (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) s += p[k];
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(ch)) = s / static_cast<double>(hw);
    }
  }
  return m;
}

std::vector<Tensor<float>> block_outputs(const BlockGraph& graph, const Weights& w, const Tensor<float>& probe) {
  std::vector<Tensor<float>> out;
  Tensor<float> z = probe;
  for (std::size_t j = 0; j < graph.num_blocks(); ++j) {
    z = forward_blocks(graph, w, z, j, j + 1);
    out.push_back(z);
  }
  return out;
}

}  // namespace

std::vector<Eigen::MatrixXd> block_representations(const BlockGraph& graph, const Weights& w,
                                                   const Tensor<float>& probe) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& z : block_outputs(graph, w, probe)) out.push_back(representation_matrix(z));
  return out;
}

std::vector<BlockSimilarity> compare_blocks(const BlockGraph& graph, const Weights& a, const Weights& b,
                                            const Tensor<float>& probe) {
  a.check_matches(graph);
  b.check_matches(graph);
  const auto za = block_outputs(graph, a, probe), zb = block_outputs(graph, b, probe);
  std::vector<BlockSimilarity> rows;
  for (std::size_t j = 0; j < za.size(); ++j) {
    BlockSimilarity r;
    r.block = j;
    r.cka = linear_cka(representation_matrix(za[j]), representation_matrix(zb[j]));
    const Eigen::MatrixXd pa = pooled(za[j]), pb = pooled(zb[j]);
    if (pa.rows() > std::max(pa.cols(), pb.cols())) r.cca = mean_cca(pa, pb);
    rows.push_back(r);
  }
  return rows;
}

void write_similarity_csv(std::ostream& out, const std::vector<BlockSimilarity>& rows) {
  const auto old = out.precision(10);
  out << "block,cka,cca\n";
  for (const auto& r : rows) {
    out << r.block + 1 << ',' << r.cka << ',';
    if (r.cca) out << *r.cca;
    out << '\n';
  }
  out.precision(old);
}

}  // namespace fedepth
