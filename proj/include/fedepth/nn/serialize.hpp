#pragma once
// On-disk formats for model specs, weights and raw tensors. See
// docs/formats.md for the byte layouts.

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include <json.hpp>

#include "fedepth/nn/graph.hpp"
#include "fedepth/nn/weights.hpp"

namespace fedepth {

inline constexpr int kModelSpecVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json graph_to_json(const BlockGraph& graph);
/// Throws StructuralError on malformed or non-composing specs.
BlockGraph graph_from_json(const nlohmann::json& spec);

void save_graph(const std::filesystem::path& path, const BlockGraph& graph);
BlockGraph load_graph(const std::filesystem::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

template <class T>
constexpr std::uint32_t dtype_code();
template <>
constexpr std::uint32_t dtype_code<float>() {
  return 1;
}
template <>
constexpr std::uint32_t dtype_code<double>() {
  return 2;
}

/// Tensor record: u32 rank, u64 dims[rank], raw little-endian elements.
template <class T>
void write_tensor(std::ostream& out, const Tensor<T>& t);
/// Throws IntegrityError on truncated or implausible records.
template <class T>
Tensor<T> read_tensor(std::istream& in);

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelWeights<T>& weights);
/// Throws IoError if unreadable, IntegrityError on bad magic/version/checksum.
template <class T>
ModelWeights<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace fedepth
