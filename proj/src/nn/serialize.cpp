#include "fedepth/nn/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace fedepth {

using nlohmann::json;

namespace {

json layer_to_json(const LayerSpec& l) {
  json j;
  j["kind"] = std::string(layer_kind_name(l.kind));
  switch (l.kind) {
    case LayerKind::Dense:
    case LayerKind::ClassifierHead:
      j["in"] = l.in;
      j["out"] = l.out;
      break;
    case LayerKind::Conv2d:
      j["in"] = l.in;
      j["out"] = l.out;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::GroupNorm:
      j["channels"] = l.in;
      j["groups"] = l.groups;
      break;
    case LayerKind::AvgPool:
      j["window"] = l.pool;
      break;
    case LayerKind::ResidualAdd:
      j["from"] = l.from;
      break;
    case LayerKind::ZeroPadAdapter:
      j["target"] = l.target;
      break;
    default:
      break;
  }
  return j;
}

std::size_t field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw StructuralError(where + ": missing '" + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw StructuralError(where + ": '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::size_t field_or(const json& j, const char* key, std::size_t fallback, const std::string& where) {
  return j.contains(key) ? field(j, key, where) : fallback;
}

LayerSpec layer_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
    throw StructuralError(where + ": layer needs a string 'kind'");
  }
  const LayerKind kind = parse_layer_kind(j["kind"].get<std::string>());
  switch (kind) {
    case LayerKind::Dense:
      return LayerSpec::dense(field(j, "in", where), field(j, "out", where));
    case LayerKind::ClassifierHead:
      return LayerSpec::classifier_head(field(j, "in", where), field(j, "out", where));
    case LayerKind::Conv2d:
      return LayerSpec::conv2d(field(j, "in", where), field(j, "out", where), field_or(j, "kernel", 3, where),
                               field_or(j, "stride", 1, where), field_or(j, "padding", 0, where));
    case LayerKind::Relu:
      return LayerSpec::relu();
    case LayerKind::GroupNorm:
      return LayerSpec::group_norm(field(j, "channels", where), field_or(j, "groups", 1, where));
    case LayerKind::AvgPool:
      return LayerSpec::avg_pool(field_or(j, "window", 0, where));
    case LayerKind::Flatten:
      return LayerSpec::flatten();
    case LayerKind::ResidualAdd:
      return LayerSpec::residual_add(field_or(j, "from", 0, where));
    case LayerKind::ZeroPadAdapter:
      if (!j.contains("target") || !j["target"].is_array()) throw StructuralError(where + ": missing 'target'");
      return LayerSpec::zero_pad_adapter(j["target"].get<std::vector<std::size_t>>());
  }
  throw StructuralError(where + ": unhandled layer kind");
}

Block block_from_json(const json& j, const std::string& where) {
  const json& layers = j.is_object() ? j.value("layers", json()) : j;
  if (!layers.is_array()) throw StructuralError(where + ": expected a 'layers' array");
  Block b;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    b.layers.push_back(layer_from_json(layers[i], where + " layer " + std::to_string(i)));
  }
  return b;
}

json block_to_json(const Block& b) {
  json layers = json::array();
  for (const auto& l : b.layers) layers.push_back(layer_to_json(l));
  return json{{"layers", layers}};
}

template <class V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw IntegrityError("truncated record");
  return v;
}

constexpr char kCheckpointMagic[4] = {'F', 'D', 'C', 'K'};

}  // namespace

json graph_to_json(const BlockGraph& graph) {
  json blocks = json::array();
  for (const auto& b : graph.blocks()) blocks.push_back(block_to_json(b));
  return json{{"version", kModelSpecVersion},
              {"input", graph.input_shape().dims()},
              {"blocks", blocks},
              {"head", block_to_json(graph.head())}};
}

BlockGraph graph_from_json(const json& spec) {
  if (!spec.is_object()) throw StructuralError("model spec must be an object");
  if (spec.contains("version") && spec["version"] != kModelSpecVersion) {
    throw StructuralError("unsupported model spec version " + spec["version"].dump());
  }
  if (!spec.contains("input") || !spec["input"].is_array()) throw StructuralError("model spec: missing 'input'");
  if (!spec.contains("blocks") || !spec["blocks"].is_array()) throw StructuralError("model spec: missing 'blocks'");
  if (!spec.contains("head")) throw StructuralError("model spec: missing 'head'");
  std::vector<Block> blocks;
  for (std::size_t j = 0; j < spec["blocks"].size(); ++j) {
    blocks.push_back(block_from_json(spec["blocks"][j], "block " + std::to_string(j)));
  }
  return BlockGraph(TensorShape(spec["input"].get<std::vector<std::size_t>>()), std::move(blocks),
                    block_from_json(spec["head"], "head"));
}

void save_graph(const std::filesystem::path& path, const BlockGraph& graph) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model spec " + path.string());
  out << graph_to_json(graph).dump(2) << '\n';
}

BlockGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read model spec " + path.string());
  json spec;
  try {
    spec = json::parse(in);
  } catch (const json::parse_error& e) {
    throw StructuralError("model spec " + path.string() + ": " + e.what());
  }
  return graph_from_json(spec);
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().rank()));
  for (std::size_t d : t.shape().dims()) put<std::uint64_t>(out, d);
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <class T>
Tensor<T> read_tensor(std::istream& in) {
  const auto rank = get<std::uint32_t>(in);
  if (rank == 0 || rank > 8) throw IntegrityError("implausible tensor rank " + std::to_string(rank));
  std::vector<std::size_t> dims(rank);
  std::uint64_t count = 1;
  for (auto& d : dims) {
    d = get<std::uint64_t>(in);
    if (d == 0 || d > (1ULL << 32)) throw IntegrityError("implausible tensor extent");
    count *= d;
    if (count > (1ULL << 34)) throw IntegrityError("tensor too large");
  }
  std::vector<T> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (!in) throw IntegrityError("truncated tensor data");
  return Tensor<T>(TensorShape(std::move(dims)), std::move(values));
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelWeights<T>& weights) {
  std::ostringstream payload(std::ios::binary);
  put<std::uint32_t>(payload, static_cast<std::uint32_t>(weights.body.size()));
  for (const auto& block : weights.body) {
    put<std::uint32_t>(payload, static_cast<std::uint32_t>(block.size()));
    for (const auto& t : block) write_tensor(payload, t);
  }
  put<std::uint32_t>(payload, static_cast<std::uint32_t>(weights.head.size()));
  for (const auto& t : weights.head) write_tensor(payload, t);
  const std::string bytes = payload.str();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, dtype_code<T>());
  put<std::uint64_t>(out, bytes.size());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  put<std::uint64_t>(out, fnv1a64(bytes.data(), bytes.size()));
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

template <class T>
ModelWeights<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw IntegrityError("not a checkpoint: " + path.string());
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw IntegrityError("unsupported checkpoint version");
  if (get<std::uint32_t>(in) != dtype_code<T>()) throw IntegrityError("checkpoint element type mismatch");
  const auto size = get<std::uint64_t>(in);
  if (size > (1ULL << 36)) throw IntegrityError("implausible checkpoint size");
  std::string bytes(size, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(size));
  if (!in) throw IntegrityError("truncated checkpoint");
  if (get<std::uint64_t>(in) != fnv1a64(bytes.data(), bytes.size())) throw IntegrityError("checkpoint checksum mismatch");

  std::istringstream payload(bytes, std::ios::binary);
  ModelWeights<T> w;
  const auto blocks = get<std::uint32_t>(payload);
  for (std::uint32_t b = 0; b < blocks; ++b) {
    auto& block = w.body.emplace_back();
    const auto n = get<std::uint32_t>(payload);
    for (std::uint32_t i = 0; i < n; ++i) block.push_back(read_tensor<T>(payload));
  }
  const auto n_head = get<std::uint32_t>(payload);
  for (std::uint32_t i = 0; i < n_head; ++i) w.head.push_back(read_tensor<T>(payload));
  return w;
}

template void write_tensor<float>(std::ostream&, const Tensor<float>&);
template void write_tensor<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(std::istream&);
template Tensor<double> read_tensor<double>(std::istream&);
template void save_checkpoint<float>(const std::filesystem::path&, const ModelWeights<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const ModelWeights<double>&);
template ModelWeights<float> load_checkpoint<float>(const std::filesystem::path&);
template ModelWeights<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace fedepth
