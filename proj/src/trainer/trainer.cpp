#include "fedepth/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fedepth/kernels/kernels.hpp"
#include "fedepth/memory/memory.hpp"
#include "fedepth/nn/loss.hpp"
#include "fedepth/nn/network.hpp"
#include "fedepth/nn/serialize.hpp"
#include "fedepth/util/rng.hpp"

namespace fedepth {

std::vector<std::size_t> split_epochs(std::size_t total, std::size_t groups) {
  if (groups == 0) throw UsageError("no groups to train");
  std::vector<std::size_t> out(groups, total / groups);
  for (std::size_t g = 0; g < total % groups; ++g) ++out[groups - 1 - g];
  for (auto& e : out) e = std::max<std::size_t>(e, 1);
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, {0xe0, epoch}));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

namespace {

void check_inputs(const BlockGraph& graph, const Weights& global, const Dataset& shard, const LocalTrainConfig& cfg) {
  global.check_matches(graph);
  if (shard.size() == 0) throw UsageError("empty client shard");
  if (cfg.epochs == 0 || cfg.batch_size == 0) throw UsageError("epochs and batch size must be positive");
  if (!(shard.sample_shape() == graph.input_shape())) {
    throw StructuralError("shard samples " + shard.sample_shape().to_string() + " do not match the model input " +
                          graph.input_shape().to_string());
  }
}

void check_plan(const BlockGraph& graph, const DecompositionPlan& plan) {
  if (plan.num_blocks != graph.num_blocks()) {
    throw StructuralError("plan covers " + std::to_string(plan.num_blocks) + " blocks, the model has " +
                          std::to_string(graph.num_blocks()));
  }
  plan.validate();
}

std::vector<int> labels_of(const Dataset& d, std::span<const std::size_t> rows) {
  std::vector<int> y;
  y.reserve(rows.size());
  for (std::size_t i : rows) y.push_back(d.y[i]);
  return y;
}

std::size_t count(const std::vector<Tensor<float>>& ts) {
  std::size_t n = 0;
  for (const auto& t : ts) n += t.size();
  return n;
}

// One model training one block range.
struct Unit {
  BlockRange range;
  bool auxiliary = false;  // use aux head instead of the shared head
  Block aux_layers;
  std::vector<Tensor<float>> aux_params;
  Sgd<float> sgd;
  double cost_mb = 0;

  Unit(const BlockGraph& graph, BlockRange r, const LocalTrainConfig& cfg, std::size_t group_index)
      : range(r), sgd(cfg.sgd) {
    auxiliary = cfg.head_strategy == HeadStrategy::Auxiliary && r.last < graph.num_blocks();
    if (auxiliary) {
      aux_layers = auxiliary_head(graph, r.last - 1);
      aux_params = init_block<float>(aux_layers, derive_seed(cfg.seed, {0xa0, group_index}));
    }
    cost_mb = estimate_training_unit_cost(graph, r.first, r.last, cfg.batch_size, sizeof(float),
                                          cfg.head_strategy)
                  .total_mb();
  }

  // Records the trainable part on `tape`; returns logits.
  Tensor<float> forward(Tape<float>& tape, const BlockGraph& graph, const Weights& w, Tensor<float> z) const {
    for (std::size_t j = range.first; j < range.last; ++j) z = tape.block(w, j, z, true);
    if (auxiliary) return tape.auxiliary(aux_layers, aux_params, z);
    if (!(z.shape().per_sample() == graph.head_input_shape())) z = tape.adapter(z, graph.head_input_shape());
    return tape.head(w, z, true);
  }

  // Applies gradients; returns the number of parameters updated.
  std::size_t step(Weights& w, Gradients<float>& grads) {
    std::vector<ParamGroup<float>> groups;
    std::size_t visited = 0;
    for (std::size_t j = range.first; j < range.last; ++j) {
      auto it = grads.body.find(j);
      if (it == grads.body.end()) throw UsageError("missing gradient for block " + std::to_string(j));
      groups.push_back({"block" + std::to_string(j), &w.body[j], &it->second});
      visited += count(w.body[j]);
    }
    if (auxiliary) {
      groups.push_back({"aux", &aux_params, &*grads.auxiliary});
      visited += count(aux_params);
    } else {
      groups.push_back({"head", &w.head, &*grads.head});
      visited += count(w.head);
    }
    sgd.step(groups);
    return visited;
  }
};

void check_budget(const LocalTrainConfig& cfg, double cost_mb, std::size_t copies = 1) {
  if (cfg.budget_mb && static_cast<double>(copies) * cost_mb > *cfg.budget_mb) {
    throw BudgetError("training unit needs " + std::to_string(static_cast<double>(copies) * cost_mb) +
                      " MB, budget is " + std::to_string(*cfg.budget_mb) + " MB");
  }
}

template <class F>
void for_each_batch(const std::vector<std::size_t>& order, std::size_t batch, F&& f) {
  for (std::size_t begin = 0; begin < order.size(); begin += batch) {
    const std::size_t end = std::min(order.size(), begin + batch);
    f(std::span<const std::size_t>(order.data() + begin, end - begin));
  }
}

}  // namespace

LocalResult client_update(const BlockGraph& graph, const Weights& global, const DecompositionPlan& plan,
                          const Dataset& shard, const LocalTrainConfig& cfg) {
  check_inputs(graph, global, shard, cfg);
  check_plan(graph, plan);
  LocalResult result;
  result.weights = global;
  Weights& w = result.weights;
  const auto epochs = split_epochs(cfg.epochs, plan.num_groups());
  std::size_t epoch = 0;
  for (std::size_t g = 0; g < plan.num_groups(); ++g) {
    Unit unit(graph, plan.groups[g], cfg, g);
    check_budget(cfg, unit.cost_mb);
    result.peak_memory_mb = std::max(result.peak_memory_mb, unit.cost_mb);
    // Earlier blocks are frozen from here on, so their outputs can be cached.
    std::optional<Tensor<float>> buffer;
    if (cfg.buffer_activations && unit.range.first > 0) buffer = forward_blocks(graph, w, shard.x, 0, unit.range.first);
    for (std::size_t e = 0; e < epochs[g]; ++e, ++epoch) {
      double loss_sum = 0;
      std::size_t batches = 0;
      for_each_batch(epoch_order(shard.size(), cfg.seed, epoch), cfg.batch_size, [&](std::span<const std::size_t> rows) {
        Tensor<float> z = buffer ? gather_rows(*buffer, rows) : gather_rows(shard.x, rows);
        if (!buffer && unit.range.first > 0) z = forward_blocks(graph, w, z, 0, unit.range.first);
        Tape<float> tape(graph);
        const auto labels = labels_of(shard, rows);
        auto loss = cross_entropy(unit.forward(tape, graph, w, std::move(z)), labels);
        auto grads = tape.backward(loss.grad);
        result.parameter_visits += unit.step(w, grads);
        ++result.steps;
        loss_sum += loss.value;
        ++batches;
      });
      result.log.push_back({g, epoch, loss_sum / static_cast<double>(batches), unit.sgd.lr(), unit.cost_mb, 0.0});
    }
  }
  return result;
}

LocalResult train_whole_model(const BlockGraph& graph, const Weights& global, const Dataset& shard,
                              const LocalTrainConfig& cfg) {
  check_inputs(graph, global, shard, cfg);
  LocalResult result;
  result.weights = global;
  Weights& w = result.weights;
  Sgd<float> sgd(cfg.sgd);
  const double cost = estimate_model_cost(graph, cfg.batch_size, sizeof(float)).total_mb();
  check_budget(cfg, cost);
  result.peak_memory_mb = cost;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0;
    std::size_t batches = 0;
    for_each_batch(epoch_order(shard.size(), cfg.seed, epoch), cfg.batch_size, [&](std::span<const std::size_t> rows) {
      Tape<float> tape(graph);
      Tensor<float> z = gather_rows(shard.x, rows);
      for (std::size_t j = 0; j < graph.num_blocks(); ++j) z = tape.block(w, j, z, true);
      const auto labels = labels_of(shard, rows);
      auto loss = cross_entropy(tape.head(w, z, true), labels);
      auto grads = tape.backward(loss.grad);
      std::vector<ParamGroup<float>> groups;
      for (std::size_t j = 0; j < graph.num_blocks(); ++j) {
        groups.push_back({"block" + std::to_string(j), &w.body[j], &grads.body.at(j)});
      }
      groups.push_back({"head", &w.head, &*grads.head});
      sgd.step(groups);
      result.parameter_visits += w.parameter_count();
      ++result.steps;
      loss_sum += loss.value;
      ++batches;
    });
    result.log.push_back({0, epoch, loss_sum / static_cast<double>(batches), sgd.lr(), cost, 0.0});
  }
  return result;
}

LocalResult baseline_update(const BlockGraph& scaled_graph, const Weights& global, const Dataset& shard,
                            const LocalTrainConfig& cfg) {
  return train_whole_model(scaled_graph, global, shard, cfg);
}

namespace {

Weights perturbed(const Weights& w, double scale, std::uint64_t seed) {
  Weights out = w;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  auto jitter = [&](Tensor<float>& t) {
    double mean = 0, var = 0;
    for (float v : t.values()) mean += v;
    mean /= static_cast<double>(t.size());
    for (float v : t.values()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(t.size())) * scale;
    if (sd == 0) return;
    for (auto& v : t.values()) v = static_cast<float>(v + sd * normal(rng));
  };
  for (auto& block : out.body) {
    for (auto& t : block) jitter(t);
  }
  for (auto& t : out.head) jitter(t);
  return out;
}

struct Student {
  Weights w;
  std::vector<BlockRange> schedule;  // groups in training order
  std::vector<std::size_t> epochs;   // epochs per group
  std::optional<Unit> unit;
  std::size_t group = 0;
};

}  // namespace

LocalResult mkd_update(const BlockGraph& graph, const Weights& global, const DecompositionPlan& plan,
                       const Dataset& shard, const LocalTrainConfig& cfg, const MkdConfig& mkd) {
  if (mkd.students == 0) throw UsageError("distillation needs at least one student");
  if (mkd.upload >= mkd.students) throw UsageError("uploaded student index out of range");
  if (!mkd.depthwise.empty() && mkd.depthwise.size() != mkd.students) {
    throw UsageError("depthwise flags must be given for every student");
  }
  check_inputs(graph, global, shard, cfg);
  check_plan(graph, plan);
  const std::size_t m_total = mkd.students;

  std::vector<Student> students(m_total);
  double peak = 0;
  for (std::size_t m = 0; m < m_total; ++m) {
    Student& s = students[m];
    if (m == 0 || mkd.init == StudentInit::Global) {
      s.w = global;
    } else if (mkd.init == StudentInit::Perturbed) {
      s.w = perturbed(global, mkd.perturbation, derive_seed(cfg.seed, {0x5e, m}));
    } else {
      s.w = init_weights<float>(graph, derive_seed(cfg.seed, {0xf5, m}));
    }
    const bool depthwise = !mkd.depthwise.empty() && mkd.depthwise[m];
    s.schedule = depthwise ? plan.groups : std::vector<BlockRange>{{0, graph.num_blocks()}};
    s.epochs = split_epochs(cfg.epochs, s.schedule.size());
    for (std::size_t g = 0; g < s.schedule.size(); ++g) {
      peak = std::max(peak, estimate_training_unit_cost(graph, s.schedule[g].first, s.schedule[g].last,
                                                        cfg.batch_size, sizeof(float), cfg.head_strategy)
                                .total_mb());
    }
  }
  // All students are resident at once.
  check_budget(cfg, peak, m_total);

  LocalResult result;
  result.peak_memory_mb = peak * static_cast<double>(m_total);
  std::vector<std::size_t> remaining(m_total, 0);
  const double pair_weight = m_total > 1 ? mkd.distillation_weight / static_cast<double>(m_total - 1) : 0.0;
  const std::size_t total_epochs = std::accumulate(students[0].epochs.begin(), students[0].epochs.end(), std::size_t{0});
  std::size_t max_epochs = total_epochs;
  for (const auto& s : students) max_epochs = std::max(max_epochs, std::accumulate(s.epochs.begin(), s.epochs.end(), std::size_t{0}));

  for (std::size_t epoch = 0; epoch < max_epochs; ++epoch) {
    // Advance each student's group schedule; a new group starts fresh.
    std::vector<bool> active(m_total, false);
    for (std::size_t m = 0; m < m_total; ++m) {
      Student& s = students[m];
      if (!s.unit || remaining[m] == 0) {
        const std::size_t next = s.unit ? s.group + 1 : 0;
        if (next >= s.schedule.size()) continue;
        s.group = next;
        s.unit.emplace(graph, s.schedule[next], cfg, next);
        remaining[m] = s.epochs[next];
      }
      active[m] = true;
    }
    double loss_sum = 0, kl_sum = 0;
    std::size_t batches = 0;
    for_each_batch(epoch_order(shard.size(), cfg.seed, epoch), cfg.batch_size, [&](std::span<const std::size_t> rows) {
      const auto labels = labels_of(shard, rows);
      const Tensor<float> x = gather_rows(shard.x, rows);
      std::vector<Tape<float>> tapes(m_total, Tape<float>(graph));
      std::vector<std::optional<Tensor<float>>> logits(m_total);
      for (std::size_t m = 0; m < m_total; ++m) {
        if (!active[m]) continue;
        Student& s = students[m];
        Tensor<float> z = s.unit->range.first > 0 ? forward_blocks(graph, s.w, x, 0, s.unit->range.first) : x;
        logits[m] = s.unit->forward(tapes[m], graph, s.w, std::move(z));
      }
      double batch_kl = 0;
      std::size_t pairs = 0;
      for (std::size_t m = 0; m < m_total; ++m) {
        if (!active[m]) continue;
        auto loss = cross_entropy(*logits[m], labels);
        for (std::size_t o = 0; o < m_total; ++o) {
          if (o == m || !active[o]) continue;
          auto kl = kl_logits(*logits[o], *logits[m]);
          kernels::active_kernels<float>().axpy(static_cast<float>(pair_weight), kl.grad.data(), loss.grad.data(),
                                                loss.grad.size());
          batch_kl += kl.value;
          ++pairs;
        }
        auto grads = tapes[m].backward(loss.grad);
        const std::size_t visited = students[m].unit->step(students[m].w, grads);
        if (m == mkd.upload) {
          result.parameter_visits += visited;
          ++result.steps;
          loss_sum += loss.value;
        }
      }
      kl_sum += pairs ? batch_kl / static_cast<double>(pairs) : 0.0;
      ++batches;
    });
    for (std::size_t m = 0; m < m_total; ++m) {
      if (active[m]) --remaining[m];
    }
    const auto& up = students[mkd.upload];
    if (active[mkd.upload]) {
      result.log.push_back({up.group, epoch, loss_sum / static_cast<double>(batches), up.unit->sgd.lr(),
                            result.peak_memory_mb, kl_sum / static_cast<double>(batches)});
    }
  }
  result.weights = std::move(students[mkd.upload].w);
  return result;
}

namespace {

constexpr char kSpillMagic[4] = {'F', 'D', 'S', 'P'};
constexpr std::uint32_t kSpillVersion = 1;

template <class V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V take(const std::string& bytes, std::size_t& pos) {
  if (pos + sizeof(V) > bytes.size()) throw IntegrityError("truncated spill record");
  V v;
  std::memcpy(&v, bytes.data() + pos, sizeof(V));
  pos += sizeof(V);
  return v;
}

}  // namespace

void write_spill(const std::filesystem::path& path, std::size_t block, const Tensor<float>& z) {
  std::ostringstream body(std::ios::binary);
  body.write(kSpillMagic, 4);
  put<std::uint32_t>(body, kSpillVersion);
  put<std::uint32_t>(body, dtype_code<float>());
  put<std::uint64_t>(body, block);
  write_tensor(body, z);
  const std::string bytes = body.str();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write spill file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  put<std::uint64_t>(out, fnv1a64(bytes.data(), bytes.size()));
  out.flush();
  if (!out) throw IoError("short write to spill file " + path.string());
}

Tensor<float> read_spill(const std::filesystem::path& path, std::size_t expected_block) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read spill file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 28) throw IntegrityError("truncated spill record " + path.string());
  std::size_t tail = bytes.size() - 8;
  const auto checksum = take<std::uint64_t>(bytes, tail);
  if (checksum != fnv1a64(bytes.data(), bytes.size() - 8)) throw IntegrityError("spill checksum mismatch " + path.string());
  if (std::memcmp(bytes.data(), kSpillMagic, 4) != 0) throw IntegrityError("not a spill record " + path.string());
  std::size_t pos = 4;
  if (take<std::uint32_t>(bytes, pos) != kSpillVersion) throw IntegrityError("unsupported spill version");
  if (take<std::uint32_t>(bytes, pos) != dtype_code<float>()) throw IntegrityError("spill element type mismatch");
  if (take<std::uint64_t>(bytes, pos) != expected_block) throw IntegrityError("spill record from the wrong block");
  std::istringstream rest(bytes.substr(pos, bytes.size() - 8 - pos), std::ios::binary);
  return read_tensor<float>(rest);
}

InferenceResult depthwise_inference(const BlockGraph& graph, const Weights& weights, const Tensor<float>& input,
                                    const std::filesystem::path& spill_dir) {
  weights.check_matches(graph);
  std::error_code ec;
  std::filesystem::create_directories(spill_dir, ec);
  if (ec) throw IoError("cannot create spill directory " + spill_dir.string() + ": " + ec.message());
  InferenceResult r;
  auto spill_path = [&](std::size_t j) { return spill_dir / ("block_" + std::to_string(j) + ".spill"); };
  Tensor<float> z;
  for (std::size_t j = 0; j < graph.num_blocks(); ++j) {
    // Only z_{j-1} (read back) and z_j are resident.
    Tensor<float> prev = j == 0 ? input : read_spill(spill_path(j - 1), j - 1);
    if (j > 0) {
      ++r.spill_reads;
      std::filesystem::remove(spill_path(j - 1), ec);
    }
    z = forward_blocks(graph, weights, prev, j, j + 1);
    write_spill(spill_path(j), j, z);
    ++r.spill_writes;
    r.spill_bytes += std::filesystem::file_size(spill_path(j));
  }
  r.logits = forward_head(graph, weights, z);
  std::filesystem::remove(spill_path(graph.num_blocks() - 1), ec);
  return r;
}

std::string train_record_json(const TrainRecord& r, std::size_t round, std::size_t client) {
  nlohmann::json j{{"round", round},   {"client", client}, {"group", r.group},
                   {"epoch", r.epoch}, {"loss", r.loss},   {"lr", r.lr},
                   {"peak_memory_mb", r.peak_memory_mb}, {"kl", r.kl}};
  return j.dump();
}

}  // namespace fedepth
