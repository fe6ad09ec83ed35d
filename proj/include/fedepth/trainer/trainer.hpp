#pragma once
// Client-side training engines.
//
// client_update trains the plan's groups in order. Group j starts from the
// current body weights and the head left by group j-1 (the received global
// head for the first group), reads its inputs by a frozen forward pass
// through every earlier block (or from a buffer filled once per group), and
// trains jointly with the shared head through the zero-pad adapter, or with a
// fresh auxiliary head that is discarded afterwards. The last group always
// trains the shared head. Local epochs are split across the groups, remainder
// to later groups, with at least one epoch per group. Momentum buffers start
// fresh in every group.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedepth/data/dataset.hpp"
#include "fedepth/decomposition/plan.hpp"
#include "fedepth/nn/optimizer.hpp"
#include "fedepth/nn/weights.hpp"

namespace fedepth {

using Weights = ModelWeights<float>;

struct LocalTrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  HeadStrategy head_strategy = HeadStrategy::SkipConnection;
  bool buffer_activations = false;
  SgdConfig sgd;  // lr is held constant within a local update
  std::uint64_t seed = 0;  // data order and auxiliary-head initialisation
  // When set, every group's training-unit cost is checked against it.
  std::optional<double> budget_mb;
};

struct TrainRecord {
  std::size_t group = 0;  // 0-based group index
  std::size_t epoch = 0;  // local epoch, counted across groups
  double loss = 0;        // mean minibatch loss over the epoch
  double lr = 0;
  double peak_memory_mb = 0;
  double kl = 0;  // mean mutual KL (distillation only)
};

struct LocalResult {
  Weights weights;
  std::vector<TrainRecord> log;
  std::size_t steps = 0;             // minibatch updates
  std::size_t parameter_visits = 0;  // sum over steps of trained parameter counts
  double peak_memory_mb = 0;
};

/// Epochs per group: total split as evenly as possible, remainder to later
/// groups, each group at least one.
std::vector<std::size_t> split_epochs(std::size_t total, std::size_t groups);

/// Minibatch order for one local epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

LocalResult client_update(const BlockGraph& graph, const Weights& global, const DecompositionPlan& plan,
                          const Dataset& shard, const LocalTrainConfig& cfg);

/// Ordinary whole-model local SGD.
LocalResult train_whole_model(const BlockGraph& graph, const Weights& global, const Dataset& shard,
                              const LocalTrainConfig& cfg);

/// Whole-model local SGD on a width-scaled model (the global weights passed
/// in must already match `scaled_graph`).
LocalResult baseline_update(const BlockGraph& scaled_graph, const Weights& global, const Dataset& shard,
                            const LocalTrainConfig& cfg);

enum class StudentInit {
  Global,     // every student starts from the received weights
  Perturbed,  // students after the first add small Gaussian noise
  Fresh,      // students after the first are freshly initialised
};

struct MkdConfig {
  std::size_t students = 2;  // M
  double distillation_weight = 1.0;
  std::size_t upload = 0;
  StudentInit init = StudentInit::Perturbed;
  double perturbation = 0.1;   // noise std relative to each tensor's std
  // Per student: train depth-wise with `plan` instead of whole-model.
  std::vector<bool> depthwise;
};

/// Mutual distillation: each student minimises CE + w/(M-1) sum_m' KL(h_m' || h_m)
/// with the other students' logits held constant. Students see the same
/// minibatches. Returns the uploaded student; the log's kl field holds the
/// epoch-mean mutual KL.
LocalResult mkd_update(const BlockGraph& graph, const Weights& global, const DecompositionPlan& plan,
                       const Dataset& shard, const LocalTrainConfig& cfg, const MkdConfig& mkd);

struct InferenceResult {
  Tensor<float> logits;
  std::size_t spill_writes = 0;
  std::size_t spill_reads = 0;
  std::size_t spill_bytes = 0;
};

/// Block-by-block inference that spills every block output to `spill_dir`
/// and reads it back for the next block; the head consumes the last output
/// directly. Throws IoError / IntegrityError on spill failures.
InferenceResult depthwise_inference(const BlockGraph& graph, const Weights& weights, const Tensor<float>& input,
                                    const std::filesystem::path& spill_dir);

/// Spill record: "FDSP", u32 version, u32 dtype, u64 block, tensor record,
/// u64 FNV-1a of everything before it.
void write_spill(const std::filesystem::path& path, std::size_t block, const Tensor<float>& z);
Tensor<float> read_spill(const std::filesystem::path& path, std::size_t expected_block);

/// JSON line for one record: {"round","client","group","epoch","loss","lr","peak_memory_mb","kl"}.
std::string train_record_json(const TrainRecord& r, std::size_t round, std::size_t client);

}  // namespace fedepth
