#pragma once
// Experiment configuration and assembly: dataset, model, partition, per-client
// memory budgets, decomposition plans and trainer kinds.
//
// Configs are JSON objects; every key is optional and unknown keys are
// rejected with a ConfigError naming the dotted path. Overrides use the same
// dotted paths ("federation.rounds=5"); values parse as JSON, falling back to
// a plain string.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedepth/data/partition.hpp"
#include "fedepth/federation/federation.hpp"
#include "fedepth/memory/memory.hpp"

namespace fedepth {

struct ModelConfig {
  std::string arch = "mlp";  // mlp | preresnet20 | spec
  std::vector<std::size_t> hidden{32, 32, 32};
  std::size_t base_width = 16;
  std::size_t norm_groups = 4;
  std::filesystem::path spec;  // model-spec file for arch "spec"
  double width_ratio = 1.0;    // width of the trained global model
};

// Clients are assigned to budget groups round-robin: client k joins group
// k mod G. The capacity is given directly, as the whole-model training cost
// of the ×r-width model, as a multiple of the trained model's whole-model
// cost, or as the smallest capacity whose plan has exactly `target_groups`
// groups.
struct BudgetGroupConfig {
  std::string name;
  std::optional<double> capacity_mb;
  std::optional<double> width_ratio;
  std::optional<double> model_multiple;
  std::optional<std::size_t> target_groups;
  Scenario scenario = Scenario::Fair;
  TrainerKind trainer = TrainerKind::FeDepth;
  std::size_t students = 2;  // mkd
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string dataset = "synthetic-gaussian-mixture";
  GaussianMixtureOptions mixture;
  ImageSetOptions images;
  ModelConfig model;
  PartitionSpec partition;  // clients and seed are taken from federation / seed
  FederationConfig federation;
  LocalTrainConfig local;
  std::vector<BudgetGroupConfig> budgets;  // empty: unconstrained whole-model training
  double skip_fraction = 0;  // share of clients forced to skip leading blocks
  std::size_t skip_blocks = 1;
  MkdConfig mkd;  // students / upload / depthwise are set per group
  bool mkd_mixed = false;  // students after the uploaded one train depth-wise
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t probe_size = 512;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies "a.b.c=value" to a JSON config in place. Throws ConfigError for a
/// malformed override.
void apply_override(nlohmann::json& config, const std::string& assignment);

BlockGraph build_model(const ModelConfig& m, const TensorShape& input, std::size_t classes);

/// Smallest capacity (among the graph's training-unit costs) whose greedy plan
/// has exactly `groups` groups and no skipped prefix; nullopt if none.
std::optional<double> capacity_for_groups(const BlockGraph& graph, std::size_t groups, std::size_t batch,
                                          HeadStrategy strategy);

/// Plan with the first `skip` blocks forced frozen, the rest packed greedily.
DecompositionPlan decompose_skipping(const BlockGraph& graph, std::size_t skip, const MemoryBudget& budget,
                                     std::size_t batch, HeadStrategy strategy);

struct Experiment {
  ExperimentConfig config;
  BlockGraph full_graph;  // before width scaling
  BlockGraph graph;       // the trained global model
  DatasetSplit data;
  Partition partition;
  std::vector<ClientState> clients;
  std::vector<MemoryBudget> budgets;  // per client
  Weights initial;
};

Experiment build_experiment(const ExperimentConfig& config);

}  // namespace fedepth
