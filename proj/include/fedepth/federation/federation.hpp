#pragma once
// Server loop: client sampling, broadcast, parallel local updates on a
// read-only snapshot, weighted aggregation and per-round bookkeeping.
//
// Round t trains from W^t and produces W^{t+1}. Records are indexed by the
// weights they describe: record 0 evaluates W^0, record t+1 follows round t.
// Sampling and every client's local seed derive from (seed, round, client),
// so a run resumed at round t continues exactly as an uninterrupted one.

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fedepth/analysis/metrics.hpp"
#include "fedepth/nn/errors.hpp"
#include "fedepth/trainer/trainer.hpp"

namespace fedepth {

struct FederationConfig {
  std::size_t clients = 1;     // K
  double participation = 1.0;  // gamma
  std::size_t rounds = 1;      // R
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;  // the last round is always evaluated
  bool drop_tolerant = false;
  std::size_t workers = 1;     // parallel client updates per round
  bool cosine_rounds = false;  // local lr follows a cosine over rounds

  void validate() const;
};

/// ceil(gamma * K), at least 1.
std::size_t sample_size(std::size_t clients, double participation);

/// Uniform sample without replacement, sorted ascending.
std::vector<std::size_t> sample_clients(std::size_t clients, double participation, std::uint64_t seed);

/// sum_k (p_k / sum p) W_k, accumulated in double. Throws UsageError if
/// empty, on non-positive weights or a size mismatch, StructuralError if any
/// update's shapes differ from the first.
template <class T>
ModelWeights<T> aggregate(std::span<const ModelWeights<T>> updates, std::span<const double> weights);

enum class TrainerKind { FeDepth, FeDepthPartial, Mkd, Baseline };

std::string_view trainer_kind_name(TrainerKind k);
TrainerKind parse_trainer_kind(std::string_view name);

struct ClientState {
  std::size_t id = 0;
  Dataset shard;
  double weight = 0;  // p_k
  std::optional<double> budget_mb;
  DecompositionPlan plan;
  TrainerKind kind = TrainerKind::FeDepth;
  MkdConfig mkd;      // used by TrainerKind::Mkd
  std::string group;  // label for per-group statistics
  std::vector<std::size_t> histogram;  // label counts, for client accuracy
};

/// Sets p_k = n_k / sum n and fills the label histograms.
void assign_sample_weights(std::vector<ClientState>& clients);

struct ClientOutcome {
  std::size_t client = 0;
  bool ok = false;
  std::string error;
  std::size_t steps = 0;
  double final_loss = 0;
  double peak_memory_mb = 0;
  std::vector<TrainRecord> log;
};

struct RoundRecord {
  std::size_t round = 0;  // index of the weights this record describes
  std::vector<std::size_t> sampled;
  std::vector<ClientOutcome> clients;  // in sampled order
  std::vector<std::size_t> aggregated;
  double lr = 0;
  std::optional<EvalReport> eval;
};

struct RunResult {
  Weights weights;
  std::vector<RoundRecord> records;
};

struct RunHooks {
  // Called after every record, with the weights it describes.
  std::function<void(const RoundRecord&, const Weights&)> on_record;
};

/// Global test accuracy, per-client accuracy from label histograms, and
/// their population std (0 for a single client).
EvalReport evaluate(const BlockGraph& graph, const Weights& weights, const Dataset& test,
                    const std::vector<ClientState>& clients, std::size_t round);

/// Runs rounds [first_round, R). first_round > 0 resumes from `start`, which
/// must be W^{first_round}; no record is produced for it.
RunResult run_federation(const BlockGraph& graph, const FederationConfig& config, const std::vector<ClientState>& clients,
                         const LocalTrainConfig& local, const Weights& start, const Dataset& test,
                         std::size_t first_round = 0, const RunHooks& hooks = {});

/// Per-round CSV: round,global_acc,fairness,participants,dropped,mean_loss,
/// peak_memory_mb, then acc_<group> for every group in order.
void write_metrics_header(std::ostream& out, const std::vector<std::string>& groups);
void write_metrics_row(std::ostream& out, const RoundRecord& r, const std::vector<ClientState>& clients,
                       const std::vector<std::string>& groups);

/// Distinct client groups in first-appearance order.
std::vector<std::string> client_groups(const std::vector<ClientState>& clients);

}  // namespace fedepth
