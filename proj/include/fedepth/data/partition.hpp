#pragma once
// Non-IID client shards.
//
// Dirichlet: per class, client proportions ~ Dir(lambda), with clients that
// already hold n/K samples excluded from later classes; the draw repeats
// until every client holds at least min(10, n/K) samples. The balanced
// variant then moves samples from over-quota to under-quota clients (donor's
// most abundant class first); quotas are n/K with the first n mod K clients
// taking one extra.
//
// Pathological: every client gets Lambda distinct labels; label slots are
// handed out so each class is held by floor(K*Lambda/C) or ceil(K*Lambda/C)
// clients, and a class's samples are split evenly across its holders.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace fedepth {

enum class PartitionFamily { DirichletBalanced, DirichletUnbalanced, Pathological };
std::string_view partition_family_name(PartitionFamily f);
PartitionFamily parse_partition_family(std::string_view name);

struct PartitionSpec {
  PartitionFamily family = PartitionFamily::DirichletBalanced;
  double lambda = 1.0;                 // Dirichlet families
  std::size_t labels_per_client = 2;   // pathological
  std::size_t clients = 1;
  std::uint64_t seed = 0;
  // Share of each class entering the partition (stratified); the rest is
  // returned as holdout.
  double train_fraction = 1.0;
};

struct Shard {
  std::size_t client = 0;
  std::vector<std::size_t> indices;
  std::vector<std::size_t> histogram;  // per class
};

struct Partition {
  std::vector<Shard> shards;
  std::vector<std::size_t> holdout;
};

Partition partition_dirichlet(std::span<const int> labels, std::size_t classes, const PartitionSpec& spec);
Partition partition_pathological(std::span<const int> labels, std::size_t classes, const PartitionSpec& spec);
/// Dispatches on spec.family.
Partition partition(std::span<const int> labels, std::size_t classes, const PartitionSpec& spec);

nlohmann::json shards_to_json(const std::vector<Shard>& shards);
/// Recomputes histograms from `labels`; throws StructuralError on malformed input.
std::vector<Shard> shards_from_json(const nlohmann::json& j, std::span<const int> labels, std::size_t classes);

/// CSV rows "client,class,count" for every nonzero count.
void write_label_histogram_csv(std::ostream& out, const std::vector<Shard>& shards);

}  // namespace fedepth
